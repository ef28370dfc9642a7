"""Classical patch features: orientation FA and mean transmittance."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signal import ParameterMaps


def orientation_vectors(direction_deg, inclination_deg) -> np.ndarray:
    """Unit vectors ``(cos a cos phi, cos a sin phi, sin a)``, last axis of length 3."""
    phi = np.deg2rad(direction_deg)
    alpha = np.deg2rad(inclination_deg)
    ca = np.cos(alpha)
    return np.stack([ca * np.cos(phi), ca * np.sin(phi), np.sin(alpha)], axis=-1)


def scatter_matrix(samples) -> np.ndarray:
    """Second-moment matrix ``(1/n) sum v v^T`` over axis -2 of ``(..., n, 3)``."""
    v = np.asarray(samples, dtype=float)
    return np.einsum("...ni,...nj->...ij", v, v) / v.shape[-2]


def fa_from_eigenvalues(evals) -> np.ndarray:
    evals = np.asarray(evals, dtype=float)
    dev = evals - evals.mean(axis=-1, keepdims=True)
    num = np.sqrt(np.sum(dev**2, axis=-1))
    den = np.sqrt(np.sum(evals**2, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.sqrt(1.5) * num / den
    return np.clip(np.nan_to_num(fa), 0.0, 1.0)


def fractional_anisotropy(samples) -> float | np.ndarray:
    """FA of axial orientation samples ``(..., n, 3)``.

    The sign of each sample is irrelevant because only ``v v^T`` enters.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-2] < 3:
        raise ValueError("fractional anisotropy needs at least 3 samples")
    evals = np.linalg.eigvalsh(scatter_matrix(samples))
    fa = fa_from_eigenvalues(evals)
    return float(fa) if fa.ndim == 0 else fa


def _window_mean(img: np.ndarray, patch: int, stride: int) -> np.ndarray:
    win = sliding_window_view(img, (patch, patch))[::stride, ::stride]
    return win.mean(axis=(-2, -1))


def grid_shape(shape, patch: int, stride: int) -> tuple[int, int]:
    h, w = shape
    if h < patch or w < patch:
        raise ValueError(f"raster {h}x{w} smaller than one {patch}px patch")
    return (h - patch) // stride + 1, (w - patch) // stride + 1


def baseline_feature_maps(maps: ParameterMaps, patch_px: int = 64, stride: int | None = None) -> np.ndarray:
    """``[2, H', W']`` float32: channel 0 FA over the patch, channel 1 mean transmittance."""
    stride = stride or patch_px
    it = np.asarray(maps.transmittance, dtype=float)
    grid_shape(it.shape, patch_px, stride)
    v = orientation_vectors(maps.direction, maps.inclination)
    S = np.empty(_window_mean(it, patch_px, stride).shape + (3, 3))
    for i in range(3):
        for j in range(i, 3):
            S[..., i, j] = S[..., j, i] = _window_mean(v[..., i] * v[..., j], patch_px, stride)
    fa = fa_from_eigenvalues(np.linalg.eigvalsh(S))
    return np.stack([fa, _window_mean(it, patch_px, stride)]).astype(np.float32)
