"""Encoder input channels, patch extraction and PLI-specific augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from ..signal import ParameterMaps

FULL = "full"
IT_ONLY = "it_only"
PHIR_ONLY = "phir_only"
MODALITY_CHANNELS = {
    FULL: ("it", "r", "sin2phi", "cos2phi"),
    IT_ONLY: ("it",),
    PHIR_ONLY: ("r", "sin2phi", "cos2phi"),
}


def channel_names(modality: str) -> tuple:
    try:
        return MODALITY_CHANNELS[modality]
    except KeyError:
        raise ValueError(f"unknown modality {modality!r}; expected one of {tuple(MODALITY_CHANNELS)}") from None


@dataclass(frozen=True)
class Normalization:
    """Min/max scaling of transmittance to [0, 1]."""

    it_min: float
    it_max: float

    def apply(self, it):
        span = self.it_max - self.it_min
        if span <= 0:
            return np.zeros_like(np.asarray(it, dtype=float))
        return (np.asarray(it, dtype=float) - self.it_min) / span


def fit_normalization(maps: ParameterMaps, sections=None) -> Normalization:
    """Transmittance range over ``sections`` of a ``(Y, H, W)`` map volume."""
    it = np.asarray(maps.transmittance)
    if sections is not None:
        it = it[np.asarray(sections)]
    return Normalization(float(it.min()), float(it.max()))


def modality_channels(maps: ParameterMaps, modality: str, norm: Normalization) -> np.ndarray:
    """Stack encoder channels; the channel axis goes before the two raster axes.

    Direction enters as ``(sin 2phi, cos 2phi)`` and is zeroed where the
    retardation vanishes (direction undefined).
    """
    names = channel_names(modality)
    r = np.asarray(maps.retardation, dtype=float)
    two_phi = np.deg2rad(2.0 * np.asarray(maps.direction, dtype=float))
    defined = r > 0
    source = {
        "it": lambda: norm.apply(maps.transmittance),
        "r": lambda: r,
        "sin2phi": lambda: np.where(defined, np.sin(two_phi), 0.0),
        "cos2phi": lambda: np.where(defined, np.cos(two_phi), 0.0),
    }
    return np.stack([source[n]() for n in names], axis=-3).astype(np.float32)


def extended_size(patch_px: int) -> int:
    """Window side that contains a ``patch_px`` square under any rotation."""
    e = int(math.ceil(math.sqrt(2.0) * (patch_px - 1))) + 2
    if (e - patch_px) % 2:
        e += 1
    return e


def window_origin(center, size: int) -> np.ndarray:
    return np.floor(np.asarray(center, dtype=float) - 0.5 * (size - 1) + 0.5).astype(np.int64)


def extract_windows(volume: np.ndarray, locations, size: int) -> np.ndarray:
    """Cut ``size x size`` windows from a ``[Y, C, X, Z]`` channel volume.

    ``locations`` are ``(n, 3)`` voxel coordinates ``(x, y, z)``; in-plane
    centres are rounded to the pixel grid.
    """
    loc = np.asarray(locations, dtype=float).reshape(-1, 3)
    Y, C, X, Z = volume.shape
    ox = window_origin(loc[:, 0], size)
    oz = window_origin(loc[:, 2], size)
    ys = np.rint(loc[:, 1]).astype(np.int64)
    if (ox.min() < 0 or oz.min() < 0 or ox.max() + size > X or oz.max() + size > Z
            or ys.min() < 0 or ys.max() >= Y):
        raise IndexError("window outside volume")
    ar = np.arange(size)
    xi = (ox[:, None] + ar)[:, :, None]
    zi = (oz[:, None] + ar)[:, None, :]
    out = volume[ys[:, None, None], :, xi, zi]  # (n, size, size, C)
    return np.moveaxis(out, -1, 1)


@dataclass(frozen=True)
class AugmentConfig:
    max_blur_sigma: float = 1.0
    contrast_range: tuple = (0.8, 1.25)


def augment_with(patch: np.ndarray, channels: tuple, out_px: int, theta_deg: float = 0.0,
                 blur_sigma: float = 0.0, contrast: float = 1.0) -> np.ndarray:
    """Apply a given rotation, blur and transmittance contrast factor.

    ``patch`` is ``[C, E, E]`` with ``E >= extended_size(out_px)``; the result
    is the central ``out_px`` square of the rotated window.  Rotating the
    image content by ``theta`` turns fiber directions by ``theta`` as well, so
    the ``(sin 2phi, cos 2phi)`` pair is rotated by ``2 theta``.
    """
    patch = np.asarray(patch, dtype=np.float64)
    E = patch.shape[-1]
    th = math.radians(theta_deg)
    c, s = math.cos(th), math.sin(th)
    g = np.arange(out_px) - 0.5 * (out_px - 1)
    px, pz = np.meshgrid(g, g, indexing="ij")
    # out(p) = in(R(-theta) p)
    qx = c * px + s * pz + 0.5 * (E - 1)
    qz = -s * px + c * pz + 0.5 * (E - 1)
    if theta_deg % 360.0 == 0.0:
        lo = (E - out_px) // 2
        out = patch[:, lo : lo + out_px, lo : lo + out_px].copy()
    else:
        coords = np.stack([qx, qz])
        out = np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="nearest") for ch in patch])

    if "sin2phi" in channels:
        i_s, i_c = channels.index("sin2phi"), channels.index("cos2phi")
        c2, s2 = math.cos(2 * th), math.sin(2 * th)
        sn, cs = out[i_s].copy(), out[i_c].copy()
        out[i_s] = sn * c2 + cs * s2
        out[i_c] = cs * c2 - sn * s2

    if blur_sigma > 0:
        out = np.stack([ndimage.gaussian_filter(ch, blur_sigma, mode="nearest") for ch in out])

    if "it" in channels and contrast != 1.0:
        out[channels.index("it")] *= contrast
    return out.astype(np.float32)


def draw_augmentation(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> tuple[float, float, float]:
    theta = rng.uniform(0.0, 360.0)
    sigma = rng.uniform(0.0, cfg.max_blur_sigma)
    contrast = rng.uniform(*cfg.contrast_range)
    return theta, sigma, contrast


def augment(patch: np.ndarray, rng: np.random.Generator, channels: tuple, out_px: int,
            cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    theta, sigma, contrast = draw_augmentation(rng, cfg)
    return augment_with(patch, channels, out_px, theta, sigma, contrast)


def _gaussian_kernels(sigmas: np.ndarray, radius: int) -> np.ndarray:
    """Per-sample 1-D kernels matching ``ndimage.gaussian_filter`` (truncate=4)."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.zeros((len(sigmas), x.size))
    for i, sd in enumerate(sigmas):
        if sd <= 0:
            k[i, radius] = 1.0
            continue
        r = int(4.0 * sd + 0.5)
        w = np.exp(-0.5 * (x / sd) ** 2) * (np.abs(x) <= r)
        k[i] = w / w.sum()
    return k


def augment_batch(windows: np.ndarray, channels: tuple, out_px: int, thetas, sigmas, contrasts) -> np.ndarray:
    """Batched ``augment_with``: bilinear rotation, direction fix, blur, contrast.

    ``windows`` is ``[B, C, E, E]``; one parameter triple per window.
    """
    x = torch.from_numpy(np.ascontiguousarray(windows, dtype=np.float32))
    B, C, E, _ = x.shape
    th = torch.from_numpy(np.deg2rad(np.asarray(thetas, dtype=np.float64))).float()
    c, s = torch.cos(th), torch.sin(th)
    g = torch.arange(out_px, dtype=torch.float32) - 0.5 * (out_px - 1)
    px, pz = torch.meshgrid(g, g, indexing="ij")
    qx = c[:, None, None] * px + s[:, None, None] * pz
    qz = -s[:, None, None] * px + c[:, None, None] * pz
    half = 0.5 * (E - 1)
    # grid_sample wants (width, height) = (z, x) normalized to [-1, 1]
    grid = torch.stack([qz / half, qx / half], dim=-1)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=True)

    if "sin2phi" in channels:
        i_s, i_c = channels.index("sin2phi"), channels.index("cos2phi")
        c2, s2 = torch.cos(2 * th)[:, None, None], torch.sin(2 * th)[:, None, None]
        sn, cs = out[:, i_s].clone(), out[:, i_c].clone()
        out[:, i_s] = sn * c2 + cs * s2
        out[:, i_c] = cs * c2 - sn * s2

    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas > 0):
        radius = int(4.0 * sigmas.max() + 0.5)
        k = torch.from_numpy(_gaussian_kernels(sigmas, radius)).float()
        S = out_px
        pad = F.pad(out, (radius, radius, radius, radius), mode="replicate")
        rows = sum(k[:, j, None, None, None] * pad[:, :, j : j + S, :] for j in range(2 * radius + 1))
        out = sum(k[:, j, None, None, None] * rows[:, :, :, j : j + S] for j in range(2 * radius + 1))

    if "it" in channels:
        out[:, channels.index("it")] *= torch.from_numpy(np.asarray(contrasts, dtype=np.float32))[:, None, None]
    return out.numpy()


def center_crop(patch: np.ndarray, out_px: int) -> np.ndarray:
    E = patch.shape[-1]
    lo = (E - out_px) // 2
    return patch[..., lo : lo + out_px, lo : lo + out_px]
