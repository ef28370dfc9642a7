"""PLI measurement model.

A linear polarizer rotated through angles rho records, per pixel, the profile

    I(rho) = I_T / 2 * (1 + r * sin(2 * (rho - phi)))

with transmittance ``I_T``, in-plane fiber direction ``phi`` (axial, degrees
modulo 180) and retardation ``r``.  Inclination is obtained by inverting the
transmittance-weighted retardance model

    r = sin(delta0 * w(I_T) * cos(alpha)**2),
    w(I_T) = clip((I_ref - I_T) / (I_ref - I_min), 0, 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGENERATE_TOL = 1e-9
DEFAULT_N_ANGLES = 18


@dataclass(frozen=True)
class InclinationModel:
    delta0: float = np.pi / 2
    i_ref: float = 100.0
    i_min: float = 20.0

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not self.i_min < self.i_ref:
            raise ValueError("need i_min < i_ref")

    def weight(self, transmittance):
        w = (self.i_ref - np.asarray(transmittance, dtype=float)) / (self.i_ref - self.i_min)
        return np.clip(w, 0.0, 1.0)


@dataclass
class ProfileFit:
    transmittance: np.ndarray
    direction: np.ndarray
    retardation: np.ndarray
    degenerate: np.ndarray


@dataclass
class ParameterMaps:
    """Transmittance, direction (deg), retardation and inclination (deg) rasters."""

    transmittance: np.ndarray
    direction: np.ndarray
    retardation: np.ndarray
    inclination: np.ndarray

    CHANNELS = ("transmittance", "direction", "retardation", "inclination")

    def to_array(self, dtype=np.float32) -> np.ndarray:
        return np.stack([getattr(self, c) for c in self.CHANNELS]).astype(dtype)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ParameterMaps":
        arr = np.asarray(arr)
        if arr.shape[0] != 4:
            raise ValueError(f"expected 4 channels in axis 0, got {arr.shape[0]}")
        return cls(*(arr[i] for i in range(4)))

    @property
    def shape(self):
        return self.transmittance.shape

    def section(self, index: int) -> "ParameterMaps":
        """Slice a stacked ``[Y, H, W]`` volume of maps down to one section."""
        return ParameterMaps(*(getattr(self, c)[index] for c in self.CHANNELS))


def rotation_angles(n: int = DEFAULT_N_ANGLES) -> np.ndarray:
    """``n`` equally spaced polarizer angles in degrees over [0, 180)."""
    if n < 3:
        raise ValueError("need at least 3 rotation angles")
    return np.arange(n) * (180.0 / n)


def forward_profile(transmittance, direction, retardation, angles) -> np.ndarray:
    """Evaluate the intensity profile; angle axis is prepended to the map shape."""
    rho = np.deg2rad(np.asarray(angles, dtype=float))
    rho = rho.reshape((-1,) + (1,) * np.ndim(transmittance))
    phi = np.deg2rad(direction)
    return 0.5 * np.asarray(transmittance) * (1.0 + retardation * np.sin(2.0 * (rho - phi)))


def forward_retardation(transmittance, inclination, model: InclinationModel):
    alpha = np.deg2rad(inclination)
    return np.sin(model.delta0 * model.weight(transmittance) * np.cos(alpha) ** 2)


def fit_profile(intensities, angles) -> ProfileFit:
    """Discrete harmonic analysis of rotation profiles.

    Parameters
    ----------
    intensities : array_like, shape (N, ...)
        Intensities, the rotation axis first.
    angles : array_like, shape (N,)
        Polarizer angles in degrees, equally spaced over [0, 180).
    """
    intensities = np.asarray(intensities, dtype=float)
    angles = np.asarray(angles, dtype=float)
    n = angles.shape[0]
    if n < 3:
        raise ValueError("need at least 3 rotation angles")
    if intensities.shape[0] != n:
        raise ValueError("intensity and angle counts differ")
    rho = np.deg2rad(angles).reshape((-1,) + (1,) * (intensities.ndim - 1))
    mean = intensities.mean(axis=0)
    if np.any(mean <= 0):
        raise ValueError("all-zero intensity profile")
    b = (2.0 / n) * np.sum(intensities * np.sin(2 * rho), axis=0)
    c = (2.0 / n) * np.sum(intensities * np.cos(2 * rho), axis=0)
    r = np.clip(np.hypot(b, c) / mean, 0.0, 1.0)
    phi = np.rad2deg(0.5 * np.arctan2(-c, b)) % 180.0
    degenerate = r < DEGENERATE_TOL
    phi = np.where(degenerate, 0.0, phi)
    r = np.where(degenerate, 0.0, r)
    # % can return 180.0 exactly for tiny negative inputs
    phi = np.where(phi >= 180.0, 0.0, phi)
    return ProfileFit(2.0 * mean, phi, r, degenerate)


def inclination(fit: ProfileFit, model: InclinationModel) -> np.ndarray:
    """Inclination in degrees from a profile fit; 90 where undetermined."""
    w = model.weight(fit.transmittance)
    valid = (w > 0) & ~np.asarray(fit.degenerate)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.arcsin(np.clip(fit.retardation, 0.0, 1.0)) / (model.delta0 * w)
    ratio = np.clip(np.where(valid, ratio, 0.0), 0.0, 1.0)
    alpha = np.rad2deg(np.arccos(np.sqrt(ratio)))
    return np.where(valid, alpha, 90.0)


def hsv_to_rgb(h, s, v):
    """Vectorized HSV to RGB; hue in degrees, s and v in [0, 1]."""
    h = np.mod(np.asarray(h, dtype=float), 360.0) / 60.0
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def fom_color(direction, inclination_deg) -> np.ndarray:
    """Fiber orientation map colours: hue = 2*phi, saturation = value = 1 - alpha/90."""
    sv = 1.0 - np.clip(np.asarray(inclination_deg, dtype=float), 0, 90) / 90.0
    rgb = hsv_to_rgb(2.0 * np.asarray(direction, dtype=float), sv, sv)
    return np.round(255.0 * rgb).astype(np.uint8)


def derive_maps(stack, model: InclinationModel | None = None, angles=None) -> ParameterMaps:
    """Per-pixel profile fit and inclination for an ``[N, ...]`` intensity stack."""
    stack = np.asarray(stack, dtype=float)
    model = model or InclinationModel()
    if angles is None:
        angles = rotation_angles(stack.shape[0])
    fit = fit_profile(stack, angles)
    alpha = inclination(fit, model)
    return ParameterMaps(fit.transmittance, fit.direction, fit.retardation, alpha)
