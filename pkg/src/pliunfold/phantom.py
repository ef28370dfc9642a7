"""Synthetic rolled-sheet phantom with ground truth.

The folded layer is an Archimedean spiral in the section plane ``(x, z)``,
extruded along the section axis ``y`` with a slow drift of the spiral centre
(so the sheet is cut obliquely).  The proximal-distal parameter ``v`` is the
normalized arc length along the spiral and is partitioned into contiguous
bands, the stand-ins for subfields.  Each band has its own fiber orientation
statistics and transmittance level.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .mesh import SurfacePair, grid_faces
from .signal import (
    InclinationModel,
    ParameterMaps,
    forward_profile,
    forward_retardation,
    rotation_angles,
)

BACKGROUND = 255


@dataclass(frozen=True)
class BandAppearance:
    direction_offset: float  # deg, relative to the in-plane sheet tangent
    inclination: float  # deg, band mean
    kappa: float  # orientation concentration, inf for no dispersion
    transmittance: float
    transmittance_sd: float


# Three orientation groups; within a group the bands differ only in
# transmittance texture, which a patch mean cannot see.
DEFAULT_BANDS = (
    BandAppearance(0.0, 30.0, 30.0, 50.0, 2.0),
    BandAppearance(0.0, 30.0, 30.0, 50.0, 8.0),
    BandAppearance(40.0, 45.0, 10.0, 58.0, 2.0),
    BandAppearance(40.0, 45.0, 10.0, 58.0, 8.0),
    BandAppearance(80.0, 20.0, 30.0, 66.0, 2.0),
    BandAppearance(80.0, 20.0, 30.0, 66.0, 8.0),
)


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple = (192, 64, 192)  # (X, Y sections, Z) voxels
    pixel_um: float = 10.4
    section_um: float = 60.0
    center: tuple = (96.0, 96.0)  # spiral centre (x, z) in px at the middle section
    turns: float = 1.25
    radius_range: tuple = (25.0, 75.0)  # px
    drift_px: float = 0.25  # centre shift along x per section
    layer_um: float = 230.0
    bands: tuple = DEFAULT_BANDS
    band_edges: tuple | None = None  # None: equal widths
    background_transmittance: float = 120.0
    background_sd: float = 2.0
    section_gain_sd: float = 0.1  # log-sd of a per-section transmittance gain
    texture_px: float = 1.0  # in-plane correlation length of transmittance noise
    chatter_amplitude: float = 0.3  # mean relative amplitude of per-section stripes
    chatter_period_px: tuple = (3.0, 8.0)
    mesh_shape: tuple = (64, 128)  # (n_u, n_v)
    signal_model: InclinationModel = field(default_factory=InclinationModel)
    seed: int = 0

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def layer_px(self) -> float:
        return self.layer_um / self.pixel_um

    def edges(self) -> np.ndarray:
        if self.band_edges is None:
            return np.linspace(0.0, 1.0, self.n_bands + 1)
        return np.asarray(self.band_edges, dtype=float)

    def validate(self) -> None:
        if self.n_bands < 2:
            raise ValueError("need at least 2 bands")
        e = self.edges()
        if len(e) != self.n_bands + 1 or e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
            raise ValueError("band edges must increase from 0 to 1, one interval per band")
        r0, r1 = self.radius_range
        if not 0 < r0 < r1:
            raise ValueError("radius range must satisfy 0 < r0 < r1")
        X, Y, Z = self.shape
        half = 0.5 * self.layer_px
        drift = abs(self.drift_px) * 0.5 * (Y - 1)
        cx, cz = self.center
        if (cx - r1 - half - drift < 0 or cx + r1 + half + drift > X - 1
                or cz - r1 - half < 0 or cz + r1 + half > Z - 1):
            raise ValueError("layer does not fit grid")
        spacing = (r1 - r0) / self.turns
        if self.section_gain_sd < 0 or self.texture_px < 0 or self.chatter_amplitude < 0:
            raise ValueError("gain, texture and chatter parameters must be non-negative")
        p0, p1 = self.chatter_period_px
        if not 2.0 <= p0 <= p1:
            raise ValueError("chatter periods must satisfy 2 <= min <= max")
        if self.turns > 1 and spacing <= self.layer_px:
            raise ValueError("spiral turns overlap: turn spacing must exceed layer thickness")

    def with_seed(self, seed: int) -> "PhantomSpec":
        return replace(self, seed=seed)


@dataclass
class PhantomTruth:
    spec: PhantomSpec
    maps: ParameterMaps  # arrays of shape (Y, X, Z), float64
    labels: np.ndarray  # (Y, X, Z) uint8, BACKGROUND outside the layer
    surfaces: SurfacePair
    section_gain: np.ndarray  # (Y,)

    @property
    def vertex_labels(self) -> np.ndarray:
        return self.surfaces.labels


class Spiral:
    """Arc-length parametrized Archimedean spiral relative to its centre."""

    def __init__(self, r0: float, r1: float, turns: float, n_dense: int = 20000):
        self.r0, self.r1 = r0, r1
        self.theta_max = 2 * np.pi * turns
        theta = np.linspace(0.0, self.theta_max, n_dense)
        pts = self.point(theta)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = s[-1]
        self._theta = theta
        self._v = s / s[-1]

    def radius(self, theta):
        return self.r0 + (self.r1 - self.r0) * theta / self.theta_max

    def point(self, theta):
        r = self.radius(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def tangent(self, theta):
        dr = (self.r1 - self.r0) / self.theta_max
        r = self.radius(theta)
        t = np.stack([dr * np.cos(theta) - r * np.sin(theta), dr * np.sin(theta) + r * np.cos(theta)], -1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def normal(self, theta):
        """Unit in-plane normal pointing away from the spiral centre."""
        t = self.tangent(theta)
        return np.stack([t[..., 1], -t[..., 0]], axis=-1)

    def theta_of_v(self, v):
        return np.interp(v, self._v, self._theta)

    def v_of_theta(self, theta):
        return np.interp(theta, self._theta, self._v)


# streams: 0 section gains, 1 voxel texture, 2 measurement noise, 3 chatter
def _section_rng(seed: int, stream: int, section: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, section])))


def band_of(v, edges) -> np.ndarray:
    b = np.searchsorted(edges, v, side="right") - 1
    return np.clip(b, 0, len(edges) - 2)


def _orientation_vectors(phi_deg, alpha_deg):
    phi = np.deg2rad(phi_deg)
    alpha = np.deg2rad(alpha_deg)
    return np.stack([np.cos(alpha) * np.cos(phi), np.cos(alpha) * np.sin(phi), np.sin(alpha)], -1)


def _vectors_to_angles(vec):
    vec = np.where(vec[..., 2:3] < 0, -vec, vec)
    alpha = np.rad2deg(np.arcsin(np.clip(vec[..., 2], 0.0, 1.0)))
    phi = np.rad2deg(np.arctan2(vec[..., 1], vec[..., 0])) % 180.0
    phi = np.where(phi >= 180.0, 0.0, phi)
    return phi, alpha


def disperse(mean_vec, kappa, rng) -> np.ndarray:
    """Rotate unit vectors about random perpendicular axes.

    Rotation angles follow a wrapped Gaussian with standard deviation
    ``1/sqrt(kappa)``; ``kappa = inf`` returns the input unchanged.
    """
    mean_vec = np.asarray(mean_vec, dtype=float)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), mean_vec.shape[:-1])
    n = mean_vec.shape[:-1]
    sd = np.where(np.isinf(kappa), 0.0, 1.0 / np.sqrt(np.where(np.isinf(kappa), 1.0, kappa)))
    angle = rng.normal(size=n) * sd
    angle = (angle + np.pi) % (2 * np.pi) - np.pi
    axis = rng.normal(size=n + (3,))
    axis -= np.sum(axis * mean_vec, -1, keepdims=True) * mean_vec
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    c, s = np.cos(angle)[..., None], np.sin(angle)[..., None]
    # Rodrigues with axis perpendicular to the vector
    out = mean_vec * c + np.cross(axis, mean_vec) * s
    return np.where(sd[..., None] == 0, mean_vec, out)


def section_center(spec: PhantomSpec, y) -> np.ndarray:
    Y = spec.shape[1]
    cx, cz = spec.center
    y = np.asarray(y, dtype=float)
    return np.stack([cx + spec.drift_px * (y - 0.5 * (Y - 1)), np.full_like(y, cz)], -1)


def build_surfaces(spec: PhantomSpec, spiral: Spiral | None = None) -> SurfacePair:
    """Inner/outer layer boundaries on a regular ``(u, v)`` grid."""
    spiral = spiral or Spiral(*spec.radius_range, spec.turns)
    n_u, n_v = spec.mesh_shape
    Y = spec.shape[1]
    u = np.linspace(0.0, 1.0, n_u)
    v = np.linspace(0.0, 1.0, n_v)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    y = uu * (Y - 1)
    theta = spiral.theta_of_v(vv)
    mid = section_center(spec, y) + spiral.point(theta)
    nrm = spiral.normal(theta)
    half = 0.5 * spec.layer_px

    def assemble(p2):
        return np.stack([p2[..., 0], y, p2[..., 1]], -1).reshape(-1, 3)

    inner = assemble(mid - half * nrm)
    outer = assemble(mid + half * nrm)
    uv = np.stack([uu.ravel(), vv.ravel()], 1)
    labels = band_of(uv[:, 1], spec.edges())
    return SurfacePair(inner, outer, grid_faces(n_u, n_v), uv, labels)


def textured_noise(rng, shape, corr_px: float) -> np.ndarray:
    """Unit-variance Gaussian noise, smoothed in-plane when ``corr_px > 0``."""
    w = rng.normal(size=shape)
    if corr_px <= 0:
        return w
    f = ndimage.gaussian_filter(w, corr_px, mode="wrap")
    return f / f.std()


def chatter_field(spec: PhantomSpec, y: int) -> np.ndarray:
    """Multiplicative knife-chatter stripes of one section, flattened ``(X*Z,)``.

    Orientation, period, phase and amplitude are drawn per section, so two
    sections never share a stripe pattern.
    """
    X, _, Z = spec.shape
    if spec.chatter_amplitude == 0:
        return np.ones(X * Z)
    rng = _section_rng(spec.seed, 3, y)
    theta = rng.uniform(0.0, np.pi)
    period = rng.uniform(*spec.chatter_period_px)
    phase = rng.uniform(0.0, 2 * np.pi)
    amp = spec.chatter_amplitude * rng.uniform(0.5, 1.5)
    xs, zs = np.meshgrid(np.arange(X), np.arange(Z), indexing="ij")
    arg = 2 * np.pi * (xs * np.cos(theta) + zs * np.sin(theta)) / period + phase
    return (1.0 + amp * np.sin(arg)).ravel()


def generate_phantom(spec: PhantomSpec | None = None) -> PhantomTruth:
    """Deterministic phantom volume, labels and surfaces for ``spec.seed``."""
    spec = spec or PhantomSpec()
    spec.validate()
    X, Y, Z = spec.shape
    spiral = Spiral(*spec.radius_range, spec.turns)
    dense_theta = spiral._theta
    dense_pts = spiral.point(dense_theta)
    tree = cKDTree(dense_pts)
    step = np.max(np.linalg.norm(np.diff(dense_pts, axis=0), axis=1))
    tangents = spiral.tangent(dense_theta)
    normals = spiral.normal(dense_theta)
    tangent_deg = np.rad2deg(np.arctan2(tangents[:, 1], tangents[:, 0]))
    dense_band = band_of(spiral._v, spec.edges())
    half = 0.5 * spec.layer_px

    bands = spec.bands
    b_off = np.array([b.direction_offset for b in bands])
    b_inc = np.array([b.inclination for b in bands])
    b_kap = np.array([b.kappa for b in bands])
    b_it = np.array([b.transmittance for b in bands])
    b_sd = np.array([b.transmittance_sd for b in bands])

    gain = np.exp(spec.section_gain_sd * _section_rng(spec.seed, 0).normal(size=Y))

    xs, zs = np.meshgrid(np.arange(X, dtype=float), np.arange(Z, dtype=float), indexing="ij")
    pix = np.stack([xs.ravel(), zs.ravel()], 1)
    it = np.empty((Y, X * Z))
    phi = np.zeros((Y, X * Z))
    alpha = np.full((Y, X * Z), 90.0)
    labels = np.full((Y, X * Z), BACKGROUND, dtype=np.uint8)
    model = spec.signal_model
    for y in range(Y):
        rng = _section_rng(spec.seed, 1, y)
        rel = pix - section_center(spec, float(y))
        dist, k = tree.query(rel, distance_upper_bound=half + 2 * step)
        found = np.isfinite(dist)
        kk = np.where(found, k, 0)
        d = rel - dense_pts[kk]
        depth = np.sum(d * normals[kk], 1)
        along = np.sum(d * tangents[kk], 1)
        inside = found & (np.abs(depth) <= half) & (np.abs(along) <= step)
        idx = np.flatnonzero(inside)
        b = dense_band[kk[idx]]

        noise_it = textured_noise(rng, (X, Z), spec.texture_px).ravel()
        background = spec.background_transmittance + spec.background_sd * noise_it
        it_y = np.maximum(background, model.i_ref / gain[y])
        it_y[idx] = b_it[b] + b_sd[b] * noise_it[idx]
        it[y] = gain[y] * it_y * chatter_field(spec, y)

        mean_vec = _orientation_vectors(tangent_deg[kk[idx]] + b_off[b], b_inc[b])
        vec = disperse(mean_vec, b_kap[b], rng)
        p, a = _vectors_to_angles(vec)
        phi[y, idx] = p
        alpha[y, idx] = a
        labels[y, idx] = b

    it = np.maximum(it, 0.0)
    r = forward_retardation(it, alpha, model)
    # background carries no birefringence signal
    r = np.where(labels == BACKGROUND, 0.0, r)
    phi = np.where(r > 0, phi, 0.0)
    alpha = np.where(r > 0, alpha, 90.0)
    shape = (Y, X, Z)
    maps = ParameterMaps(it.reshape(shape), phi.reshape(shape), r.reshape(shape), alpha.reshape(shape))
    return PhantomTruth(spec, maps, labels.reshape(shape), build_surfaces(spec, spiral), gain)


def render_stack(truth: PhantomTruth, section_index: int, n_angles: int = 18,
                 noise_sd: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Polarizer rotation stack ``[n_angles, X, Z]`` for one section."""
    Y = truth.spec.shape[1]
    if not 0 <= section_index < Y:
        raise IndexError(f"section {section_index} out of range [0, {Y})")
    m = truth.maps.section(section_index)
    stack = forward_profile(m.transmittance, m.direction, m.retardation, rotation_angles(n_angles))
    if noise_sd > 0:
        if rng is None:
            rng = _section_rng(truth.spec.seed, 2, section_index)
        stack = stack + noise_sd * rng.normal(size=stack.shape)
    return np.maximum(stack, 0.0)
