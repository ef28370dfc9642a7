"""Spatial positive-pair sampling for contrastive training.

CL2D draws the positive on a circle of fixed physical radius around the
anchor inside the same section.  CL3D draws a direction on the sphere,
snaps the section offset to the nearest section other than the anchor's,
and places the positive in-plane so that the physical distance stays at the
radius.  Offsets whose snapped section lies farther than the radius cannot
keep that distance and are redrawn, as are same-section draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CL2D = "CL2D"
CL3D = "CL3D"
MODES = (CL2D, CL3D)


class SamplingGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PairSamplerConfig:
    mode: str = CL3D
    radius_um: float = 118.0
    pixel_um: float = 1.3
    section_um: float = 60.0
    volume_shape: tuple = (192, 64, 192)  # (X, Y, Z)
    window_px: int = 16  # extent that must fit around each location

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.radius_um > 0:
            raise ValueError("radius must be positive")
        if self.mode == CL3D and self.radius_um < self.section_um:
            raise ValueError("CL3D radius must reach the neighbouring section")

    @property
    def radius_px(self) -> float:
        return self.radius_um / self.pixel_um

    def anchor_bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """In-plane ranges for anchor centres so both windows fit at any angle."""
        X, _, Z = self.volume_shape
        lo = 0.5 * (self.window_px - 1) + self.radius_px
        out = []
        for n in (X, Z):
            hi = (n - 1) - lo
            if hi < lo:
                raise SamplingGeometryError(
                    f"{self.window_px}px windows {self.radius_px:.1f}px apart do not fit a {n}px section"
                )
            out.append((lo, hi))
        return out[0], out[1]


def _section_offsets(cfg: PairSamplerConfig, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Section offsets and in-plane distances (px) for ``n`` draws."""
    if cfg.mode == CL2D:
        return np.zeros(n, dtype=np.int64), np.full(n, cfg.radius_px)
    dsec = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        cos_polar = rng.uniform(-1.0, 1.0, size=2 * (n - filled) + 8)
        d = np.round(cfg.radius_um * cos_polar / cfg.section_um).astype(np.int64)
        ok = (d != 0) & (np.abs(d) * cfg.section_um <= cfg.radius_um)
        d = d[ok][: n - filled]
        dsec[filled : filled + d.size] = d
        filled += d.size
    inplane = np.sqrt(cfg.radius_um**2 - (dsec * cfg.section_um) ** 2) / cfg.pixel_um
    return dsec, inplane


def sample_pairs(cfg: PairSamplerConfig, n: int, rng: np.random.Generator,
                 sections=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` (anchor, positive) location pairs.

    Returns two ``(n, 3)`` float arrays of voxel coordinates ``(x, y, z)``:
    in-plane coordinates are continuous (rounded at patch extraction) and
    the section coordinate is integral.  ``sections`` restricts both
    locations to a subset of sections, e.g. the training split.
    """
    (xlo, xhi), (zlo, zhi) = cfg.anchor_bounds()
    Y = cfg.volume_shape[1]
    allowed = np.arange(Y) if sections is None else np.unique(np.asarray(sections, dtype=np.int64))
    if allowed.size == 0:
        raise SamplingGeometryError("no sections to sample from")
    mask = np.zeros(Y, dtype=bool)
    mask[allowed] = True
    if cfg.mode == CL3D:
        reach = int(cfg.radius_um // cfg.section_um)
        partners = [(y + d) for y in allowed for d in range(-reach, reach + 1)
                    if d != 0 and 0 <= y + d < Y and mask[y + d]]
        if not partners:
            raise SamplingGeometryError("no pair of sections within the sampling radius")

    anchors = np.empty((n, 3))
    positives = np.empty((n, 3))
    filled = 0
    while filled < n:
        m = n - filled
        ya = allowed[rng.integers(0, allowed.size, size=m)]
        dsec, dist = _section_offsets(cfg, m, rng)
        yp = ya + dsec
        ok = (yp >= 0) & (yp < Y)
        ok[ok] = mask[yp[ok]]
        psi = rng.uniform(0.0, 2 * np.pi, size=m)
        xa = rng.uniform(xlo, xhi, size=m)
        za = rng.uniform(zlo, zhi, size=m)
        sel = np.flatnonzero(ok)
        k = sel.size
        sl = slice(filled, filled + k)
        anchors[sl] = np.stack([xa[sel], ya[sel], za[sel]], 1)
        positives[sl] = np.stack(
            [xa[sel] + dist[sel] * np.cos(psi[sel]), yp[sel], za[sel] + dist[sel] * np.sin(psi[sel])], 1
        )
        filled += k
    return anchors, positives


def sample_pair(cfg: PairSamplerConfig, rng: np.random.Generator, sections=None):
    a, p = sample_pairs(cfg, 1, rng, sections)
    return a[0], p[0]


def physical_distance(cfg: PairSamplerConfig, a, b) -> np.ndarray:
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    scale = np.array([cfg.pixel_um, cfg.section_um, cfg.pixel_um])
    return np.linalg.norm(d * scale, axis=-1)
