"""Depth sampling of feature volumes between paired surfaces, smoothing and unfolded rasters."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .featmap import FeatureVolume
from .mesh import SurfacePair, vertex_normals
from .tensorio import write_tensor

GRAY = (128, 128, 128)
BACKGROUND_RGB = (0, 0, 0)
# strictly less than one cell: an isolated vertex paints a single cell
_REACH = 1.0


@dataclass
class VertexFeatures:
    """Per-vertex feature rows plus unfolded coordinates, labels and confound."""

    values: np.ndarray  # (V, D*C)
    missing: np.ndarray  # (V,) bool
    uv: np.ndarray
    labels: np.ndarray
    confound: np.ndarray  # cutting angle, degrees

    @property
    def present(self) -> np.ndarray:
        return self.values[~self.missing]

    def save(self, path: str | os.PathLike) -> None:
        path = os.fspath(path)
        write_tensor(self.values.astype(np.float64), path)
        with open(path + ".csv", "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "u", "v", "label", "confound", "missing"])
            for i in range(len(self.values)):
                w.writerow([i, repr(float(self.uv[i, 0])), repr(float(self.uv[i, 1])), int(self.labels[i]),
                            repr(float(self.confound[i])), int(self.missing[i])])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "VertexFeatures":
        from .tensorio import read_tensor

        path = os.fspath(path)
        values = read_tensor(path)
        with open(path + ".csv", encoding="ascii") as fh:
            rows = list(csv.DictReader(fh))
        uv = np.array([[float(r["u"]), float(r["v"])] for r in rows]).reshape(-1, 2)
        labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        confound = np.array([float(r["confound"]) for r in rows])
        missing = np.array([r["missing"] == "1" for r in rows], dtype=bool)
        return cls(values, missing, uv, labels, confound)


def interpolate_depths(surfaces: SurfacePair, depths: int = 17) -> list[np.ndarray]:
    """``depths`` vertex arrays linearly spaced from inner (0) to outer (D-1)."""
    if depths < 2:
        raise ValueError("need at least 2 depths")
    inner, outer = np.asarray(surfaces.inner, float), np.asarray(surfaces.outer, float)
    if inner.shape != outer.shape:
        raise ValueError("vertex count mismatch")
    out = []
    for d in range(depths):
        if d == 0:
            out.append(inner.copy())
        elif d == depths - 1:
            out.append(outer.copy())
        else:
            out.append(inner + (d / (depths - 1)) * (outer - inner))
    return out


def sample_at_vertices(vol: FeatureVolume, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear samples ``(V, C)`` of the feature grid and a missing mask.

    Vertices are voxel coordinates ``(x, section, z)``; a vertex is missing
    when its grid position lies outside the node hull.
    """
    g = vol.grid_coordinates(np.asarray(vertices, dtype=float).reshape(-1, 3))
    vals = vol.values
    dims = np.array(vals.shape[:3])
    eps = 1e-9
    missing = np.any((g < -eps) | (g > dims - 1 + eps), axis=1) | ~np.all(np.isfinite(g), axis=1)
    gc = np.clip(np.where(np.isfinite(g), g, 0.0), 0, dims - 1)
    lo = np.minimum(np.floor(gc).astype(np.int64), np.maximum(dims - 2, 0))
    frac = gc - lo
    out = np.zeros((len(g), vals.shape[3]), dtype=np.float64)
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        idx = [np.minimum(lo[:, a] + bits[a], dims[a] - 1) for a in range(3)]
        w = np.ones(len(g))
        for a in range(3):
            w *= frac[:, a] if bits[a] else 1.0 - frac[:, a]
        out += w[:, None] * vals[idx[0], idx[1], idx[2]]
    out[missing] = 0.0
    return out, missing


def concat_depths(samples: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Depth-major concatenation; a vertex is missing if any depth is."""
    if not samples:
        raise ValueError("no depths")
    n, c = samples[0][0].shape
    for vals, miss in samples:
        if vals.shape != (n, c) or miss.shape != (n,):
            raise ValueError("depth samples disagree in shape")
    values = np.concatenate([s[0] for s in samples], axis=1)
    missing = np.any(np.stack([s[1] for s in samples]), axis=0)
    return values, missing


def cutting_angle(surfaces: SurfacePair, pixel_um: float = 1.0, section_um: float = 1.0) -> np.ndarray:
    """Angle in degrees in [0, 90] between the local surface normal and the section axis.

    Normals are computed in physical units on the inner and outer meshes
    and averaged.
    """
    scale = np.array([pixel_um, section_um, pixel_um], dtype=float)
    n = vertex_normals(surfaces.inner * scale, surfaces.faces) + vertex_normals(surfaces.outer * scale, surfaces.faces)
    norm = np.linalg.norm(n, axis=1)
    cosang = np.divide(np.abs(n[:, 1]), norm, out=np.ones_like(norm), where=norm > 0)
    return np.rad2deg(np.arccos(np.clip(cosang, 0.0, 1.0)))


def adjacency(n_vertices: int, edges: np.ndarray) -> sparse.csr_matrix:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    data = np.ones(2 * len(e))
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    a = sparse.csr_matrix((data, (rows, cols)), shape=(n_vertices, n_vertices))
    a.data[:] = 1.0  # duplicate edges count once
    return a


def graph_smooth(values: np.ndarray, edges: np.ndarray, iters: int = 3, missing=None,
                 include_self: bool = True) -> np.ndarray:
    """Synchronous neighbourhood averaging over present vertices.

    Each iteration replaces a present row by the mean over its present
    neighbours (and itself when ``include_self``); missing rows are left
    untouched and never contribute.  Rows with no present neighbourhood
    keep their value.
    """
    x = np.array(values, dtype=np.float64)
    n = x.shape[0]
    miss = np.zeros(n, bool) if missing is None else np.asarray(missing, bool)
    present = (~miss).astype(float)
    a = adjacency(n, edges)
    if include_self:
        a = a + sparse.identity(n, format="csr")
    a = a @ sparse.diags(present)
    counts = np.asarray(a.sum(axis=1)).ravel()
    ok = (counts > 0) & ~miss
    for _ in range(iters):
        s = a @ x
        x[ok] = s[ok] / counts[ok, None]
    return x


def build_vertex_features(vol: FeatureVolume, surfaces: SurfacePair, depths: int = 17) -> VertexFeatures:
    samples = [sample_at_vertices(vol, v) for v in interpolate_depths(surfaces, depths)]
    values, missing = concat_depths(samples)
    conf = cutting_angle(surfaces, vol.pixel_um, vol.section_um)
    return VertexFeatures(values, missing, surfaces.uv.copy(), surfaces.labels.copy(), conf)


def rasterize_unfolded(colors, uv, width: int, height: int, missing=None,
                       background=BACKGROUND_RGB, gray=GRAY) -> np.ndarray:
    """Nearest-vertex raster ``(height, width, 3)`` uint8 of the unfolded plane.

    Rows follow ``v`` and columns follow ``u``.  A cell takes the colour of
    the nearest vertex closer than one cell width; farther cells get
    ``background`` and cells whose nearest vertex is missing get ``gray``.
    ``colors`` may be ``(V, 3)`` RGB or ``(V,)`` integer labels (mapped
    through a fixed palette).
    """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    out = np.empty((height, width, 3), dtype=np.uint8)
    out[:] = background
    if len(uv) == 0:
        return out
    colors = np.asarray(colors)
    if colors.ndim == 1:
        colors = label_palette(colors)
    miss = np.zeros(len(uv), bool) if missing is None else np.asarray(missing, bool)
    cells = np.stack([uv[:, 0] * width, uv[:, 1] * height], 1)
    tree = cKDTree(cells)
    cx, cy = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    q = np.stack([cx.ravel(), cy.ravel()], 1)
    dist, k = tree.query(q, distance_upper_bound=_REACH)
    hit = np.isfinite(dist)
    flat = out.reshape(-1, 3)
    kk = k[hit]
    flat[hit] = np.where(miss[kk, None], np.array(gray, np.uint8), colors[kk].astype(np.uint8))
    return out


def raster_index(uv, width: int, height: int) -> np.ndarray:
    """Nearest-vertex index per raster cell (-1 where no vertex is close)."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    if len(uv) == 0:
        return np.full((height, width), -1)
    tree = cKDTree(np.stack([uv[:, 0] * width, uv[:, 1] * height], 1))
    cx, cy = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    dist, k = tree.query(np.stack([cx.ravel(), cy.ravel()], 1), distance_upper_bound=_REACH)
    return np.where(np.isfinite(dist), k, -1).reshape(height, width)


_PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 190],
], dtype=np.uint8)


def label_palette(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return _PALETTE[np.mod(labels, len(_PALETTE))]
