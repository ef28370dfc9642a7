"""Paired inner/outer triangle meshes and the PLISURF text format.

::

    PLISURF 1
    <vertex count>
    v x y z u v label      # inner block, one line per vertex
    v x y z u v label      # outer block, same vertex order
    f i j k                # 0-based faces shared by both surfaces

Coordinates are voxel indices ``(x, section, z)``; ``u`` runs along the
long (section) axis and ``v`` along the proximal-distal axis of the sheet.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

HEADER = "PLISURF 1"


class MeshFormatError(ValueError):
    pass


@dataclass
class SurfacePair:
    inner: np.ndarray  # (V, 3) float
    outer: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int
    uv: np.ndarray  # (V, 2) float in [0, 1]
    labels: np.ndarray  # (V,) int

    def __post_init__(self):
        self.inner = np.asarray(self.inner, dtype=float)
        self.outer = np.asarray(self.outer, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.uv = np.asarray(self.uv, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inner.shape != self.outer.shape:
            raise ValueError("vertex count mismatch between inner and outer surface")
        n = self.inner.shape[0]
        if self.uv.shape != (n, 2) or self.labels.shape != (n,):
            raise ValueError("per-vertex attributes do not match vertex count")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ValueError("face index out of range")

    @property
    def n_vertices(self) -> int:
        return self.inner.shape[0]

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.inner + self.outer)

    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(E, 2)`` with ``i < j``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)


def write_surface(pair: SurfacePair, path: str | os.PathLike) -> None:
    lines = [HEADER, str(pair.n_vertices)]
    for block in (pair.inner, pair.outer):
        for (x, y, z), (u, v), lab in zip(block, pair.uv, pair.labels):
            coords = " ".join(repr(float(c)) for c in (x, y, z, u, v))
            lines.append(f"v {coords} {int(lab)}")
    for i, j, k in pair.faces:
        lines.append(f"f {i} {j} {k}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_surface(path: str | os.PathLike) -> SurfacePair:
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != HEADER:
        raise MeshFormatError("missing PLISURF header")
    try:
        n = int(lines[1])
    except (IndexError, ValueError):
        raise MeshFormatError("bad vertex count") from None
    vlines = lines[2 : 2 + 2 * n]
    if len(vlines) != 2 * n or any(not ln.startswith("v ") for ln in vlines):
        raise MeshFormatError("expected 2 x vertex-count vertex lines")
    verts = np.array([ln.split()[1:] for ln in vlines], dtype=float).reshape(2 * n, 6)
    flines = lines[2 + 2 * n :]
    if any(not ln.startswith("f ") for ln in flines):
        raise MeshFormatError("unexpected line after vertex blocks")
    faces = np.array([ln.split()[1:] for ln in flines], dtype=np.int64).reshape(-1, 3)
    inner, outer = verts[:n], verts[n:]
    if not np.array_equal(inner[:, 3:], outer[:, 3:]):
        raise MeshFormatError("inner and outer blocks disagree on (u, v, label)")
    return SurfacePair(inner[:, :3], outer[:, :3], faces, inner[:, 3:5], inner[:, 5].astype(np.int64))


def grid_faces(n_u: int, n_v: int) -> np.ndarray:
    """Two triangles per quad of a row-major ``n_u x n_v`` vertex grid."""
    idx = np.arange(n_u * n_v).reshape(n_u, n_v)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    return np.concatenate([np.stack([a, b, c], 1), np.stack([b, d, c], 1)])


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (unit length, zeros for isolated vertices)."""
    v = np.asarray(vertices, dtype=float)
    tri = v[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    vn = np.zeros_like(v)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return np.divide(vn, norm, out=np.zeros_like(vn), where=norm > 0)
