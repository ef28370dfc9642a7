"""Sliding-window feature maps and the stacked feature volume."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ssl.encoder import Encoder, encode_numpy
from .tensorio import read_tensor, write_tensor


@dataclass
class FeatureVolume:
    """Feature grid ``[H', Y, W', C]``.

    Cell ``(i, y, j)`` summarizes the window whose top-left pixel is
    ``(i * stride, j * stride)`` in section ``y``; its centre lies at
    ``i * stride + (patch - 1) / 2``.
    """

    values: np.ndarray
    patch_px: int
    stride_px: int
    pixel_um: float = 1.0
    section_um: float = 1.0

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def grid_coordinates(self, voxel_xyz: np.ndarray) -> np.ndarray:
        """Voxel ``(x, y, z)`` to fractional grid indices ``(i, y, j)``."""
        v = np.asarray(voxel_xyz, dtype=float)
        off = 0.5 * (self.patch_px - 1)
        return np.stack([(v[..., 0] - off) / self.stride_px, v[..., 1], (v[..., 2] - off) / self.stride_px], -1)

    def save(self, path: str | os.PathLike) -> None:
        path = os.fspath(path)
        write_tensor(self.values.astype(np.float32), path)
        with open(path + ".meta", "w", encoding="ascii") as fh:
            fh.write(f"patch_px={self.patch_px}\nstride_px={self.stride_px}\n"
                     f"pixel_um={self.pixel_um!r}\nsection_um={self.section_um!r}\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FeatureVolume":
        path = os.fspath(path)
        meta = {}
        with open(path + ".meta", encoding="ascii") as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.strip().split("=", 1)
                    meta[k] = v
        return cls(read_tensor(path), int(meta["patch_px"]), int(meta["stride_px"]),
                   float(meta["pixel_um"]), float(meta["section_um"]))


def window_stride(patch_px: int, overlap: float) -> int:
    stride = patch_px * (1.0 - overlap)
    if not 0 <= overlap < 1 or abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
        raise ValueError(f"patch {patch_px} with overlap {overlap} gives a non-integral stride")
    return int(round(stride))


def grid_size(n: int, patch_px: int, stride: int) -> int:
    if n < patch_px:
        raise ValueError(f"section side {n} smaller than one {patch_px}px patch")
    return (n - patch_px) // stride + 1


def section_windows(channels: np.ndarray, patch_px: int, stride: int) -> np.ndarray:
    """All windows of a ``[C, H, W]`` section as ``[H', W', C, S, S]`` (a view)."""
    C, H, W = channels.shape
    grid_size(H, patch_px, stride)
    grid_size(W, patch_px, stride)
    win = sliding_window_view(channels, (patch_px, patch_px), axis=(1, 2))[:, ::stride, ::stride]
    return np.moveaxis(win, 0, 2)


def feature_maps(model: Encoder, channels: np.ndarray, patch_px: int | None = None,
                 overlap: float = 0.5) -> np.ndarray:
    """Encoder features ``[H', W', h]`` for one ``[C, H, W]`` section, no augmentation."""
    patch_px = patch_px or model.cfg.patch_px
    stride = window_stride(patch_px, overlap)
    win = section_windows(np.asarray(channels, dtype=np.float32), patch_px, stride)
    gh, gw = win.shape[:2]
    flat = win.reshape((gh * gw,) + win.shape[2:])
    return encode_numpy(model, flat).reshape(gh, gw, -1)


def stack_volume(section_maps, patch_px: int, stride_px: int, pixel_um: float = 1.0,
                 section_um: float = 1.0) -> FeatureVolume:
    """Stack per-section ``[H', W', C]`` maps into ``[H', Y, W', C]``.

    ``section_maps`` is a sequence ordered by section, or a mapping from
    section index to map that must cover ``0..Y-1`` without gaps.
    """
    if isinstance(section_maps, dict):
        keys = sorted(section_maps)
        if keys != list(range(len(keys))):
            raise ValueError("gap in section sequence")
        section_maps = [section_maps[k] for k in keys]
    maps = [np.asarray(m) for m in section_maps]
    if not maps:
        raise ValueError("no sections")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("inconsistent section grid shapes")
    values = np.stack(maps, axis=1).astype(np.float32)
    return FeatureVolume(values, patch_px, stride_px, pixel_um, section_um)
