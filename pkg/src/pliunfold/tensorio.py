"""Bit-exact array container and PPM raster output.

Layout of a ``.plt`` file::

    b"PLT1" | dtype_code:u8 | ndim:u8 | shape: ndim x u64 LE | payload LE, C order
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"PLT1"

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
    4: np.dtype("<u4"),
}

_U64_MAX = 2**64 - 1


class TensorFormatError(ValueError):
    """Raised for malformed tensor container files."""


def _dtype_code(dtype: np.dtype) -> int:
    dt = np.dtype(dtype)
    for code, ref in DTYPE_CODES.items():
        if dt.kind == ref.kind and dt.itemsize == ref.itemsize:
            return code
    raise TypeError(f"unsupported dtype {dtype}")


def encode_tensor(t: np.ndarray) -> bytes:
    """Serialize an array to container bytes."""
    t = np.asarray(t)
    code = _dtype_code(t.dtype)
    if t.ndim > 255:
        raise ValueError("too many dimensions")
    count = 1
    for s in t.shape:
        count *= int(s)
        if count > _U64_MAX:
            raise OverflowError("shape product does not fit in u64")
    header = MAGIC + struct.pack("<BB", code, t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype=DTYPE_CODES[code]).tobytes()
    return header + payload


def decode_tensor(data: bytes) -> np.ndarray:
    """Parse container bytes back into an array (validating the layout)."""
    if len(data) < 6 or data[:4] != MAGIC:
        raise TensorFormatError("bad magic")
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code not in DTYPE_CODES:
        raise TensorFormatError("unknown dtype")
    off = 6 + 8 * ndim
    if len(data) < off:
        raise TensorFormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}Q", data, 6)
    dtype = DTYPE_CODES[code]
    count = 1
    for n in shape:
        count *= n
    expected = count * dtype.itemsize
    if len(data) - off != expected:
        raise TensorFormatError("payload size mismatch")
    arr = np.frombuffer(data, dtype=dtype, offset=off).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def write_image_rgb(raster: np.ndarray, path: str | os.PathLike) -> None:
    """Write an ``H x W x 3`` uint8 raster as binary PPM (P6)."""
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ValueError("raster must be H x W x 3")
    h, w = raster.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("raster must be at least 1x1")
    if raster.dtype != np.uint8:
        raise TypeError("raster must be uint8")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster).tobytes())


def read_image_rgb(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise TensorFormatError("not a binary PPM")
    w, h = (int(x) for x in parts[1].split())
    payload = parts[3]
    if len(payload) != w * h * 3:
        raise TensorFormatError("payload size mismatch")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()
