"""Dependency-free image files.

* binary PGM (``P5``), 8 or 16 bit, for integer images;
* little-endian float32 PFM (``Pf``, scale ``-1``) for float images and
  variance maps. PFM stores rows bottom-to-top; arrays here are top-down.
* blur kernels as whitespace-separated text (one row per line).
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def _tokens(fh, count: int) -> list[bytes]:
    out = []
    while len(out) < count:
        line = fh.readline()
        if not line:
            raise ValueError("truncated image header")
        out.extend(line.split(b"#", 1)[0].split())
    return out


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
        # header: width height maxval, possibly split over lines with comments
        width, height, maxval = (int(t) for t in _tokens(fh, 3))
        if not 0 < maxval < 65536:
            raise ValueError(f"{path}: bad maxval {maxval}")
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = np.frombuffer(fh.read(width * height * dtype.itemsize), dtype=dtype)
    if data.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, img, maxval: int | None = None) -> None:
    """Write an integer image; values are rounded and clipped to ``[0, maxval]``."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if maxval is None:
        maxval = 65535 if img.dtype == np.uint16 else 255
    arr = np.clip(np.rint(img.astype(float)), 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        fh.write(arr.astype(dtype).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM (magic {magic!r})")
        width, height = (int(t) for t in _tokens(fh, 2))
        scale = float(_tokens(fh, 1)[0])
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * width * height), dtype=dtype)
    if data.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return np.flipud(data.reshape(height, width)).astype(np.float32)


def write_pfm(path, img) -> None:
    img = np.asarray(img, dtype="<f4")
    if img.ndim != 2:
        raise ValueError("PFM images must be 2-D")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{img.shape[1]} {img.shape[0]}\n-1.0\n".encode())
        fh.write(np.ascontiguousarray(np.flipud(img)).tobytes())


def read_image(path) -> np.ndarray:
    """PGM or PFM (by magic number) as a float64 array."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        return read_pgm(path).astype(float)
    if magic == b"Pf":
        return read_pfm(path).astype(float)
    raise ValueError(f"{path}: unsupported image format (expected PGM P5 or PFM Pf)")


def write_image(path, img) -> None:
    """Format from the suffix: ``.pgm`` (8-bit) or ``.pfm``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, img)
    elif suffix == ".pfm":
        write_pfm(path, img)
    else:
        raise ValueError(f"unsupported image suffix {suffix!r}")


def load_kernel(spec: str) -> np.ndarray:
    """``uniformK`` (e.g. ``uniform9``) or a text file; normalised to unit sum."""
    if spec.startswith("uniform") and spec[7:].isdigit():
        size = int(spec[7:])
        kern = np.ones((size, size))
    else:
        if not os.path.exists(spec):
            raise FileNotFoundError(f"kernel file not found: {spec}")
        kern = np.atleast_2d(np.loadtxt(spec, dtype=float))
    total = kern.sum()
    if total == 0:
        raise ValueError("blur kernel sums to zero")
    return kern / total
