"""Lossless PNG and raw HDR image I/O."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import png

MAX16 = 65535


def quantize16(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * MAX16).astype(np.uint16)


def dequantize16(codes: np.ndarray) -> np.ndarray:
    return codes.astype(np.float64) / MAX16


def write_png16(path: str | Path, codes: np.ndarray) -> None:
    """Write a uint16 array of shape (H, W) or (H, W, 3) as a 16-bit PNG."""
    codes = np.asarray(codes)
    if codes.dtype != np.uint16:
        raise TypeError(f"expected uint16 codes, got {codes.dtype}")
    greyscale = codes.ndim == 2
    h, w = codes.shape[:2]
    writer = png.Writer(width=w, height=h, greyscale=greyscale, bitdepth=16, compression=9)
    rows = codes.reshape(h, -1)
    with open(path, "wb") as fh:
        writer.write(fh, rows)


def write_png8(path: str | Path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] (H, W) or (H, W, 3) as an 8-bit PNG."""
    image = np.asarray(image, dtype=np.float64)
    codes = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    greyscale = codes.ndim == 2
    h, w = codes.shape[:2]
    writer = png.Writer(width=w, height=h, greyscale=greyscale, bitdepth=8)
    with open(path, "wb") as fh:
        writer.write(fh, codes.reshape(h, -1))


def read_png_codes(path: str | Path) -> tuple[np.ndarray, int]:
    """Return (codes, bitdepth); codes are (H, W) or (H, W, 3), alpha dropped."""
    reader = png.Reader(filename=str(path))
    w, h, rows, info = reader.asDirect()
    planes = info["planes"]
    depth = info["bitdepth"]
    dtype = np.uint16 if depth > 8 else np.uint8
    arr = np.vstack([np.asarray(r, dtype=dtype) for r in rows]).reshape(h, w, planes)
    if planes in (2, 4):
        arr = arr[..., :-1]
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    return arr, depth


def read_png(path: str | Path) -> np.ndarray:
    """Read any 8/16-bit PNG as float64 in [0, 1]."""
    codes, depth = read_png_codes(path)
    return codes.astype(np.float64) / float(2**depth - 1)


def write_hdr(path: str | Path, image: np.ndarray) -> None:
    """Raw float32 RGB image behind an 8-byte little-endian (width, height) header."""
    image = np.asarray(image, dtype="<f4")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_hdr(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h = struct.unpack("<II", raw[:8])
    data = np.frombuffer(raw[8:], dtype="<f4")
    if data.size != w * h * 3:
        raise ValueError(f"{path}: payload holds {data.size} floats, expected {w * h * 3}")
    return data.reshape(h, w, 3).astype(np.float32)
