"""SVBRDF data model: four aligned parameter maps, the normal codec, blending and
affine resampling, and the on-disk bundle format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .pngio import MAX16, dequantize16, quantize16, read_png_codes, write_png16

NORMAL_TOL = 1e-5


class MaterialClass(str, Enum):
    PAINT = "paint"
    PLASTIC = "plastic"
    LEATHER = "leather"
    METAL = "metal"
    WOOD = "wood"
    FABRIC = "fabric"
    STONE = "stone"
    TILES = "tiles"
    GROUND = "ground"


MATERIAL_CLASSES: tuple[MaterialClass, ...] = tuple(MaterialClass)


@dataclass(frozen=True, eq=False)
class SvbrdfMaps:
    """Per-pixel normal (unit, screen space), diffuse and specular albedo (RGB) and
    roughness (scalar) on a square grid. Arrays are float64; roughness is (R, R)."""

    normal: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray

    def __post_init__(self) -> None:
        r = self.normal.shape[0]
        expected = {"normal": (r, r, 3), "diffuse": (r, r, 3), "specular": (r, r, 3), "roughness": (r, r)}
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} map has shape {arr.shape}, expected {shape}")
        lengths = np.linalg.norm(self.normal, axis=-1)
        if np.abs(lengths - 1.0).max() > NORMAL_TOL:
            raise ValueError(f"normals deviate from unit length by {np.abs(lengths - 1.0).max():.3g}")
        if self.normal[..., 2].min() < 0.0:
            raise ValueError("normal map has negative z components")
        for name in ("diffuse", "specular", "roughness"):
            arr = getattr(self, name)
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} map leaves [0, 1]: [{arr.min():.4g}, {arr.max():.4g}]")

    @property
    def resolution(self) -> int:
        return self.normal.shape[0]

    @classmethod
    def uniform(cls, resolution: int, normal=(0.0, 0.0, 1.0), diffuse=0.5, specular=0.04, roughness=0.5) -> SvbrdfMaps:
        shape = (resolution, resolution)
        n = np.broadcast_to(np.asarray(normal, dtype=np.float64), shape + (3,))
        n = n / np.linalg.norm(n, axis=-1, keepdims=True)
        return cls(
            normal=n.copy(),
            diffuse=np.broadcast_to(np.asarray(diffuse, dtype=np.float64), shape + (3,)).copy(),
            specular=np.broadcast_to(np.asarray(specular, dtype=np.float64), shape + (3,)).copy(),
            roughness=np.full(shape, float(roughness)),
        )

    def encode(self) -> np.ndarray:
        """9-channel network layout: normal.xy in [0,1] (2), diffuse (3), roughness (1), specular (3)."""
        return np.concatenate(
            [encode_normal(self.normal), self.diffuse, self.roughness[..., None], self.specular], axis=-1
        )

    def equals(self, other: SvbrdfMaps) -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("normal", "diffuse", "specular", "roughness")
        )


def decode_normal(xy01) -> np.ndarray:
    """Map tangent-plane (x, y) in [0, 1] to a unit normal with z >= 0.

    Works elementwise over a trailing axis of size 2.
    """
    xy = 2.0 * np.asarray(xy01, dtype=np.float64) - 1.0
    x, y = xy[..., 0], xy[..., 1]
    z = np.sqrt(np.maximum(0.0, 1.0 - x * x - y * y))
    n = np.stack([x, y, z], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def encode_normal(normal: np.ndarray) -> np.ndarray:
    return np.asarray(normal, dtype=np.float64)[..., :2] * 0.5 + 0.5


def _renormalize(n: np.ndarray) -> np.ndarray:
    n = n.copy()
    n[..., 2] = np.maximum(n[..., 2], 0.0)
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    flat = length[..., 0] < 1e-12
    n[flat] = (0.0, 0.0, 1.0)
    length[flat] = 1.0
    return n / length


def blend_svbrdfs(a: SvbrdfMaps, b: SvbrdfMaps, alpha: float) -> SvbrdfMaps:
    """Convex combination (1 - alpha) a + alpha b of every map; normals renormalized."""
    if a.resolution != b.resolution:
        raise ValueError(f"cannot blend resolutions {a.resolution} and {b.resolution}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b

    def mix(u, v):
        return (1.0 - alpha) * u + alpha * v

    return SvbrdfMaps(
        normal=_renormalize(mix(a.normal, b.normal)),
        diffuse=np.clip(mix(a.diffuse, b.diffuse), 0.0, 1.0),
        specular=np.clip(mix(a.specular, b.specular), 0.0, 1.0),
        roughness=np.clip(mix(a.roughness, b.roughness), 0.0, 1.0),
    )


def pixel_to_plane(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Plane coordinates (x right, y up, spanning [-1, 1]) of pixel centres."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    x = np.broadcast_to(c[None, :], (resolution, resolution))
    y = np.broadcast_to(-c[:, None], (resolution, resolution))
    return x, y


def bilinear_sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample at fractional pixel coordinates with edge-clamp addressing."""
    h, w = image.shape[:2]
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    if image.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = image[r0, c0] * (1.0 - fc) + image[r0, c1] * fc
    bottom = image[r1, c0] * (1.0 - fc) + image[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def transform_svbrdf(
    maps: SvbrdfMaps,
    rotation: float = 0.0,
    scale: float = 1.0,
    crop: tuple[int, int, int] | None = None,
) -> SvbrdfMaps:
    """Rotate (radians, counter-clockwise), magnify by ``scale`` about the image
    centre, then cut the window ``crop = (x0, y0, size)`` in pixels of the
    transformed frame. Normal x/y components are co-rotated so the field stays
    in screen space."""
    n = maps.resolution
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    x0, y0, size = crop if crop is not None else (0, 0, n)
    if size < 1 or x0 < 0 or y0 < 0 or x0 + size > n or y0 + size > n:
        raise ValueError(f"crop window {(x0, y0, size)} falls outside the {n}x{n} domain")

    px, py = pixel_to_plane(n)
    px = px[y0 : y0 + size, x0 : x0 + size]
    py = py[y0 : y0 + size, x0 : x0 + size]
    cos, sin = math.cos(rotation), math.sin(rotation)
    # inverse map: source = R(-theta) p / s
    sx = (cos * px + sin * py) / scale
    sy = (-sin * px + cos * py) / scale
    cols = (sx + 1.0) * 0.5 * n - 0.5
    rows = (1.0 - sy) * 0.5 * n - 0.5

    normal = bilinear_sample(maps.normal, rows, cols)
    nx = cos * normal[..., 0] - sin * normal[..., 1]
    ny = sin * normal[..., 0] + cos * normal[..., 1]
    normal = _renormalize(np.stack([nx, ny, normal[..., 2]], axis=-1))
    return SvbrdfMaps(
        normal=normal,
        diffuse=bilinear_sample(maps.diffuse, rows, cols),
        specular=bilinear_sample(maps.specular, rows, cols),
        roughness=bilinear_sample(maps.roughness, rows, cols),
    )


# -- bundle format -------------------------------------------------------------

BUNDLE_FILES = ("normal.png", "diffuse.png", "specular.png", "roughness.png")


def _normal_codes(normal: np.ndarray) -> np.ndarray:
    v = np.clip(normal[..., :2] * 0.5 + 0.5, 0.0, 1.0)
    xy = quantize16(v)
    outside = ((dequantize16(xy) * 2.0 - 1.0) ** 2).sum(axis=-1) > 1.0
    if outside.any():
        # round toward the centre so decoded (x, y) stays inside the unit disc
        toward = np.where(v > 0.5, np.floor(v * MAX16), np.ceil(v * MAX16)).astype(np.uint16)
        xy[outside] = toward[outside]
    x, y = _normal_xy_from_codes(xy)
    z = np.sqrt(np.maximum(0.0, 1.0 - x * x - y * y))
    return np.concatenate([xy, quantize16(z * 0.5 + 0.5)[..., None]], axis=-1)


def _normal_xy_from_codes(xy_codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xy = dequantize16(xy_codes) * 2.0 - 1.0
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    shrink = np.where(r2 > 1.0, 1.0 / np.sqrt(np.maximum(r2, 1.0)), 1.0)
    return x * shrink, y * shrink


def quantize_maps(maps: SvbrdfMaps) -> SvbrdfMaps:
    """The exact maps a bundle write followed by a read would produce."""
    codes = _bundle_codes(maps)
    return _maps_from_codes(codes)


def _bundle_codes(maps: SvbrdfMaps) -> dict[str, np.ndarray]:
    return {
        "normal.png": _normal_codes(maps.normal),
        "diffuse.png": quantize16(maps.diffuse),
        "specular.png": quantize16(maps.specular),
        "roughness.png": quantize16(maps.roughness),
    }


def _maps_from_codes(codes: dict[str, np.ndarray]) -> SvbrdfMaps:
    # z is rebuilt from x, y so that normals are unit length to rounding error
    x, y = _normal_xy_from_codes(codes["normal.png"][..., :2])
    z = np.sqrt(np.maximum(0.0, 1.0 - x * x - y * y))
    return SvbrdfMaps(
        normal=np.stack([x, y, z], axis=-1),
        diffuse=dequantize16(codes["diffuse.png"]),
        specular=dequantize16(codes["specular.png"]),
        roughness=dequantize16(codes["roughness.png"]),
    )


def save_bundle(directory: str | Path, maps: SvbrdfMaps, material_class: str | None = None, seed=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, codes in _bundle_codes(maps).items():
        write_png16(directory / name, codes)
    meta = {"resolution": maps.resolution, "class": material_class, "seed": seed}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_bundle(directory: str | Path) -> tuple[SvbrdfMaps, dict]:
    directory = Path(directory)
    codes = {}
    for name in BUNDLE_FILES:
        path = directory / name
        if not path.is_file():
            raise FileNotFoundError(f"missing bundle file: {path}")
        arr, depth = read_png_codes(path)
        if depth != 16:
            arr = np.round(arr.astype(np.float64) / (2**depth - 1) * MAX16).astype(np.uint16)
        codes[name] = arr
    meta_path = directory / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    return _maps_from_codes(codes), meta
