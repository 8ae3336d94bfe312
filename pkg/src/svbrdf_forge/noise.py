"""Procedural noise and pattern primitives on square grids (values roughly in [0, 1])."""

from __future__ import annotations

import numpy as np


def _grid(res: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(res) + 0.5) / res
    return np.meshgrid(c, c)  # (u, v) with u along columns


def smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(rng: np.random.Generator, res: int, cells: float, stretch: tuple[float, float] = (1.0, 1.0)) -> np.ndarray:
    """Bilinear-smoothstep interpolation of a random lattice; ``cells`` lattice cells per side."""
    cx = max(1, int(round(cells * stretch[0])))
    cy = max(1, int(round(cells * stretch[1])))
    lattice = rng.random((cy + 1, cx + 1))
    u, v = _grid(res)
    x = u * cx
    y = v * cy
    x0 = np.minimum(np.floor(x).astype(int), cx - 1)
    y0 = np.minimum(np.floor(y).astype(int), cy - 1)
    tx = smoothstep(x - x0)
    ty = smoothstep(y - y0)
    a = lattice[y0, x0] * (1 - tx) + lattice[y0, x0 + 1] * tx
    b = lattice[y0 + 1, x0] * (1 - tx) + lattice[y0 + 1, x0 + 1] * tx
    return a * (1 - ty) + b * ty


def fbm(
    rng: np.random.Generator,
    res: int,
    cells: float,
    octaves: int = 4,
    persistence: float = 0.5,
    stretch: tuple[float, float] = (1.0, 1.0),
) -> np.ndarray:
    total = np.zeros((res, res))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        total += amp * value_noise(rng, res, cells * 2**o, stretch)
        norm += amp
        amp *= persistence
    return total / norm


def worley(rng: np.random.Generator, res: int, n_points: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances to the nearest and second-nearest feature point and the nearest index.

    Distances are in image-width units.
    """
    n_points = max(2, int(n_points))
    pts = rng.random((n_points, 2))
    u, v = _grid(res)
    d = np.sqrt((u[..., None] - pts[:, 0]) ** 2 + (v[..., None] - pts[:, 1]) ** 2)
    nearest = np.argmin(d, axis=-1)
    two = np.partition(d, 1, axis=-1)
    return two[..., 0], two[..., 1], nearest


def tile_grid(res: int, tiles: int, grout: float) -> tuple[np.ndarray, np.ndarray]:
    """Mask (1 inside tiles, 0 in grout) and per-pixel tile index for a square tiling."""
    u, v = _grid(res)
    fu = (u * tiles) % 1.0
    fv = (v * tiles) % 1.0
    half = grout * 0.5
    edge = np.minimum.reduce([fu, 1 - fu, fv, 1 - fv])
    mask = smoothstep(np.clip((edge - half) / max(half, 1e-6), 0.0, 1.0))
    index = np.floor(v * tiles).astype(int) * tiles + np.floor(u * tiles).astype(int)
    return mask, index


def coords(res: int) -> tuple[np.ndarray, np.ndarray]:
    return _grid(res)
