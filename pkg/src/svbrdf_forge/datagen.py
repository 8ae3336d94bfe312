"""Procedural material generators and the reproducible on-disk dataset pipeline.

Each of the nine material classes has a hand-written generator driven by value
noise, cellular noise and tiling patterns. A dataset sample is a perturbed
generator output (or a convex blend of two), randomly rotated, magnified and
cropped, then photographed under a flash with a random light offset.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import noise
from .core import (
    BUNDLE_FILES,
    MATERIAL_CLASSES,
    MaterialClass,
    SvbrdfMaps,
    _bundle_codes,
    _maps_from_codes,
    blend_svbrdfs,
    transform_svbrdf,
)
from .pngio import quantize16, write_png16
from .render import FlashScene, render_flash_input

GENERATOR_VERSION = "1"
DEFAULT_COUNT = 500
DEFAULT_BLEND_FRACTION = 0.5
OVERSIZE = 1.25  # stored samples are this much larger than the network input
LIGHT_OFFSET_RADIUS = 0.4
CROP_JITTER = 0.2  # plane units, crop centre offset from the base centre
SCALE_RANGE = (1.0, 1.5)
TEST_EVERY = 20  # index % 20 == 19 goes to the held-out split (95/5)
SAMPLE_FILES = ("input.png",) + BUNDLE_FILES + ("meta.json",)


class DatasetError(RuntimeError):
    pass


# -- generators -------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lo: float
    default: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo <= self.default <= self.hi:
            raise ValueError(f"parameter {self.name}: need min <= default <= max")


@dataclass(frozen=True)
class Layers:
    height: np.ndarray  # relief in plane units
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray


@dataclass(frozen=True)
class MaterialGenerator:
    material_class: MaterialClass
    params: tuple[ParamSpec, ...]
    build: Callable[[dict, np.random.Generator, int], Layers]

    def defaults(self) -> dict[str, float]:
        return {p.name: p.default for p in self.params}

    def with_ranges(self, **ranges: tuple[float, float]) -> MaterialGenerator:
        """Copy with some parameter ranges replaced (defaults are clamped into range)."""
        specs = []
        for p in self.params:
            if p.name in ranges:
                lo, hi = ranges[p.name]
                specs.append(ParamSpec(p.name, lo, min(max(p.default, lo), hi), hi))
            else:
                specs.append(p)
        return MaterialGenerator(self.material_class, tuple(specs), self.build)

    def generate(self, values: dict | None, seed: int, resolution: int) -> SvbrdfMaps:
        """Pure function of (parameter values, seed, resolution)."""
        vals = self.defaults()
        if values:
            unknown = set(values) - set(vals)
            if unknown:
                raise ValueError(f"unknown parameters for {self.material_class.value}: {sorted(unknown)}")
            vals.update(values)
        rng = np.random.default_rng(seed)
        layers = self.build(vals, rng, resolution)
        return SvbrdfMaps(
            normal=height_to_normal(layers.height),
            diffuse=np.clip(layers.diffuse, 0.0, 1.0),
            specular=np.clip(layers.specular, 0.0, 1.0),
            roughness=np.clip(layers.roughness, 0.02, 1.0),
        )


def height_to_normal(height: np.ndarray) -> np.ndarray:
    """Surface normals (y up) of a height field given in plane units over [-1, 1]^2."""
    res = height.shape[0]
    d_row, d_col = np.gradient(height)
    dx = d_col * (res / 2.0)
    dy = -d_row * (res / 2.0)
    n = np.stack([-dx, -dy, np.ones_like(dx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _rgb(hue: float, sat: float, val: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val))


def _tint(base: np.ndarray, field: np.ndarray, amount: float) -> np.ndarray:
    """Modulate a base colour by a [0, 1] field, +-amount around 1."""
    return base * (1.0 + amount * (2.0 * field[..., None] - 1.0))


def _grey(v: np.ndarray) -> np.ndarray:
    return np.repeat(v[..., None], 3, axis=-1)


def _paint(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    mottle = noise.fbm(rng, res, 4, octaves=4)
    f1, f2, _ = noise.worley(rng, res, 24)
    chips = noise.smoothstep(np.clip((f2 - f1 - (0.12 - 0.1 * p["chipping"])) * 40, 0, 1))
    chips = np.where(p["chipping"] > 0, chips, 1.0)  # 1 = painted
    primer = np.array([0.55, 0.55, 0.52])
    diffuse = _tint(base, mottle, 0.08) * chips[..., None] + primer * (1 - chips[..., None])
    rough = p["roughness"] + 0.25 * (1 - chips) + 0.05 * (mottle - 0.5)
    height = 0.004 * chips + p["relief"] * 0.01 * noise.fbm(rng, res, 16, octaves=3)
    return Layers(height, diffuse, _grey(np.full((res, res), p["specular"])), rough)


def _plastic(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    bumps = noise.fbm(rng, res, p["bump_cells"], octaves=3)
    diffuse = _tint(base, noise.fbm(rng, res, 3, octaves=2), 0.04)
    rough = p["roughness"] * (0.85 + 0.3 * bumps)
    spec = _grey(np.full((res, res), p["specular"]))
    return Layers(p["relief"] * 0.01 * bumps, diffuse, spec, rough)


def _leather(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    f1, f2, _ = noise.worley(rng, res, int(p["grain_cells"] ** 2 / 4))
    crease = np.clip((f2 - f1) * p["grain_cells"] * 0.8, 0.0, 1.0)
    wear = noise.fbm(rng, res, 3, octaves=3)
    diffuse = _tint(base, 0.6 * crease + 0.4 * wear, 0.25)
    rough = p["roughness"] + 0.2 * (1 - crease) - 0.1 * wear
    spec = _grey(p["specular"] * (0.6 + 0.4 * crease))
    return Layers(p["relief"] * 0.004 * np.sqrt(crease), diffuse, spec, rough)


def _metal(p, rng, res) -> Layers:
    tint = _rgb(p["hue"], p["tint"], p["brightness"])
    brushed = noise.fbm(rng, res, 6, octaves=4, stretch=(1.0, p["brush_stretch"]))
    f1, _, _ = noise.worley(rng, res, max(2, int(40 * p["scratches"])))
    scratch = np.exp(-((f1 * res / 2.0) ** 2)) * (p["scratches"] > 0)
    spec = _tint(tint, brushed, 0.1) * (1 - 0.3 * scratch[..., None])
    diffuse = _grey(0.02 + 0.04 * brushed + 0.1 * scratch)
    rough = p["roughness"] * (0.8 + 0.4 * brushed) + 0.2 * scratch
    height = p["relief"] * 0.003 * brushed - 0.002 * scratch
    return Layers(height, diffuse, spec, rough)


def _wood(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    u, v = noise.coords(res)
    warp = noise.fbm(rng, res, 2, octaves=3)
    grain = noise.fbm(rng, res, 8, octaves=3, stretch=(0.25, 4.0))
    rings = 0.5 + 0.5 * np.sin(2 * math.pi * (p["ring_frequency"] * (u + 0.6 * warp) + 0.3 * grain))
    mix = 1.0 - p["ring_contrast"] * rings
    diffuse = base * mix[..., None]
    rough = p["roughness"] + 0.15 * rings
    spec = _grey(np.full((res, res), 0.04))
    return Layers(0.003 * grain + 0.002 * rings, diffuse, spec, rough)


def _fabric(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    u, v = noise.coords(res)
    f = p["weave_frequency"]
    warp_thread = 0.5 + 0.5 * np.sin(2 * math.pi * f * u)
    weft_thread = 0.5 + 0.5 * np.sin(2 * math.pi * f * v)
    over = (np.floor(f * u * 2) + np.floor(f * v * 2)) % 2
    weave = np.where(over > 0, warp_thread, weft_thread)
    fuzz = noise.fbm(rng, res, 20, octaves=2)
    diffuse = _tint(base, 0.7 * weave + 0.3 * fuzz, 0.2 + 0.3 * p["fuzz"])
    rough = p["roughness"] - 0.1 * weave + 0.1 * p["fuzz"] * fuzz
    spec = _grey(0.03 + 0.02 * weave)
    return Layers(p["weave_depth"] * 0.004 * weave, diffuse, spec, rough)


def _stone(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    f1, f2, idx = noise.worley(rng, res, int(p["cells"]))
    cell_tone = rng.random(int(p["cells"]) + 2)[np.minimum(idx, int(p["cells"]) + 1)]
    crack = noise.smoothstep(np.clip((f2 - f1) * 30, 0, 1))
    grit = noise.fbm(rng, res, 12, octaves=4)
    diffuse = _tint(base, 0.5 * cell_tone + 0.5 * grit, p["variation"]) * (0.4 + 0.6 * crack[..., None])
    rough = p["roughness"] + 0.2 * (1 - crack) + 0.1 * (grit - 0.5)
    spec = _grey(0.04 + 0.03 * cell_tone)
    height = p["crack_depth"] * 0.006 * crack + 0.003 * grit
    return Layers(height, diffuse, spec, rough)


def _tiles(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    n = int(round(p["tiles"]))
    mask, idx = noise.tile_grid(res, n, p["grout_width"])
    per_tile = rng.random((n * n, 3))
    tile_rough = p["roughness"] + p["roughness_spread"] * (per_tile[idx, 0] - 0.5)
    tile_col = _tint(base, per_tile[idx, 1], 0.15)
    grout_col = _grey(np.full((res, res), 0.35 + 0.3 * per_tile[0, 2]))
    m = mask[..., None]
    diffuse = tile_col * m + grout_col * (1 - m)
    rough = tile_rough * mask + 0.9 * (1 - mask)
    spec = _grey(p["specular"] * mask + 0.03 * (1 - mask))
    height = 0.006 * mask + 0.001 * noise.fbm(rng, res, 10, octaves=2)
    return Layers(height, diffuse, spec, rough)


def _ground(p, rng, res) -> Layers:
    base = _rgb(p["hue"], p["saturation"], p["value"])
    dirt = noise.fbm(rng, res, 6, octaves=5)
    f1, _, _ = noise.worley(rng, res, int(p["pebbles"]))
    pebble = np.clip(1.0 - f1 / p["pebble_size"], 0.0, 1.0) ** 0.5
    pebble_col = np.array([0.45, 0.43, 0.40])
    m = pebble[..., None] > 0
    diffuse = np.where(m, pebble_col * (0.7 + 0.6 * pebble[..., None]), _tint(base, dirt, 0.3))
    rough = np.where(pebble > 0, p["roughness"] - 0.3, p["roughness"]) + 0.05 * dirt
    spec = _grey(np.where(pebble > 0, 0.06, 0.025))
    height = 0.01 * pebble * p["pebble_size"] * 4 + 0.004 * dirt
    return Layers(height, diffuse, spec, rough)


def _colour_params(hue, sat, val) -> tuple[ParamSpec, ...]:
    return (ParamSpec("hue", *hue), ParamSpec("saturation", *sat), ParamSpec("value", *val))


GENERATORS: dict[MaterialClass, MaterialGenerator] = {
    MaterialClass.PAINT: MaterialGenerator(
        MaterialClass.PAINT,
        _colour_params((0.0, 0.3, 1.0), (0.2, 0.6, 0.9), (0.3, 0.6, 0.9))
        + (ParamSpec("roughness", 0.15, 0.35, 0.7), ParamSpec("specular", 0.02, 0.04, 0.08),
           ParamSpec("chipping", 0.0, 0.3, 1.0), ParamSpec("relief", 0.0, 0.3, 1.0)),
        _paint,
    ),
    MaterialClass.PLASTIC: MaterialGenerator(
        MaterialClass.PLASTIC,
        _colour_params((0.0, 0.6, 1.0), (0.3, 0.7, 1.0), (0.2, 0.6, 0.9))
        + (ParamSpec("roughness", 0.05, 0.25, 0.6), ParamSpec("specular", 0.03, 0.045, 0.07),
           ParamSpec("bump_cells", 4.0, 12.0, 32.0), ParamSpec("relief", 0.0, 0.2, 1.0)),
        _plastic,
    ),
    MaterialClass.LEATHER: MaterialGenerator(
        MaterialClass.LEATHER,
        _colour_params((0.0, 0.07, 0.15), (0.3, 0.6, 0.9), (0.1, 0.35, 0.7))
        + (ParamSpec("grain_cells", 10.0, 24.0, 40.0), ParamSpec("roughness", 0.3, 0.5, 0.8),
           ParamSpec("specular", 0.03, 0.05, 0.1), ParamSpec("relief", 0.3, 1.0, 2.0)),
        _leather,
    ),
    MaterialClass.METAL: MaterialGenerator(
        MaterialClass.METAL,
        (ParamSpec("hue", 0.0, 0.1, 1.0), ParamSpec("tint", 0.0, 0.1, 0.5),
         ParamSpec("brightness", 0.5, 0.8, 0.95), ParamSpec("roughness", 0.05, 0.2, 0.45),
         ParamSpec("brush_stretch", 1.0, 4.0, 8.0), ParamSpec("scratches", 0.0, 0.3, 1.0),
         ParamSpec("relief", 0.0, 0.5, 1.0)),
        _metal,
    ),
    MaterialClass.WOOD: MaterialGenerator(
        MaterialClass.WOOD,
        _colour_params((0.03, 0.07, 0.11), (0.4, 0.65, 0.85), (0.3, 0.55, 0.8))
        + (ParamSpec("ring_frequency", 2.0, 6.0, 14.0), ParamSpec("ring_contrast", 0.1, 0.35, 0.6),
           ParamSpec("roughness", 0.2, 0.45, 0.8)),
        _wood,
    ),
    MaterialClass.FABRIC: MaterialGenerator(
        MaterialClass.FABRIC,
        _colour_params((0.0, 0.6, 1.0), (0.1, 0.5, 0.9), (0.2, 0.5, 0.9))
        + (ParamSpec("weave_frequency", 6.0, 12.0, 24.0), ParamSpec("weave_depth", 0.3, 1.0, 2.0),
           ParamSpec("fuzz", 0.0, 0.4, 1.0), ParamSpec("roughness", 0.6, 0.8, 1.0)),
        _fabric,
    ),
    MaterialClass.STONE: MaterialGenerator(
        MaterialClass.STONE,
        _colour_params((0.0, 0.08, 0.2), (0.0, 0.15, 0.4), (0.3, 0.55, 0.85))
        + (ParamSpec("cells", 6.0, 16.0, 40.0), ParamSpec("crack_depth", 0.2, 1.0, 2.0),
           ParamSpec("variation", 0.05, 0.2, 0.4), ParamSpec("roughness", 0.4, 0.6, 0.9)),
        _stone,
    ),
    MaterialClass.TILES: MaterialGenerator(
        MaterialClass.TILES,
        _colour_params((0.0, 0.55, 1.0), (0.0, 0.4, 0.9), (0.4, 0.7, 0.95))
        + (ParamSpec("tiles", 2.0, 4.0, 8.0), ParamSpec("grout_width", 0.04, 0.08, 0.16),
           ParamSpec("roughness", 0.05, 0.2, 0.5), ParamSpec("roughness_spread", 0.0, 0.1, 0.3),
           ParamSpec("specular", 0.04, 0.06, 0.12)),
        _tiles,
    ),
    MaterialClass.GROUND: MaterialGenerator(
        MaterialClass.GROUND,
        _colour_params((0.02, 0.08, 0.15), (0.2, 0.45, 0.7), (0.15, 0.35, 0.6))
        + (ParamSpec("pebbles", 4.0, 20.0, 60.0), ParamSpec("pebble_size", 0.02, 0.05, 0.1),
           ParamSpec("roughness", 0.6, 0.85, 1.0)),
        _ground,
    ),
}


def generator_for(material_class: MaterialClass | str) -> MaterialGenerator:
    return GENERATORS[MaterialClass(material_class)]


def generate_base_material(material_class: MaterialClass | str, seed: int, resolution: int = 128) -> SvbrdfMaps:
    """The class generator at its default parameters."""
    return generator_for(material_class).generate(None, seed, resolution)


def draw_parameters(gen: MaterialGenerator, seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    return {p.name: float(rng.uniform(p.lo, p.hi)) for p in gen.params}


def perturb_material(gen: MaterialGenerator, seed: int, resolution: int = 128) -> SvbrdfMaps:
    """Every parameter drawn uniformly within its range, then the maps regenerated."""
    return gen.generate(draw_parameters(gen, seed), seed, resolution)


# -- dataset ----------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    count: int = DEFAULT_COUNT
    seed: int = 0
    resolution: int = 64  # network input size; stored samples are OVERSIZE times larger
    blend_fraction: float = DEFAULT_BLEND_FRACTION

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not 0.0 <= self.blend_fraction <= 1.0:
            raise ValueError("blend_fraction must lie in [0, 1]")
        if self.resolution < 4:
            raise ValueError("resolution too small")

    @property
    def stored_resolution(self) -> int:
        return int(round(self.resolution * OVERSIZE))

    @property
    def base_resolution(self) -> int:
        return 2 * self.stored_resolution


def is_test_index(index: int) -> bool:
    return index % TEST_EVERY == TEST_EVERY - 1


def _draw_record(spec: DatasetSpec, index: int) -> dict:
    """All random decisions for one sample, from its own stream."""
    rng = np.random.default_rng([spec.seed, index])
    blended = bool(rng.random() < spec.blend_fraction)
    sources = []
    for _ in range(2 if blended else 1):
        cls = MATERIAL_CLASSES[int(rng.integers(len(MATERIAL_CLASSES)))]
        mseed = int(rng.integers(2**31))
        sources.append({"class": cls.value, "seed": mseed, "params": draw_parameters(GENERATORS[cls], mseed)})
    alpha = float(rng.random()) if blended else None
    base = spec.base_resolution
    size = spec.stored_resolution
    rotation = float(rng.uniform(0.0, 2.0 * math.pi))
    scale = float(rng.uniform(*SCALE_RANGE))
    cx, cy = rng.uniform(-CROP_JITTER, CROP_JITTER, 2)
    x0 = int(round((cx + 1.0) * 0.5 * base - size / 2))
    y0 = int(round((1.0 - cy) * 0.5 * base - size / 2))
    r = LIGHT_OFFSET_RADIUS * math.sqrt(rng.random())
    phi = 2.0 * math.pi * rng.random()
    offset = [r * math.cos(phi), r * math.sin(phi)]
    return {
        "index": index,
        "split": "test" if is_test_index(index) else "train",
        "sources": sources,
        "alpha": alpha,
        "rotation": rotation,
        "scale": scale,
        "crop": [x0, y0, size],
        "base_resolution": base,
        "light_offset": offset,
        "exposure": FlashScene(light_offset=tuple(offset)).exposure,
    }


def realize_record(record: dict) -> tuple[np.ndarray, SvbrdfMaps]:
    """Input image codes (uint16) and the quantized ground truth for a manifest row."""
    base = record["base_resolution"]
    mats = [
        GENERATORS[MaterialClass(s["class"])].generate(s["params"], s["seed"], base) for s in record["sources"]
    ]
    maps = mats[0] if record["alpha"] is None else blend_svbrdfs(mats[0], mats[1], record["alpha"])
    maps = transform_svbrdf(maps, record["rotation"], record["scale"], tuple(record["crop"]))
    # the input is rendered from exactly what is stored on disk
    maps = _maps_from_codes(_bundle_codes(maps))
    scene = FlashScene(light_offset=tuple(record["light_offset"]))
    return quantize16(render_flash_input(maps, scene)), maps


def sample_dir(out_dir: Path, index: int) -> Path:
    return Path(out_dir) / f"{index:06d}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_sample(out_dir: Path, record: dict) -> dict[str, str]:
    index = record["index"]
    try:
        codes, maps = realize_record(record)
        d = sample_dir(out_dir, index)
        d.mkdir(parents=True, exist_ok=True)
        write_png16(d / "input.png", codes)
        for name, c in _bundle_codes(maps).items():
            write_png16(d / name, c)
        meta = {
            "resolution": maps.resolution,
            "class": "+".join(s["class"] for s in record["sources"]),
            "seed": record["sources"][0]["seed"],
            "index": index,
        }
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
        return {name: _sha256(d / name) for name in SAMPLE_FILES}
    except (OSError, ValueError) as exc:
        raise DatasetError(f"sample {index}: {exc}") from exc


def worker_count() -> int:
    env = os.environ.get("SVBRDF_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _map_parallel(fn, items, threads: int | None):
    threads = threads or worker_count()
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # results come back in submission order


def synthesize_dataset(spec: DatasetSpec, out_dir: str | Path, threads: int | None = None) -> dict:
    """Generate ``spec.count`` samples into ``out_dir`` and write manifest.json."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {out_dir}: {exc}") from exc
    records = [_draw_record(spec, i) for i in range(spec.count)]
    hashes = _map_parallel(lambda r: _write_sample(out_dir, r), records, threads)
    for rec, h in zip(records, hashes):
        rec["files"] = h
    n_blend = sum(r["alpha"] is not None for r in records)
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "seed": spec.seed,
        "count": spec.count,
        "resolution": spec.resolution,
        "stored_resolution": spec.stored_resolution,
        "blend_fraction": spec.blend_fraction,
        "counts": {
            "variants": spec.count - n_blend,
            "blends": n_blend,
            "train": sum(r["split"] == "train" for r in records),
            "test": sum(r["split"] == "test" for r in records),
        },
        "samples": records,
    }
    path = out_dir / "manifest.json"
    try:
        path.write_text(canonical_json(manifest))
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc
    return manifest


def load_manifest(out_dir: str | Path) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text())


def manifest_hash(out_dir: str | Path) -> str:
    path = Path(out_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    return _sha256(path)


def replay_dataset(out_dir: str | Path, threads: int | None = None) -> list[int]:
    """Regenerate every sample listed in the manifest; return indices whose files
    do not match the recorded hashes (empty on a faithful replay)."""
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    records = manifest["samples"]
    hashes = _map_parallel(lambda r: _write_sample(out_dir, r), records, threads)
    return [r["index"] for r, h in zip(records, hashes) if h != r["files"]]
