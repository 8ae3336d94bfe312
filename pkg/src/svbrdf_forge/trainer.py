"""Adam, the training loop over a synthesized dataset, and RMSE evaluation."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import loss as L
from . import network as N
from . import tensor as T
from .core import BUNDLE_FILES, SvbrdfMaps, _maps_from_codes, encode_normal
from .datagen import load_manifest, sample_dir
from .pngio import dequantize16, read_png_codes
from .render import RenderConfig, sample_render_config, shade_arrays, tonemap_log

LEARNING_RATE = 2e-5
BATCH_SIZE = 8
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
EVAL_LIGHTS_SEED = 0
N_EVAL_DIFFUSE = 10
N_EVAL_MIRROR = 10
SCALE_GRID = np.geomspace(0.1, 10.0, 401)


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, indices: Sequence[int], loss_seeds: Sequence[int], detail: str):
        self.iteration = iteration
        self.indices = list(indices)
        self.loss_seeds = list(loss_seeds)
        super().__init__(
            f"non-finite loss at iteration {iteration} (samples {self.indices}, loss seeds {self.loss_seeds}): {detail}"
        )


# -- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = LEARNING_RATE,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameters and state.

    Moments are kept in float64; parameters keep their dtype.
    """
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names differ")
    b1, b2 = betas
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(k, np.zeros(p.shape))
        v = state.v.get(k, np.zeros(p.shape))
        if m.shape != p.shape:
            raise ValueError(f"optimizer state for {k} has shape {m.shape}, parameter has {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[k] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t)


# -- dataset ----------------------------------------------------------------------


@dataclass
class Dataset:
    """Samples held in memory at stored resolution; inputs are linear LDR."""

    indices: np.ndarray
    inputs: np.ndarray  # (M, S, S, 3) float32
    normal: np.ndarray  # (M, S, S, 3) float64
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: np.ndarray  # (M, S, S)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def stored_resolution(self) -> int:
        return self.inputs.shape[1]

    def maps(self, i: int, window: tuple[int, int, int] | None = None) -> SvbrdfMaps:
        y0, x0, size = window if window else (0, 0, self.stored_resolution)
        sl = (i, slice(y0, y0 + size), slice(x0, x0 + size))
        return SvbrdfMaps(self.normal[sl], self.diffuse[sl], self.specular[sl], self.roughness[sl])

    def crop_input(self, i: int, window: tuple[int, int, int]) -> np.ndarray:
        y0, x0, size = window
        return self.inputs[i, y0 : y0 + size, x0 : x0 + size]


def _read_codes(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing sample file: {path}")
    codes, depth = read_png_codes(path)
    if depth != 16:
        raise ValueError(f"{path}: expected a 16-bit PNG, got {depth}-bit")
    return codes


def load_dataset(root: str | Path, split: str | None = "train") -> Dataset:
    """Load the ``train`` or ``test`` split (or everything with ``split=None``)."""
    root = Path(root)
    manifest = load_manifest(root)
    rows = [r for r in manifest["samples"] if split is None or r["split"] == split]
    if not rows:
        raise ValueError(f"{root}: no samples in split {split!r}")
    inputs, maps = [], []
    for r in rows:
        d = sample_dir(root, r["index"])
        inputs.append(dequantize16(_read_codes(d / "input.png")).astype(np.float32))
        maps.append(_maps_from_codes({name: _read_codes(d / name) for name in BUNDLE_FILES}))
    return Dataset(
        indices=np.array([r["index"] for r in rows]),
        inputs=np.stack(inputs),
        normal=np.stack([m.normal for m in maps]),
        diffuse=np.stack([m.diffuse for m in maps]),
        specular=np.stack([m.specular for m in maps]),
        roughness=np.stack([m.roughness for m in maps]),
    )


def centre_window(stored: int, size: int) -> tuple[int, int, int]:
    o = (stored - size) // 2
    return (o, o, size)


# -- training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr: float = LEARNING_RATE
    batch: int = BATCH_SIZE
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final checkpoint only
    loss: str = "rendering"  # or "l1"
    n_diffuse: int = L.N_DIFFUSE_CONFIGS
    n_mirror: int = L.N_MIRROR_CONFIGS

    def __post_init__(self) -> None:
        if self.iterations < 0 or self.batch < 1:
            raise ValueError("iterations must be >= 0 and batch >= 1")
        if self.loss not in ("rendering", "l1"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainResult:
    weights: N.Weights | None = None
    losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def _iteration_batch(data: Dataset, tc: TrainConfig, res: int, it: int):
    """Batch indices, crop windows and per-sample loss seeds for one iteration."""
    rng = np.random.default_rng([tc.seed, it])
    idx = rng.integers(len(data), size=tc.batch)
    span = data.stored_resolution - res + 1
    offsets = rng.integers(span, size=(tc.batch, 2))
    loss_seeds = rng.integers(2**63, size=tc.batch)
    windows = [(int(y), int(x), res) for y, x in offsets]
    return [int(i) for i in idx], windows, [int(s) for s in loss_seeds]


def train(
    data: Dataset,
    net_cfg: N.NetworkConfig,
    tc: TrainConfig,
    out_dir: str | Path | None = None,
    init: N.Weights | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Adam on the batch-mean loss. Writes loss.csv and checkpoints into ``out_dir``."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    res = net_cfg.input_resolution
    if data.stored_resolution < res:
        raise ValueError(f"stored samples ({data.stored_resolution}) smaller than the network input ({res})")
    weights = init.copy() if init is not None else N.init_weights(net_cfg, tc.seed)
    state = AdamState()
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult(weights=weights)
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "loss.csv", "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["iteration", "loss", "wallclock_ms"])
    start = time.perf_counter()
    try:
        for it in range(tc.iterations):
            idx, windows, loss_seeds = _iteration_batch(data, tc, res, it)
            x = tonemap_log(np.stack([data.crop_input(i, w) for i, w in zip(idx, windows)])).astype(np.float32)
            gts = [data.maps(i, w) for i, w in zip(idx, windows)]
            tensors = weights.tensors()
            try:
                with T.Tape() as tape:
                    raw = N.forward(x, tensors, net_cfg, mode="train", rng=np.random.default_rng([tc.seed, it, 1]))
                    if tc.loss == "rendering":
                        configs = [
                            L.sample_loss_configs(np.random.default_rng(s), tc.n_diffuse, tc.n_mirror)
                            for s in loss_seeds
                        ]
                        loss, _ = L.rendering_loss_node(raw, gts, configs)
                    else:
                        loss = L.l1_loss_node(raw, gts)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise T.NonFiniteError(f"loss = {value}")
                names = list(tensors)
                grads = T.backward(tape, loss, [tensors[k] for k in names])
            except T.NonFiniteError as exc:
                raise TrainingDiverged(it, [int(data.indices[i]) for i in idx], loss_seeds, str(exc)) from exc
            new_arrays, state = adam_step(weights.arrays, dict(zip(names, grads)), state, lr=tc.lr)
            weights = N.Weights(net_cfg, {k: new_arrays[k] for k in weights.arrays})
            result.losses.append(value)
            if log_fh is not None:
                writer.writerow([it, repr(value), int((time.perf_counter() - start) * 1000)])
            if log_every and (it + 1) % log_every == 0:
                recent = np.mean(result.losses[-log_every:])
                print(f"iteration {it + 1}/{tc.iterations}  loss {recent:.4f}", flush=True)
            if out is not None and tc.checkpoint_every and (it + 1) % tc.checkpoint_every == 0:
                path = out / f"ckpt_{it + 1:06d}.svbf"
                weights.save(path)
                result.checkpoints.append(path)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        path = out / "final.svbf"
        weights.save(path)
        result.checkpoints.append(path)
    result.weights = weights
    return result


def read_loss_log(path: str | Path) -> list[tuple[int, float]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no loss log at {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["iteration"]), float(r["loss"])) for r in rows]


# -- evaluation -------------------------------------------------------------------


def generate_eval_configs(seed: int = EVAL_LIGHTS_SEED) -> list[RenderConfig]:
    rng = np.random.default_rng(seed)
    return [sample_render_config(rng, "diffuse_set") for _ in range(N_EVAL_DIFFUSE)] + [
        sample_render_config(rng, "mirror_set") for _ in range(N_EVAL_MIRROR)
    ]


def eval_configs() -> list[RenderConfig]:
    """The frozen list of 20 evaluation lights shipped with the package."""
    text = resources.files("svbrdf_forge").joinpath("data/eval_lights.json").read_text()
    return [RenderConfig.from_dict(d) for d in json.loads(text)]


def _maps_rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _renderings(normal, diffuse, specular, roughness, configs) -> np.ndarray:
    return np.stack([np.clip(shade_arrays(normal, diffuse, specular, roughness, c)[0], 0.0, 1.0) for c in configs])


def _lobes(maps: SvbrdfMaps, configs) -> tuple[np.ndarray, np.ndarray]:
    """Unclipped renderings split as ``full = rd + rs`` with ``rd`` linear in the diffuse albedo.

    Zeroing the specular map does not silence the specular lobe (the Schlick
    term survives F0 = 0), so the diffuse part is taken as a difference.
    """
    zero = np.zeros_like(maps.diffuse)
    full = np.stack([shade_arrays(maps.normal, maps.diffuse, maps.specular, maps.roughness, c)[0] for c in configs])
    rs = np.stack([shade_arrays(maps.normal, zero, maps.specular, maps.roughness, c)[0] for c in configs])
    return full - rs, rs


def rerender_rmse(pred: SvbrdfMaps, gt: SvbrdfMaps, configs: Sequence[RenderConfig], diffuse_scale: float = 1.0) -> float:
    """RMSE between clipped renderings of two SVBRDFs, pooled over ``configs``."""
    rp = _renderings(pred.normal, pred.diffuse * diffuse_scale, pred.specular, pred.roughness, configs)
    rg = _renderings(gt.normal, gt.diffuse, gt.specular, gt.roughness, configs)
    return _maps_rmse(rp, rg)


def map_errors(pred: SvbrdfMaps, gt: SvbrdfMaps) -> dict[str, float]:
    return {
        "normal": _maps_rmse(encode_normal(pred.normal), encode_normal(gt.normal)),
        "diffuse": _maps_rmse(pred.diffuse, gt.diffuse),
        "specular": _maps_rmse(pred.specular, gt.specular),
        "roughness": _maps_rmse(pred.roughness, gt.roughness),
    }


def rmse_report(
    preds: Sequence[SvbrdfMaps],
    gts: Sequence[SvbrdfMaps],
    configs: Sequence[RenderConfig] | None = None,
    scale_grid: np.ndarray = SCALE_GRID,
) -> dict:
    """Mean per-map RMSE, re-rendering RMSE, and the best single diffuse-albedo scale."""
    if len(preds) != len(gts) or not preds:
        raise ValueError("need equally many (>= 1) predictions and ground truths")
    configs = list(configs) if configs is not None else eval_configs()
    per_sample = [map_errors(p, g) for p, g in zip(preds, gts)]
    rerender = [rerender_rmse(p, g, configs) for p, g in zip(preds, gts)]
    # one scale for the whole set, chosen to minimize the mean re-rendering RMSE;
    # radiance is linear in the diffuse albedo, so render both lobes once
    gt_r = [_renderings(g.normal, g.diffuse, g.specular, g.roughness, configs) for g in gts]
    lobes = [_lobes(p, configs) for p in preds]
    scaled = np.array(
        [np.mean([_maps_rmse(np.clip(s * rd + rs, 0.0, 1.0), r) for (rd, rs), r in zip(lobes, gt_r)]) for s in scale_grid]
    )
    best = int(np.argmin(scaled))
    report = {k: float(np.mean([e[k] for e in per_sample])) for k in ("normal", "diffuse", "specular", "roughness")}
    report.update(
        {
            "rerender": float(np.mean(rerender)),
            "rerender_per_sample": [float(x) for x in rerender],
            "best_diffuse_scale": float(scale_grid[best]),
            "rerender_scaled": float(scaled[best]),
            "samples": len(preds),
        }
    )
    return report


def predict_maps(weights: N.Weights, inputs: np.ndarray, chunk: int = 8) -> list[SvbrdfMaps]:
    """Decoded predictions for linear LDR inputs (M, R, R, 3)."""
    out = []
    for start in range(0, len(inputs), chunk):
        x = tonemap_log(inputs[start : start + chunk]).astype(np.float32)
        raw = N.predict(x, weights)
        out.extend(N.decode_prediction(r) for r in raw)
    return out


def mean_maps(data: Dataset, resolution: int) -> SvbrdfMaps:
    """Constant SVBRDF holding the dataset's mean normal, albedos and roughness."""
    n = data.normal.reshape(-1, 3).mean(axis=0)
    n = n / np.linalg.norm(n)
    return SvbrdfMaps.uniform(
        resolution,
        normal=tuple(n),
        diffuse=tuple(data.diffuse.reshape(-1, 3).mean(axis=0)),
        specular=tuple(data.specular.reshape(-1, 3).mean(axis=0)),
        roughness=float(data.roughness.mean()),
    )


def evaluate_rmse(weights: N.Weights, test: Dataset, baseline_from: Dataset | None = None) -> dict:
    """Table-style report on centre crops of the test split.

    With ``baseline_from`` (normally the training split), the constant
    dataset-mean SVBRDF is scored too, and the fraction of test samples whose
    re-rendering RMSE beats it is reported.
    """
    res = weights.config.input_resolution
    win = centre_window(test.stored_resolution, res)
    inputs = np.stack([test.crop_input(i, win) for i in range(len(test))])
    gts = [test.maps(i, win) for i in range(len(test))]
    preds = predict_maps(weights, inputs)
    report = {"network": rmse_report(preds, gts), "test_indices": [int(i) for i in test.indices]}
    if baseline_from is not None:
        base = mean_maps(baseline_from, res)
        report["baseline"] = rmse_report([base] * len(gts), gts)
        net = report["network"]["rerender_per_sample"]
        ref = report["baseline"]["rerender_per_sample"]
        report["beats_baseline_fraction"] = float(np.mean([a < b for a, b in zip(net, ref)]))
    return report


def format_report(report: dict) -> str:
    """Plain-text table: one row per estimator, one column per map."""
    cols = ("normal", "diffuse", "specular", "roughness", "rerender", "rerender_scaled", "best_diffuse_scale")
    lines = ["estimator  " + "  ".join(f"{c:>18}" for c in cols)]
    for name in ("network", "baseline"):
        if name in report:
            r = report[name]
            lines.append(f"{name:<10} " + "  ".join(f"{r[c]:>18.6f}" for c in cols))
    if "beats_baseline_fraction" in report:
        lines.append(f"test samples beating the baseline: {report['beats_baseline_fraction']:.1%}")
    return "\n".join(lines)


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")


def train_config_dict(tc: TrainConfig) -> dict:
    return asdict(tc)
