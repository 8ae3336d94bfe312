"""Command-line entry point: ``svbrdf-forge <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` holding flat ``key = value`` lines
(keys are flag names with or without leading dashes; ``#`` starts a comment).
Config values replace the built-in defaults; flags given on the command line
win over both. ``SVBRDF_THREADS`` caps the worker and BLAS thread counts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

NETWORK_PRESETS = ("desk", "desk32", "full")


class UsageError(ValueError):
    pass


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _network_config(preset: str):
    from . import network as N

    return {"desk": N.NetworkConfig.desk, "desk32": N.NetworkConfig.desk32, "full": N.NetworkConfig.full}[preset]()


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    from . import datagen as D

    spec = D.DatasetSpec(count=args.count, seed=args.seed, resolution=args.resolution, blend_fraction=args.blend_fraction)
    manifest = D.synthesize_dataset(spec, args.out)
    c = manifest["counts"]
    print(f"wrote {spec.count} samples ({c['variants']} variants, {c['blends']} blends) to {args.out}")
    print(f"manifest sha256 {D.manifest_hash(args.out)}")
    return 0


def cmd_train(args) -> int:
    from . import network as N
    from . import trainer as TR

    data = TR.load_dataset(args.data, "train")
    net_cfg = _network_config(args.network)
    tc = TR.TrainConfig(
        iterations=args.iterations,
        lr=args.lr,
        batch=args.batch,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        loss=args.loss,
    )
    init = N.Weights.load(args.init) if args.init else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.json").write_text(
        json.dumps({"train": TR.train_config_dict(tc), "network": net_cfg.to_dict(), "data": str(args.data)},
                   sort_keys=True, indent=1) + "\n"
    )
    result = TR.train(data, net_cfg, tc, out_dir=out, init=init, log_every=args.log_every)
    if result.losses:
        k = min(100, len(result.losses))
        print(f"first-{k} mean loss {np.mean(result.losses[:k]):.5f}, last-{k} mean loss {np.mean(result.losses[-k:]):.5f}")
    print(f"checkpoint {out / 'final.svbf'}")
    return 0


def _load_input_image(path: Path, srgb: bool) -> np.ndarray:
    from .pngio import read_png

    if not path.is_file():
        raise FileNotFoundError(f"input image not found: {path}")
    img = read_png(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    return img**2.2 if srgb else img


def _centre_crop(img: np.ndarray, size: int, path: Path) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise UsageError(f"{path}: image is {w}x{h}, the network needs at least {size}x{size}")
    y0, x0 = (h - size) // 2, (w - size) // 2
    return img[y0 : y0 + size, x0 : x0 + size]


def map_grid(flash_input: np.ndarray, maps, relit: np.ndarray) -> np.ndarray:
    """input | normal | diffuse | roughness | specular | re-render, display encoded."""
    g = 1.0 / 2.2
    tiles = [
        np.clip(flash_input, 0, 1) ** g,
        maps.normal * 0.5 + 0.5,
        maps.diffuse**g,
        np.repeat(maps.roughness[..., None], 3, axis=-1),
        maps.specular**g,
        np.clip(relit, 0, 1) ** g,
    ]
    return np.concatenate(tiles, axis=1)


def cmd_predict(args) -> int:
    from . import network as N
    from .core import save_bundle
    from .pngio import write_png8
    from .render import FlashScene, render_flash_input

    weights = N.Weights.load(args.ckpt)
    path = Path(args.input)
    img = _centre_crop(_load_input_image(path, args.srgb), weights.config.input_resolution, path)
    from .trainer import predict_maps

    maps = predict_maps(weights, img[None])[0]
    out = Path(args.out)
    save_bundle(out, maps, material_class=None, seed=None)
    relit = render_flash_input(maps, FlashScene())
    write_png8(out / "grid.png", map_grid(img, maps, relit))
    print(f"wrote maps and grid.png to {out}")
    return 0


def cmd_relight(args) -> int:
    from .core import load_bundle
    from .render import render_svbrdf, turntable_configs, write_preview

    maps, _ = load_bundle(args.bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cfg in enumerate(turntable_configs(args.frames, args.radius, args.height)):
        write_preview(out / f"frame_{i:03d}.png", render_svbrdf(maps, cfg) * args.exposure)
    print(f"wrote {args.frames} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    from . import network as N
    from . import trainer as TR

    weights = N.Weights.load(args.ckpt)
    test = TR.load_dataset(args.data, "test")
    train = TR.load_dataset(args.data, "train") if not args.no_baseline else None
    report = TR.evaluate_rmse(weights, test, baseline_from=train)
    print(TR.format_report(report))
    if args.report:
        TR.write_report(report, args.report)
        print(f"report written to {args.report}")
    return 0


def cmd_mean_ablation(args) -> int:
    from .ablation import run_ablation

    results = run_ablation(iterations=args.iterations, seed=args.seed)
    print(f"{'network':<8} {'task MSE':>12} {'output spatial std':>20}")
    for name, r in results.items():
        print(f"{name:<8} {r.mse:>12.6f} {r.spatial_std:>20.6f}")
    if args.report:
        payload = {k: {"mse": r.mse, "spatial_std": r.spatial_std, "losses": r.losses} for k, r in results.items()}
        Path(args.report).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  worst {r.worst:.3e}  tol {r.tolerance:.0e}  {'ok' if r.passed else 'FAIL'}")
    worst = max(r.worst / r.tolerance for r in results)
    print(f"worst error / tolerance: {worst:.3f}")
    return 0 if all(r.passed for r in results) else 1


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svbrdf-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value file overriding defaults")
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "synthesize a procedural training dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64, help="network input size (stored samples are 1.25x)")
    p.add_argument("--blend-fraction", type=float, default=0.5)

    p = add("train", cmd_train, "train a network on a synthesized dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory (loss.csv, checkpoints)")
    p.add_argument("--network", choices=NETWORK_PRESETS, default="desk")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--loss", choices=("rendering", "l1"), default="rendering")
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--log-every", type=int, default=100)

    p = add("predict", cmd_predict, "estimate maps from one flash photograph")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="PNG, linear unless --srgb")
    p.add_argument("--out", required=True)
    p.add_argument("--srgb", action="store_true", help="input is gamma encoded")

    p = add("relight", cmd_relight, "render a turntable of point-light positions for a map bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--radius", type=float, default=1.2)
    p.add_argument("--height", type=float, default=1.5)
    p.add_argument("--exposure", type=float, default=0.5)

    p = add("eval", cmd_eval, "RMSE report on the held-out split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write the full report as JSON")
    p.add_argument("--no-baseline", action="store_true", help="skip the dataset-mean baseline")

    p = add("mean-ablation", cmd_mean_ablation, "average-colour task, global track vs plain U-Net")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write results as JSON")

    p = add("gradcheck", cmd_gradcheck, "run every finite-difference suite")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    config = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if config and command in subparsers:
        # config values become the subcommand's defaults; explicit flags still win
        subparser = subparsers[command]
        actions = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in read_config_file(config).items():
            action = actions.get(key)
            if action is None or key in ("help", "config"):
                raise UsageError(f"{config}: unknown key {key!r} for {command}")
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[key] = action.type(raw) if action.type else raw
                except ValueError as exc:
                    raise UsageError(f"{config}: bad value for {key}: {raw!r}") from exc
                if action.choices and defaults[key] not in action.choices:
                    raise UsageError(f"{config}: {key} must be one of {list(action.choices)}")
            action.required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    from .datagen import DatasetError
    from .trainer import TrainingDiverged

    try:
        args = parse_args(argv)
    except (UsageError, FileNotFoundError) as exc:
        print(f"svbrdf-forge: error: {exc}", file=sys.stderr)
        return 2
    threads = os.environ.get("SVBRDF_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=max(1, int(threads))):
                return args.func(args)
        return args.func(args)
    except (OSError, ValueError, DatasetError, TrainingDiverged) as exc:
        print(f"svbrdf-forge: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
