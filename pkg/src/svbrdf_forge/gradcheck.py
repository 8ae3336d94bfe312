"""Finite-difference oracles for every differentiable piece of the pipeline.

Each suite returns the worst relative error it observed. Relative error of an
analytic value ``a`` against a central difference ``n`` is
``|a - n| / max(|a|, |n|, 1e-3 * largest |n| in the check)``, so coordinates
whose true gradient is negligible are judged on an absolute scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import loss as L
from . import network as N
from . import shading as S
from . import tensor as T
from .core import SvbrdfMaps
from .render import DIRECTIONAL, RenderConfig, sample_render_config, shade_arrays

SHADING_TOL = 1e-4
DEFAULT_TOL = 1e-3
NETWORK_TOL_32 = 1e-2
NETWORK_TOL_64 = 1e-3


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.worst < self.tolerance)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    floor = 1e-3 * max(np.abs(numeric).max(initial=0.0), 1e-300)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def central_difference(f: Callable[[], float], arr: np.ndarray, index, step: float) -> float:
    orig = arr[index]
    arr[index] = orig + step
    up = f()
    arr[index] = orig - step
    down = f()
    arr[index] = orig
    return (up - down) / (2.0 * step)


def _random_unit_upper(rng, size, min_z=0.2):
    v = rng.normal(size=(size, 3))
    v[:, 2] = np.abs(v[:, 2]) + min_z * np.linalg.norm(v[:, :2], axis=1) + 1e-3
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _brdf_points(rng, count):
    """Non-degenerate shading configurations: both dot products above 0.1."""
    pts = []
    while len(pts) < count:
        n = _random_unit_upper(rng, 1, 0.5)[0]
        l = _random_unit_upper(rng, 1)[0]
        v = _random_unit_upper(rng, 1)[0]
        if n @ l < 0.1 or n @ v < 0.1:
            continue
        pts.append((n, rng.uniform(0, 1, 3), rng.uniform(0, 1, 3), rng.uniform(0.2, 1.0), l, v))
    return pts


def check_shading(seed: int = 0, count: int = 100, step: float = 1e-4) -> CheckResult:
    """Closed-form BRDF partials against central differences on all 9 parameter directions."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, kd, ks, r, l, v in _brdf_points(rng, count):
        grad = S.eval_brdf_gradient(S.BrdfPoint(n, kd, ks, r), l, v)
        analytic, numeric = [], []

        def f_xy(x, y):
            z = np.sqrt(1.0 - x * x - y * y)
            return S.eval_brdf(S.BrdfPoint(np.array([x, y, z]), kd, ks, r), l, v)

        for j in range(2):
            d = np.zeros(2)
            d[j] = step
            fd = (f_xy(n[0] + d[0], n[1] + d[1]) - f_xy(n[0] - d[0], n[1] - d[1])) / (2 * step)
            analytic.append(grad.normal_xy[:, j])
            numeric.append(fd)
        for c in range(3):
            for name, base, g in (("diffuse", kd, grad.diffuse), ("specular", ks, grad.specular)):
                up, dn = base.copy(), base.copy()
                up[c] += step
                dn[c] -= step
                args_up = dict(diffuse=kd, specular=ks)
                args_dn = dict(diffuse=kd, specular=ks)
                args_up[name], args_dn[name] = up, dn
                fd = (
                    S.eval_brdf(S.BrdfPoint(n, args_up["diffuse"], args_up["specular"], r), l, v)
                    - S.eval_brdf(S.BrdfPoint(n, args_dn["diffuse"], args_dn["specular"], r), l, v)
                ) / (2 * step)
                analytic.append(np.array([g[c]]))
                numeric.append(np.array([fd[c]]))
        fd = (
            S.eval_brdf(S.BrdfPoint(n, kd, ks, r + step), l, v) - S.eval_brdf(S.BrdfPoint(n, kd, ks, r - step), l, v)
        ) / (2 * step)
        analytic.append(grad.roughness)
        numeric.append(fd)
        worst = max(worst, relative_errors(np.concatenate(analytic), np.concatenate(numeric)).max())
    return CheckResult("shading partials", worst, SHADING_TOL)


def _random_maps_arrays(rng, res, rough_lo=0.3):
    n = _random_unit_upper(rng, res * res, 1.0).reshape(res, res, 3)
    return [
        n,
        rng.uniform(0.05, 0.95, (res, res, 3)),
        rng.uniform(0.05, 0.95, (res, res, 3)),
        rng.uniform(rough_lo, 0.95, (res, res)),
    ]


def _spot_check(fn, arrays, analytic, rng, per_array, step):
    """Central differences at ``per_array`` random coordinates of each array."""
    a_vals, n_vals = [], []
    for arr, grad in zip(arrays, analytic):
        for _ in range(per_array):
            idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
            n_vals.append(central_difference(fn, arr, idx, step))
            a_vals.append(grad[idx])
    return relative_errors(np.array(a_vals), np.array(n_vals)).max()


def check_render(seed: int = 0, res: int = 8, per_array: int = 24, step: float = 1e-6) -> CheckResult:
    """Renderer backward (directional and positional) against central differences on 8x8 maps."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for regime in ("diffuse_set", "mirror_set"):
        arrays = _random_maps_arrays(rng, res)
        cfg = sample_render_config(rng, regime)
        weights = rng.normal(size=(res, res, 3))

        def fn():
            return float(np.sum(weights * shade_arrays(*arrays, cfg)[0]))

        _, vjp = shade_arrays(*arrays, cfg)
        worst = max(worst, _spot_check(fn, arrays, vjp(weights), rng, per_array, step))
    return CheckResult("render backward", worst, DEFAULT_TOL)


def check_rendering_loss(seed: int = 0, res: int = 8, per_array: int = 24, step: float = 1e-7) -> CheckResult:
    """rendering loss gradient for a fixed configuration draw against central differences."""
    rng = np.random.default_rng(seed)
    pred = _random_maps_arrays(rng, res)
    gt = _random_maps_arrays(rng, res)
    configs = L.sample_loss_configs(np.random.default_rng(seed + 1))

    def fn():
        return L.loss_and_grad(pred, gt, configs, need_grad=False)[0]

    _, grads = L.loss_and_grad(pred, gt, configs)
    return CheckResult("rendering loss", _spot_check(fn, pred, grads, rng, per_array, step), DEFAULT_TOL)


# -- tensor ops ------------------------------------------------------------------------


def _op_error(build, inputs, rng, step=1e-5, max_coords=20):
    """Compare engine gradients of sum(w * build(*inputs)) with central differences."""
    tensors = [T.Tensor(x, requires_grad=True) for x in inputs]
    with T.Tape() as tape:
        out = build(*tensors)
        outs = out if isinstance(out, tuple) else (out,)
        ws = [rng.normal(size=o.shape) for o in outs]
        total = None
        for o, w in zip(outs, ws):
            term = T.sum(T.mul(o, T.Tensor(w)))
            total = term if total is None else T.add(total, term)
    grads = T.backward(tape, total, tensors)

    def fn():
        with T.Tape():
            res = build(*[T.Tensor(x) for x in inputs])
        res = res if isinstance(res, tuple) else (res,)
        return float(sum(np.sum(w * r.data) for r, w in zip(res, ws)))

    a_vals, n_vals = [], []
    for x, g in zip(inputs, grads):
        flat_count = x.size
        picks = rng.choice(flat_count, size=min(max_coords, flat_count), replace=False)
        for p in picks:
            idx = np.unravel_index(p, x.shape)
            n_vals.append(central_difference(fn, x, idx, step))
            a_vals.append(g[idx])
    return relative_errors(np.array(a_vals), np.array(n_vals)).max()


def tensor_op_suites(rng) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    def r(*shape):
        return rng.normal(size=shape)

    def away_from_zero(*shape):
        x = rng.normal(size=shape)
        return x + np.sign(x) * 0.05

    return {
        "conv2d stride 1": (lambda x, w, b: T.conv2d(x, w, b, 1), [r(2, 5, 5, 3), r(3, 3, 3, 4), r(4)]),
        "conv2d stride 2 K4": (lambda x, w, b: T.conv2d(x, w, b, 2), [r(2, 8, 8, 3), r(4, 4, 3, 4), r(4)]),
        "instance_norm_split_means": (lambda x: T.instance_norm_split_means(x), [r(2, 4, 4, 2)]),
        "leaky_relu": (T.leaky_relu, [away_from_zero(3, 7)]),
        "selu": (T.selu, [away_from_zero(3, 7)]),
        "sigmoid": (T.sigmoid, [r(3, 7)]),
        "nearest_upsample2x": (T.nearest_upsample2x, [r(2, 3, 3, 2)]),
        "fully_connected": (T.fully_connected, [r(3, 5), r(5, 4), r(4)]),
        "add_channel_bias": (T.add_channel_bias, [r(2, 3, 3, 4), r(2, 4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=-1), [r(2, 3, 3, 2), r(2, 3, 3, 3)]),
        "dropout": (lambda x: T.dropout(x, 0.5, True, np.random.default_rng(7)), [r(4, 6)]),
        "conv-IN-leaky composite": (
            lambda x, w: T.leaky_relu(T.instance_norm(T.conv2d(x, w, None, 1))),
            [r(1, 4, 4, 2), r(3, 3, 2, 3)],
        ),
    }


def check_tensor_ops(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        CheckResult(f"tensor {name}", _op_error(build, inputs, rng), DEFAULT_TOL)
        for name, (build, inputs) in tensor_op_suites(rng).items()
    ]


# -- whole network -----------------------------------------------------------------------


def gradcheck_network_config() -> N.NetworkConfig:
    return N.NetworkConfig(input_resolution=16, first_features=4, encoder_features=(8, 8, 8, 8))


def _network_problem(seed: int):
    rng = np.random.default_rng(seed)
    cfg = gradcheck_network_config()
    res = cfg.input_resolution
    img = rng.uniform(0.0, 1.0, (2, res, res, 3))
    gts = []
    for _ in range(2):
        n, kd, ks, r = _random_maps_arrays(rng, res)
        gts.append(SvbrdfMaps(n, kd, ks, r))
    configs = [L.sample_loss_configs(rng) for _ in range(2)]
    return cfg, img, gts, configs


def _network_loss(weights, img, gts, configs, dropout_seed, with_grad):
    tensors = weights.tensors()
    with T.Tape() as tape:
        raw = N.forward(img, tensors, weights.config, mode="train", rng=np.random.default_rng(dropout_seed))
        loss, _ = L.rendering_loss_node(raw, gts, configs)
    if not with_grad:
        return float(loss.data), None
    names = list(tensors)
    grads = T.backward(tape, loss, [tensors[k] for k in names])
    return float(loss.data), dict(zip(names, grads))


def check_network(seed: int = 0, n_weights: int = 20, step: float = 1e-5) -> list[CheckResult]:
    """Full forward + rendering loss at 16x16: float64 and float32 engine gradients
    against float64 central differences on randomly chosen weights."""
    cfg, img, gts, configs = _network_problem(seed)
    w64 = N.init_weights(cfg, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    # biases start at zero; give them values so every path is exercised
    for k, v in w64.arrays.items():
        if k.endswith(".b"):
            v[...] = rng.normal(scale=0.1, size=v.shape)
    w32 = w64.astype(np.float32)
    w64 = w32.astype(np.float64)  # identical starting point for both precisions
    _, g64 = _network_loss(w64, img, gts, configs, seed, True)
    _, g32 = _network_loss(w32, img, gts, configs, seed, True)

    names = list(w64.arrays)
    a64, a32, num = [], [], []
    for _ in range(n_weights):
        name = names[int(rng.integers(len(names)))]
        arr = w64.arrays[name]
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)

        def fn():
            return _network_loss(w64, img, gts, configs, seed, False)[0]

        num.append(central_difference(fn, arr, idx, step))
        a64.append(g64[name][idx])
        a32.append(g32[name][idx])
    num = np.array(num)
    return [
        CheckResult("network 64-bit", relative_errors(np.array(a64), num).max(), NETWORK_TOL_64),
        CheckResult("network 32-bit", relative_errors(np.array(a32), num).max(), NETWORK_TOL_32),
    ]


def run_all(seed: int = 0) -> list[CheckResult]:
    results = [check_shading(seed), check_render(seed), check_rendering_loss(seed)]
    results += check_tensor_ops(seed)
    results += check_network(seed)
    return results
