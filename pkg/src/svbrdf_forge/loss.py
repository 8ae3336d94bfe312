"""Rendering loss (log-l1 between renderings under shared random configurations)
and the naive l1 map loss, in plain-numpy and autodiff-node forms."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import network
from .core import SvbrdfMaps
from .render import TONEMAP_OFFSET, RenderConfig, sample_render_config, shade_arrays
from .tensor import Tensor, record

N_DIFFUSE_CONFIGS = 3
N_MIRROR_CONFIGS = 6
LOG_OFFSET = TONEMAP_OFFSET
# floor on z in the decode Jacobian, keeps gradients bounded at the disc rim
DECODE_Z_FLOOR = 1e-3


def sample_loss_configs(
    rng: np.random.Generator, n_diffuse: int = N_DIFFUSE_CONFIGS, n_mirror: int = N_MIRROR_CONFIGS
) -> list[RenderConfig]:
    return [sample_render_config(rng, "diffuse_set") for _ in range(n_diffuse)] + [
        sample_render_config(rng, "mirror_set") for _ in range(n_mirror)
    ]


def _arrays(maps: SvbrdfMaps) -> tuple[np.ndarray, ...]:
    return maps.normal, maps.diffuse, maps.specular, maps.roughness


def loss_and_grad(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], configs: Sequence[RenderConfig], need_grad=True):
    """Mean |log(r_pred + c) - log(r_gt + c)| over configs, pixels and channels.

    ``pred``/``gt`` are (normal, diffuse, specular, roughness) arrays. Returns
    ``(loss, grads)`` with grads aligned with ``pred`` (None when not requested).
    """
    total = 0.0
    grads = [np.zeros(np.shape(a), dtype=np.float64) for a in pred] if need_grad else None
    for cfg in configs:
        r_pred, vjp = shade_arrays(*pred, cfg)
        r_gt, _ = shade_arrays(*gt, cfg)
        diff = np.log(r_pred + LOG_OFFSET) - np.log(r_gt + LOG_OFFSET)
        count = diff.size
        total += float(np.abs(diff).sum()) / count
        if need_grad:
            g = np.sign(diff) / (r_pred + LOG_OFFSET) / (count * len(configs))
            for acc, part in zip(grads, vjp(g)):
                acc += part
    return total / len(configs), grads


def rendering_loss(
    pred: SvbrdfMaps,
    gt: SvbrdfMaps,
    rng: np.random.Generator,
    n_diffuse: int = N_DIFFUSE_CONFIGS,
    n_mirror: int = N_MIRROR_CONFIGS,
) -> float:
    if pred.resolution != gt.resolution:
        raise ValueError(f"resolution mismatch: {pred.resolution} vs {gt.resolution}")
    configs = sample_loss_configs(rng, n_diffuse, n_mirror)
    loss, _ = loss_and_grad(_arrays(pred), _arrays(gt), configs, need_grad=False)
    return loss


def rendering_loss_grad(
    pred: SvbrdfMaps,
    gt: SvbrdfMaps,
    rng: np.random.Generator,
    n_diffuse: int = N_DIFFUSE_CONFIGS,
    n_mirror: int = N_MIRROR_CONFIGS,
) -> dict[str, np.ndarray]:
    """Exact gradient of the stochastic estimate for the configurations drawn from ``rng``.

    The normal gradient is taken with respect to the stored 3-vector.
    """
    if pred.resolution != gt.resolution:
        raise ValueError(f"resolution mismatch: {pred.resolution} vs {gt.resolution}")
    configs = sample_loss_configs(rng, n_diffuse, n_mirror)
    _, grads = loss_and_grad(_arrays(pred), _arrays(gt), configs)
    return dict(zip(("normal", "diffuse", "specular", "roughness"), grads))


def l1_map_loss(pred: SvbrdfMaps, gt: SvbrdfMaps) -> float:
    """Mean absolute difference over the 9 encoded channels."""
    if pred.resolution != gt.resolution:
        raise ValueError(f"resolution mismatch: {pred.resolution} vs {gt.resolution}")
    return float(np.mean(np.abs(pred.encode() - gt.encode())))


# -- autodiff nodes -----------------------------------------------------------------


def decode_normal_vjp(xy01: np.ndarray):
    """Normal decode with a vector-Jacobian product for the raw (x, y) in [0, 1]."""
    xy = 2.0 * np.asarray(xy01, dtype=np.float64) - 1.0
    x, y = xy[..., 0], xy[..., 1]
    s = x * x + y * y
    inside = s < 1.0
    z = np.sqrt(np.maximum(0.0, 1.0 - s))
    root = np.sqrt(np.maximum(s, 1.0))
    n = np.stack([x / root, y / root, z], axis=-1)

    def vjp(g: np.ndarray) -> np.ndarray:
        gx, gy, gz = g[..., 0], g[..., 1], g[..., 2]
        zf = np.maximum(z, DECODE_Z_FLOOR)
        in_dx = gx - gz * x / zf
        in_dy = gy - gz * y / zf
        s3 = np.maximum(s, 1.0) ** 1.5
        out_dx = (gx * y * y - gy * x * y) / s3
        out_dy = (gy * x * x - gx * x * y) / s3
        dx = np.where(inside, in_dx, out_dx)
        dy = np.where(inside, in_dy, out_dy)
        return 2.0 * np.stack([dx, dy], axis=-1)

    return n, vjp


def split_raw(raw: np.ndarray):
    """Raw (…, 9) output to (normal, diffuse, specular, roughness) plus the normal vjp."""
    raw = raw.astype(np.float64, copy=False)
    normal, n_vjp = decode_normal_vjp(raw[..., network.NORMAL_SLICE])
    return (
        normal,
        raw[..., network.DIFFUSE_SLICE],
        raw[..., network.SPECULAR_SLICE],
        raw[..., network.ROUGHNESS_SLICE][..., 0],
    ), n_vjp


def rendering_loss_node(
    raw: Tensor, gt: Sequence[SvbrdfMaps], configs: Sequence[Sequence[RenderConfig]]
) -> tuple[Tensor, list[float]]:
    """Batch-mean rendering loss on raw network output (N, R, R, 9), plus per-item losses."""
    n = raw.shape[0]
    if len(gt) != n or len(configs) != n:
        raise ValueError("need one ground truth and one configuration list per batch item")
    losses = []
    grad_raw = np.zeros(raw.shape, dtype=np.float64)
    for i in range(n):
        pred, n_vjp = split_raw(raw.data[i])
        loss, (g_n, g_d, g_s, g_r) = loss_and_grad(pred, _arrays(gt[i]), configs[i])
        losses.append(loss)
        grad_raw[i, ..., network.NORMAL_SLICE] = n_vjp(g_n)
        grad_raw[i, ..., network.DIFFUSE_SLICE] = g_d
        grad_raw[i, ..., network.SPECULAR_SLICE] = g_s
        grad_raw[i, ..., network.ROUGHNESS_SLICE] = g_r[..., None]
    value = np.asarray(sum(losses) / n, dtype=raw.dtype)
    grad_raw /= n
    node = record("rendering_loss", (raw,), value, lambda g: ((g * grad_raw).astype(raw.dtype),))
    return node, losses


def l1_loss_node(raw: Tensor, gt: Sequence[SvbrdfMaps]) -> Tensor:
    target = np.stack([m.encode() for m in gt]).astype(raw.dtype)
    diff = raw.data - target
    count = diff.size
    return record("l1_map_loss", (raw,), np.asarray(np.abs(diff).sum() / count, dtype=raw.dtype),
                  lambda g: (g * np.sign(diff) / count,))
