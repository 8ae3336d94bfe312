"""Average-colour task: map an image to a constant image of its mean colour.

A U-Net has no way to pass information between distant pixels beyond its
receptive field and instance normalization removes absolute levels, so it
struggles to emit a constant image; the global-features track solves it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import network as N
from . import noise
from . import tensor as T
from .trainer import AdamState, adam_step

ABLATION_LR = 1e-3
ABLATION_ITERATIONS = 1000
ABLATION_BATCH = 8
N_TEST_IMAGES = 32


def ablation_config(global_track: bool) -> N.NetworkConfig:
    return N.NetworkConfig.desk32(out_channels=3, global_track=global_track)


def random_images(rng: np.random.Generator, count: int, res: int) -> np.ndarray:
    """Smooth random colour fields with a random base colour per image."""
    out = np.empty((count, res, res, 3))
    for i in range(count):
        base = rng.uniform(0.15, 0.85, 3)
        amp = rng.uniform(0.05, 0.35)
        cells = int(rng.integers(2, 8))
        field = np.stack([noise.fbm(rng, res, cells, octaves=3) for _ in range(3)], axis=-1)
        out[i] = np.clip(base + amp * 2.0 * (field - 0.5), 0.0, 1.0)
    return out


def mean_colour_targets(images: np.ndarray) -> np.ndarray:
    return np.broadcast_to(images.mean(axis=(1, 2), keepdims=True), images.shape).copy()


def mse_node(pred: T.Tensor, target: np.ndarray) -> T.Tensor:
    return T.mean(T.square(T.sub(pred, T.Tensor(target.astype(pred.dtype)))))


@dataclass
class AblationResult:
    global_track: bool
    mse: float
    spatial_std: float  # mean over test images of the per-image output std (over pixels, per channel)
    losses: list[float]


def train_mean_colour(
    global_track: bool,
    iterations: int = ABLATION_ITERATIONS,
    seed: int = 0,
    lr: float = ABLATION_LR,
    batch: int = ABLATION_BATCH,
    cfg: N.NetworkConfig | None = None,
) -> AblationResult:
    cfg = cfg if cfg is not None else ablation_config(global_track)
    cfg = replace(cfg, global_track=global_track)
    res = cfg.input_resolution
    weights = N.init_weights(cfg, seed)
    state = AdamState()
    losses = []
    for it in range(iterations):
        rng = np.random.default_rng([seed, it])
        x = random_images(rng, batch, res)
        tensors = weights.tensors()
        with T.Tape() as tape:
            out = N.forward(x, tensors, cfg, mode="train", rng=rng)
            loss = mse_node(out, mean_colour_targets(x))
        names = list(tensors)
        grads = T.backward(tape, loss, [tensors[k] for k in names])
        new, state = adam_step(weights.arrays, dict(zip(names, grads)), state, lr=lr)
        weights = N.Weights(cfg, {k: new[k] for k in weights.arrays})
        losses.append(float(loss.data))

    test = random_images(np.random.default_rng([seed, 2**31]), N_TEST_IMAGES, res)
    pred = N.predict(test, weights).astype(np.float64)
    mse = float(np.mean((pred - mean_colour_targets(test)) ** 2))
    spatial_std = float(np.mean(pred.std(axis=(1, 2))))
    return AblationResult(global_track, mse, spatial_std, losses)


def run_ablation(iterations: int = ABLATION_ITERATIONS, seed: int = 0) -> dict[str, AblationResult]:
    """Global-track and plain U-Net trained with identical seeds, data and budgets."""
    return {
        "global": train_mean_colour(True, iterations, seed),
        "plain": train_mean_colour(False, iterations, seed),
    }
