"""U-Net with a parallel global-features track, checkpoint format and prediction decoding.

Layer sequence for ``scales = S`` and features f_0 (first conv) .. f_S:

* encoder stage 0: stride-1 conv to f_0, then stages 1..S: stride-2 convs to f_k;
* decoder stages S..1: upsample, concatenate the encoder output of the next finer
  stage, two stride-1 convs to f_{s-1};
* output: stride-1 conv to ``out_channels`` and a sigmoid.

Each stage normalizes its (last) convolution with instance normalization. With
the global track on, the extracted means are concatenated with the running
global vector and passed through FC + SELU, and the previous global vector,
mapped by another FC, is added to the normalized maps as per-channel biases
before the leaky ReLU.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import tensor as T
from .core import SvbrdfMaps, decode_normal
from .tensor import Tensor

CHECKPOINT_MAGIC = b"SVBF"
CHECKPOINT_VERSION = 1

# 9-channel layout of the raw network output
NORMAL_SLICE = slice(0, 2)
DIFFUSE_SLICE = slice(2, 5)
ROUGHNESS_SLICE = slice(5, 6)
SPECULAR_SLICE = slice(6, 9)


@dataclass(frozen=True)
class NetworkConfig:
    input_resolution: int = 64
    first_features: int = 16
    encoder_features: tuple[int, ...] = (16, 32, 64, 128, 128)
    filter_size: int = 4
    dropout_scales: int = 3
    dropout_rate: float = 0.5
    global_track: bool = True
    in_channels: int = 3
    out_channels: int = 9
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_features", tuple(int(f) for f in self.encoder_features))
        r = self.input_resolution
        if r < 1 or r & (r - 1):
            raise ValueError(f"input resolution must be a power of two, got {r}")
        if r < 2**self.scales:
            raise ValueError(f"resolution {r} cannot be halved {self.scales} times")
        if self.dropout_scales > self.scales:
            raise ValueError("more dropout scales than decoder scales")

    @property
    def scales(self) -> int:
        return len(self.encoder_features)

    @property
    def features(self) -> tuple[int, ...]:
        """f_0 .. f_S."""
        return (self.first_features,) + self.encoder_features

    @property
    def decoder_features(self) -> tuple[int, ...]:
        """Output feature counts of decoder stages S..1 (the encoder ladder reversed)."""
        return tuple(reversed(self.features[:-1]))

    @classmethod
    def full(cls) -> NetworkConfig:
        return cls(
            input_resolution=256,
            first_features=64,
            encoder_features=(128, 256, 512, 512, 512, 512, 512, 512),
        )

    @classmethod
    def desk(cls, **overrides) -> NetworkConfig:
        return cls(**overrides)

    @classmethod
    def desk32(cls, **overrides) -> NetworkConfig:
        base = dict(input_resolution=32, first_features=16, encoder_features=(16, 32, 64, 64, 64))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_features"] = list(self.encoder_features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NetworkConfig:
        d = dict(d)
        d["encoder_features"] = tuple(d["encoder_features"])
        return cls(**d)


def layer_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every learnable tensor in declaration order."""
    k = cfg.filter_size
    f = cfg.features
    g = cfg.global_track
    shapes: list[tuple[str, tuple[int, ...]]] = []

    def conv(name, cin, cout):
        shapes.extend([(f"{name}.w", (k, k, cin, cout)), (f"{name}.b", (cout,))])

    def fc(name, din, dout):
        shapes.extend([(f"{name}.w", (din, dout)), (f"{name}.b", (dout,))])

    conv("enc0.conv", cfg.in_channels, f[0])
    if g:
        fc("enc0.gfc", f[0], f[0])
    for s in range(1, cfg.scales + 1):
        conv(f"enc{s}.conv", f[s - 1], f[s])
        if g:
            fc(f"enc{s}.inject", f[s - 1], f[s])
            fc(f"enc{s}.gfc", f[s - 1] + f[s], f[s])
    width = f[-1]
    for s in range(cfg.scales, 0, -1):
        cin = f[s] + f[s - 1]
        conv(f"dec{s}.conv_a", cin, f[s - 1])
        conv(f"dec{s}.conv_b", f[s - 1], f[s - 1])
        if g:
            fc(f"dec{s}.inject", width, f[s - 1])
            fc(f"dec{s}.gfc", width + f[s - 1], f[s - 1])
        width = f[s - 1]
    conv("out.conv", f[0], cfg.out_channels)
    if g:
        fc("out.inject", width, cfg.out_channels)
    return shapes


def global_track_layers(cfg: NetworkConfig) -> list[str]:
    return [name for name, _ in layer_shapes(cfg) if ".gfc." in name or ".inject." in name]


@dataclass
class Weights:
    config: NetworkConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self.arrays.items()}

    def copy(self) -> Weights:
        return Weights(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> Weights:
        return Weights(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def equals(self, other: Weights) -> bool:
        return (
            self.config == other.config
            and list(self.arrays) == list(other.arrays)
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
        )

    # -- checkpoint ----------------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        cfg_bytes = json.dumps(self.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(cfg_bytes)))
        buf.write(cfg_bytes)
        for name, shape in layer_shapes(self.config):
            arr = self.arrays[name]
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, config declares {shape}")
            buf.write(struct.pack("<I", len(shape)))
            buf.write(struct.pack(f"<{len(shape)}I", *shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<bytes>") -> Weights:
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{source}: not an SVBF checkpoint")
        version, cfg_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{source}: unsupported checkpoint version {version}")
        pos = 12
        cfg = NetworkConfig.from_dict(json.loads(raw[pos : pos + cfg_len]))
        pos += cfg_len
        arrays = {}
        for name, shape in layer_shapes(cfg):
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            stored = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            if tuple(stored) != shape:
                raise ValueError(f"{source}: {name} stored as {stored}, expected {shape}")
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
        if pos != len(raw):
            raise ValueError(f"{source}: {len(raw) - pos} trailing bytes")
        return cls(cfg, arrays)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> Weights:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes(), str(path))


def init_weights(cfg: NetworkConfig, seed: int, dtype=np.float32) -> Weights:
    """Uniform(-b, b) kernels with b = sqrt(3 / fan_in) (unit-variance fan-in
    scaling); zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in layer_shapes(cfg):
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        bound = np.sqrt(3.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Weights(cfg, arrays)


def _stage(x: Tensor, p: Mapping[str, Tensor], prefix: str, g: Tensor | None, cfg: NetworkConfig):
    """Instance-normalize, exchange with the global track, activate."""
    y, means = T.instance_norm_split_means(x)
    if not cfg.global_track:
        return T.leaky_relu(y, cfg.leaky_slope), None
    if g is not None:
        y = T.add_channel_bias(y, T.fully_connected(g, p[f"{prefix}.inject.w"], p[f"{prefix}.inject.b"]))
        g_in = T.concat([g, means], axis=-1)
    else:
        g_in = means
    g_next = T.selu(T.fully_connected(g_in, p[f"{prefix}.gfc.w"], p[f"{prefix}.gfc.b"]))
    return T.leaky_relu(y, cfg.leaky_slope), g_next


def forward(
    img,
    weights: Weights | Mapping[str, Tensor],
    cfg: NetworkConfig | None = None,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Map tone-mapped input (N, R, R, 3) or (R, R, 3) to raw outputs in (0, 1)."""
    if isinstance(weights, Weights):
        cfg = cfg or weights.config
        p = {k: Tensor(v) for k, v in weights.arrays.items()}
    else:
        p = dict(weights)
    if cfg is None:
        raise ValueError("a NetworkConfig is required with raw tensors")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and cfg.dropout_rate > 0 and cfg.dropout_scales > 0 and rng is None:
        raise ValueError("train mode needs an rng for dropout")

    dtype = p["enc0.conv.w"].dtype
    x = img.data if isinstance(img, Tensor) else np.asarray(img)
    if x.ndim == 3:
        x = x[None]
    r = cfg.input_resolution
    if x.shape[1:] != (r, r, cfg.in_channels):
        raise ValueError(f"input must be {r}x{r}x{cfg.in_channels}, got {x.shape[1:]}")
    x = Tensor(x.astype(dtype, copy=False))

    skips = []
    h, g = _stage(T.conv2d(x, p["enc0.conv.w"], p["enc0.conv.b"], 1), p, "enc0", None, cfg)
    skips.append(h)
    for s in range(1, cfg.scales + 1):
        h, g = _stage(T.conv2d(h, p[f"enc{s}.conv.w"], p[f"enc{s}.conv.b"], 2), p, f"enc{s}", g, cfg)
        skips.append(h)
    for s in range(cfg.scales, 0, -1):
        u = T.concat([T.nearest_upsample2x(h), skips[s - 1]], axis=-1)
        y = T.conv2d(u, p[f"dec{s}.conv_a.w"], p[f"dec{s}.conv_a.b"], 1)
        y = T.conv2d(y, p[f"dec{s}.conv_b.w"], p[f"dec{s}.conv_b.b"], 1)
        h, g = _stage(y, p, f"dec{s}", g, cfg)
        if s > cfg.scales - cfg.dropout_scales:
            h = T.dropout(h, cfg.dropout_rate, train, rng)
    out = T.conv2d(h, p["out.conv.w"], p["out.conv.b"], 1)
    if cfg.global_track:
        out = T.add_channel_bias(out, T.fully_connected(g, p["out.inject.w"], p["out.inject.b"]))
    return T.sigmoid(out)


def predict(img: np.ndarray, weights: Weights) -> np.ndarray:
    """Eval-mode forward pass returning a numpy array."""
    return forward(img, weights, mode="eval").data


def decode_prediction(raw: np.ndarray) -> SvbrdfMaps:
    """Split an (R, R, 9) raw output into SvbrdfMaps (no remapping beyond the normal codec)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != 9:
        raise ValueError(f"expected 9 channels, got {raw.shape[-1]}")
    return SvbrdfMaps(
        normal=decode_normal(raw[..., NORMAL_SLICE]),
        diffuse=np.clip(raw[..., DIFFUSE_SLICE], 0.0, 1.0),
        specular=np.clip(raw[..., SPECULAR_SLICE], 0.0, 1.0),
        roughness=np.clip(raw[..., ROUGHNESS_SLICE][..., 0], 0.0, 1.0),
    )


def encode_maps(maps: SvbrdfMaps) -> np.ndarray:
    return maps.encode()
