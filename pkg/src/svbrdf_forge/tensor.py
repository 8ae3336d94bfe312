"""A small reverse-mode autodiff engine over NHWC numpy arrays.

Operations executed inside a ``Tape`` context are recorded in execution order
(which is a topological order); ``backward`` replays them in reverse. Values keep
the dtype of their inputs, so float32 is the training path and float64 the
verification path.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717
IN_EPS = 1e-5
LEAKY_SLOPE = 0.2


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}>"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable operations. Single-owner; not thread-shared."""

    _local = threading.local()

    def __init__(self) -> None:
        self.records: list[Record] = []

    def __enter__(self) -> Tape:
        stack = Tape._stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack().pop()

    @staticmethod
    def _stack() -> list[Tape]:
        if not hasattr(Tape._local, "stack"):
            Tape._local.stack = []
        return Tape._local.stack

    @staticmethod
    def current() -> Tape | None:
        stack = Tape._stack()
        return stack[-1] if stack else None

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def record(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
    """Wrap ``out`` as a Tensor and log the op if any input needs gradients.

    ``backward(grad_out)`` returns one gradient (or None) per input.
    """
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    result = Tensor(out)
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.records.append(Record(op, tuple(inputs), result, backward))
    return result


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` for each of ``params`` (zeros when unused)."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return [grads.get(id(p), np.zeros_like(p.data)).astype(p.dtype, copy=False) for p in params]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# -- elementwise arithmetic ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(
        "add", (a, b), a.data + b.data, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(
        "sub", (a, b), a.data - b.data, lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return record(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(x: Tensor) -> Tensor:
    return record("square", (x,), x.data * x.data, lambda g: (2.0 * x.data * g,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return record("sum", (x,), np.sum(x.data, keepdims=False), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return record(
        "mean", (x,), np.mean(x.data), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),)
    )


def reshape(x: Tensor, shape) -> Tensor:
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.split(g, splits, axis=axis))

    return record("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), grad)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def grad(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return record("slice", (x,), x.data[..., start:stop], grad)


# -- activations -------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * x.dtype.type(slope))
    return record("leaky_relu", (x,), out, lambda g: (np.where(pos, g, g * x.dtype.type(slope)),))


def selu(x: Tensor) -> Tensor:
    lam, alpha = x.dtype.type(SELU_LAMBDA), x.dtype.type(SELU_ALPHA)
    pos = x.data > 0
    neg_part = alpha * np.expm1(np.minimum(x.data, 0))
    out = lam * np.where(pos, x.data, neg_part)
    return record("selu", (x,), out, lambda g: (g * lam * np.where(pos, 1, neg_part + alpha),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = out.astype(x.dtype, copy=False)
    return record("sigmoid", (x,), out, lambda g: (g * out * (1 - out),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x)
    if kind == "selu":
        return selu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- layers --------------------------------------------------------------------------


def _same_padding(k: int) -> tuple[int, int]:
    before = (k - 1) // 2
    return before, k - 1 - before


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution. x: (N, H, W, Cin); w: (K, K, Cin, Cout).

    Output spatial size is ceil(H / stride). Padding is (K-1)//2 before and the
    remainder after, i.e. 1 top/left and 2 bottom/right for K = 4.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects NHWC input, got shape {x.shape}")
    k, k2, cin, cout = w.shape
    if k != k2 or x.shape[3] != cin:
        raise ValueError(f"kernel {w.shape} does not match input channels {x.shape[3]}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match {cout} output channels")
    n, h, wd, _ = x.shape
    p0, p1 = _same_padding(k)
    xp = np.pad(x.data, ((0, 0), (p0, p1), (p0, p1), (0, 0)))
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = windows.reshape(n * ho * wo, cin * k * k)  # (Cin, K, K) fastest
    wmat = w.data.transpose(2, 0, 1, 3).reshape(cin * k * k, cout)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout)

    def grad(g):
        g2 = g.reshape(-1, cout)
        dw = (cols.T @ g2).reshape(cin, k, k, cout).transpose(1, 2, 0, 3)
        dcols = (g2 @ wmat.T).reshape(n, ho, wo, cin, k, k)
        dxp = np.zeros_like(xp)
        for ky in range(k):
            for kx in range(k):
                dxp[:, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride, :] += dcols[..., ky, kx]
        dx = dxp[:, p0 : p0 + h, p0 : p0 + wd, :]
        db = g2.sum(axis=0) if b is not None else None
        return (dx, dw, db) if b is not None else (dx, dw)

    inputs = (x, w, b) if b is not None else (x, w)
    return record("conv2d", inputs, out, grad)


def channel_means(x: Tensor) -> Tensor:
    """Spatial mean per (batch item, channel): (N, H, W, C) -> (N, C)."""
    n, h, w, c = x.shape
    return record(
        "in_means",
        (x,),
        x.data.mean(axis=(1, 2)),
        lambda g: (np.broadcast_to((g / (h * w))[:, None, None, :], x.shape).astype(x.dtype),),
    )


def instance_norm(x: Tensor, eps: float = IN_EPS) -> Tensor:
    m = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - m
    var = np.mean(xc * xc, axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv

    def grad(g):
        gm = g.mean(axis=(1, 2), keepdims=True)
        gx = (g * xhat).mean(axis=(1, 2), keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return record("instance_norm", (x,), xhat, grad)


def instance_norm_split_means(x: Tensor, eps: float = IN_EPS) -> tuple[Tensor, Tensor]:
    """Instance normalization that also hands back the subtracted means (N, C)."""
    return instance_norm(x, eps), channel_means(x)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x: (N, H, W, C) plus bias (C,) or (N, C) broadcast over space."""
    b = bias.data
    bb = b[:, None, None, :] if b.ndim == 2 else b
    return record(
        "add_bias",
        (x, bias),
        x.data + bb,
        lambda g: (g, g.sum(axis=(1, 2)) if b.ndim == 2 else g.sum(axis=(0, 1, 2))),
    )


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x W + b with x: (N, Din), W: (Din, Dout), b: (Dout,)."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"fully_connected shapes disagree: x {x.shape}, W {w.shape}, b {b.shape}")
    return record(
        "fc",
        (x, w, b),
        x.data @ w.data + b.data,
        lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)),
    )


def nearest_upsample2x(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return record("upsample2x", (x,), out, lambda g: (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),))


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode (no RNG consumed)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return record("dropout", (x,), x.data * keep, lambda g: (g * keep,))
