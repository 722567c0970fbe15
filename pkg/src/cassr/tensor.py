"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap contiguous row-major numpy buffers (float32 by default,
float64 when the global precision mode is switched for gradient
checking).  Every differentiable operation appends a node to a global
tape; ``backward`` walks the tape in strict reverse append order and
accumulates gradients into every reachable tensor that participates in
differentiation.  No broadcasting beyond scalar-tensor is supported;
the channel/row bias adds that layers need are explicit primitives.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .rng import Rng

_DTYPE = np.float32


def set_dtype(name: str):
    """Switch the global precision: 'f32' for training, 'f64' for checks."""
    global _DTYPE
    if name not in ("f32", "f64"):
        raise ValueError(f"unknown dtype mode {name!r}")
    _DTYPE = np.float32 if name == "f32" else np.float64


def get_dtype():
    return _DTYPE


class DimensionError(ValueError):
    """Shape mismatch between operands."""


class ContractError(RuntimeError):
    """An operation precondition was violated."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Append-only tape of executed operations."""

    def __init__(self):
        self.nodes = []  # (out, parents, backward_fn)

    def record(self, out, parents, backward_fn):
        self.nodes.append((out, parents, backward_fn))

    def reset(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_GRAPH = Graph()
_GRAD_ENABLED = True


def graph() -> Graph:
    return _GRAPH


class no_grad:
    """Context manager suspending tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _record(out: Tensor, parents, backward_fn):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _GRAPH.record(out, parents, backward_fn)
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, reset: bool = True):
    """Reverse-accumulate d(loss)/d(tensor) for every reachable tensor.

    Walks the tape in strict reverse append order; a node's gradient is
    the sum over all of its consumers.  By default the tape is cleared
    afterwards (one backward per recorded forward).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, parents, backward_fn in reversed(_GRAPH.nodes):
        if out.grad is None:
            continue
        backward_fn(out.grad)
    if reset:
        _GRAPH.reset()


# -- constructors --------------------------------------------------------------

def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DTYPE), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DTYPE), requires_grad=requires_grad)


def randn(shape, rng: Rng, requires_grad: bool = False) -> Tensor:
    """Seeded standard-normal leaf (splitmix64 counter stream + Box-Muller)."""
    return Tensor(rng.normal(shape).astype(_DTYPE), requires_grad=requires_grad)


# -- elementwise / arithmetic ---------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data + float(b))
        return _record(out, (a,), lambda g: _accum(a, g))
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, scale(b, -1.0))
    return add(a, -float(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: _accum(a, g * s))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: _accum(x, g * y))


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(x.data * sig)

    def bwd(g):
        _accum(x, g * sig * (1.0 + x.data * (1.0 - sig)))

    return _record(out, (x,), bwd)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product or batched 3-D product (leading batch extent)."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise DimensionError(f"matmul ranks unsupported: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _record(out, (a, b), bwd)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d vector to every row of a (..., d) tensor."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias_add shapes incompatible: {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data)

    def bwd(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _record(out, (x, b), bwd)


def bias_add_channel(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel vector (C,) to an NCHW feature map."""
    if x.data.ndim != 4 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(
            f"bias_add_channel shapes incompatible: {x.shape} + {b.shape}"
        )
    out = Tensor(x.data + b.data[None, :, None, None])

    def bwd(g):
        _accum(x, g)
        _accum(b, g.sum(axis=(0, 2, 3)))

    return _record(out, (x, b), bwd)


def add_sample_channel(x: Tensor, s: Tensor) -> Tensor:
    """Add a per-sample per-channel (N, C) tensor to an NCHW feature map."""
    if x.data.ndim != 4 or s.data.ndim != 2 or x.shape[:2] != s.shape:
        raise DimensionError(
            f"add_sample_channel shapes incompatible: {x.shape} + {s.shape}"
        )
    out = Tensor(x.data + s.data[:, :, None, None])

    def bwd(g):
        _accum(x, g)
        _accum(s, g.sum(axis=(2, 3)))

    return _record(out, (x, s), bwd)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW cross-correlation with zero padding; exact output extents required."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D operands, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}"
        )
    y, ctx = backend.conv2d_forward(x.data, w.data, stride, pad)
    out = Tensor(y)

    def bwd(g):
        dx, dw = backend.conv2d_backward(g, x.data, w.data, ctx, stride, pad)
        _accum(x, dx)
        _accum(w, dw)

    return _record(out, (x, w), bwd)


# -- shape manipulation ---------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape).copy())
    return _record(out, (x,), lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return _record(out, (x,), lambda g: _accum(x, g.transpose(inv)))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _record(out, tuple(tensors), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    out = Tensor(x.data[tuple(sl)].copy())

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[tuple(sl)] = g
        _accum(x, dx)

    return _record(out, (x,), bwd)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    f = int(factor)
    out = Tensor(x.data.repeat(f, axis=2).repeat(f, axis=3))

    def bwd(g):
        n, c, h, w = x.shape
        _accum(x, g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)))

    return _record(out, (x,), bwd)


def downsample_strided(x: Tensor, factor: int = 2) -> Tensor:
    f = int(factor)
    out = Tensor(x.data[:, :, ::f, ::f].copy())

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, :, ::f, ::f] = g
        _accum(x, dx)

    return _record(out, (x,), bwd)


# -- reductions & losses --------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()).reshape(()))
    return _record(out, (x,), lambda g: _accum(x, np.broadcast_to(g, x.shape)))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean()).reshape(()))
    return _record(out, (x,), lambda g: _accum(x, np.broadcast_to(g / n, x.shape)))


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = Tensor(np.asarray((diff * diff).mean()).reshape(()))

    def bwd(g):
        d = (2.0 / n) * diff * g
        _accum(a, d)
        _accum(b, -d)

    return _record(out, (a, b), bwd)


# -- normalization & attention pieces --------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(out, (x,), bwd)


def group_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5
) -> Tensor:
    """GroupNorm over NCHW with per-channel affine parameters."""
    n, c, h, w = x.shape
    if c % groups != 0:
        raise DimensionError(f"channels {c} not divisible by groups {groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"affine params must be ({c},)")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(n, c, h, w)
    out = Tensor(xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None])

    def bwd(g):
        _accum(beta, g.sum(axis=(0, 2, 3)))
        _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            m = xh.shape[2]
            dx = inv * (
                dxhat
                - dxhat.mean(axis=2, keepdims=True)
                - xh * (dxhat * xh).mean(axis=2, keepdims=True)
            )
            _accum(x, dx.reshape(n, c, h, w))

    return _record(out, (x, gamma, beta), bwd)
