"""Neural building blocks: parameter store, linear/conv layers, single-head
attention, sinusoidal timestep embedding and the residual conv block."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import ContractError, DimensionError, Tensor


class ParamStore:
    """Ordered name -> Tensor map with a per-name trainable flag."""

    def __init__(self):
        self._params = {}  # insertion-ordered
        self._trainable = {}

    def add(self, name: str, t: Tensor, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t.requires_grad = trainable
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if self._trainable[n]]

    def set_trainable(self, name: str, flag: bool):
        self._trainable[name] = flag
        self._params[name].requires_grad = flag

    def freeze_all(self):
        for n in self._params:
            self.set_trainable(n, False)

    def state(self) -> dict:
        return {n: p.data for n, p in self._params.items()}

    def load_state(self, arrays: dict, strict: bool = True):
        missing = [n for n in self._params if n not in arrays]
        if strict and missing:
            raise ContractError(f"checkpoint missing parameters: {missing[:5]}...")
        for n, arr in arrays.items():
            if n in self._params:
                p = self._params[n]
                if tuple(arr.shape) != tuple(p.shape):
                    raise DimensionError(
                        f"param {n!r}: checkpoint shape {arr.shape} != model {p.shape}"
                    )
                p.data = np.ascontiguousarray(arr.astype(T.get_dtype()))

    def num_scalars(self, trainable=None) -> int:
        return sum(
            p.size
            for n, p in self._params.items()
            if trainable is None or self._trainable[n] == trainable
        )


def _uniform_init(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


class Linear:
    def __init__(self, store, name, d_in, d_out, rng, init="uniform",
                 bias=True, trainable=True):
        w = np.zeros((d_in, d_out)) if init == "zeros" else _uniform_init(
            rng, (d_in, d_out), d_in)
        self.w = store.add(f"{name}.w", T.tensor(w), trainable)
        self.b = None
        if bias:
            self.b = store.add(f"{name}.b", T.zeros((d_out,)), trainable)
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.shape
        if shape[-1] != self.d_in:
            raise DimensionError(f"linear expects (..., {self.d_in}), got {shape}")
        flat = T.reshape(x, (-1, self.d_in)) if x.data.ndim != 2 else x
        y = T.matmul(flat, self.w)
        if self.b is not None:
            y = T.bias_add(y, self.b)
        if x.data.ndim != 2:
            y = T.reshape(y, shape[:-1] + (self.d_out,))
        return y


class Conv2d:
    def __init__(self, store, name, c_in, c_out, k, rng, stride=1, pad=None,
                 init="uniform", bias=True, trainable=True):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        fan_in = c_in * k * k
        w = np.zeros((c_out, c_in, k, k)) if init == "zeros" else _uniform_init(
            rng, (c_out, c_in, k, k), fan_in)
        self.w = store.add(f"{name}.w", T.tensor(w), trainable)
        self.b = None
        if bias:
            self.b = store.add(f"{name}.b", T.zeros((c_out,)), trainable)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        if self.b is not None:
            y = T.bias_add_channel(y, self.b)
        return y


class GroupNorm:
    def __init__(self, store, name, channels, groups=None, eps=1e-5, trainable=True):
        self.groups = min(8, channels) if groups is None else groups
        self.eps = eps
        self.gamma = store.add(f"{name}.g", T.ones((channels,)), trainable)
        self.beta = store.add(f"{name}.b", T.zeros((channels,)), trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


def to_tokens(x: Tensor) -> Tensor:
    """NCHW feature map -> (N, H*W, C) token sequence (one token per position)."""
    n, c, h, w = x.shape
    return T.reshape(T.transpose(x, (0, 2, 3, 1)), (n, h * w, c))


def from_tokens(tok: Tensor, spatial) -> Tensor:
    n, _, c = tok.shape
    h, w = spatial
    return T.transpose(T.reshape(tok, (n, h, w, c)), (0, 3, 1, 2))


class Attention:
    """Single-head scaled dot-product attention over token sequences.

    Query/key/value/output projections are d_model x d_model, no biases.
    With ``zero_out`` the output projection starts at exact zero, so a
    residual wrapper ``x + attn(x, kv)`` is the identity at init.
    """

    def __init__(self, store, name, d_model, rng, zero_out=False, trainable=True):
        self.d = d_model
        self.wq = store.add(f"{name}.wq",
                            T.tensor(_uniform_init(rng, (d_model, d_model), d_model)),
                            trainable)
        self.wk = store.add(f"{name}.wk",
                            T.tensor(_uniform_init(rng, (d_model, d_model), d_model)),
                            trainable)
        self.wv = store.add(f"{name}.wv",
                            T.tensor(_uniform_init(rng, (d_model, d_model), d_model)),
                            trainable)
        wo = (np.zeros((d_model, d_model)) if zero_out
              else _uniform_init(rng, (d_model, d_model), d_model))
        self.wo = store.add(f"{name}.wo", T.tensor(wo), trainable)

    def __call__(self, queries_from: Tensor, kv_from: Tensor) -> Tensor:
        if queries_from.shape[-1] != self.d or kv_from.shape[-1] != self.d:
            raise DimensionError(
                f"attention d_model={self.d} but tokens have "
                f"{queries_from.shape} / {kv_from.shape}"
            )
        batched = queries_from.data.ndim == 3
        q_in, kv_in = queries_from, kv_from
        if not batched:
            q_in = T.reshape(queries_from, (1,) + queries_from.shape)
            kv_in = T.reshape(kv_from, (1,) + kv_from.shape)
        q = _proj(q_in, self.wq)
        k = _proj(kv_in, self.wk)
        v = _proj(kv_in, self.wv)
        att = T.softmax(
            T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.d)),
            axis=-1,
        )
        out = _proj(T.matmul(att, v), self.wo)
        if not batched:
            out = T.reshape(out, out.shape[1:])
        return out


def _proj(tok: Tensor, w: Tensor) -> Tensor:
    n, t, d = tok.shape
    return T.reshape(T.matmul(T.reshape(tok, (n * t, d)), w), (n, t, w.shape[1]))


def sinusoidal_features(t, dim: int) -> np.ndarray:
    """Closed-form sinusoidal features for integer steps (pre-projection).

    Frequencies are geometrically spaced from 1 down to 1/10000; the
    first half of the vector holds sines, the second half cosines.
    Accepts a scalar step or a vector of steps; returns (dim,) or (n, dim).
    """
    if dim % 2 != 0:
        raise ContractError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    steps = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = steps[:, None] * freqs[None, :]
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return feats[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else feats


class TimestepEmbedding:
    """Sinusoidal features followed by a two-layer silu projection."""

    def __init__(self, store, name, dim_sin, dim_out, rng, trainable=True):
        self.dim_sin = dim_sin
        self.dim_out = dim_out
        self.l1 = Linear(store, f"{name}.l1", dim_sin, dim_out, rng, trainable=trainable)
        self.l2 = Linear(store, f"{name}.l2", dim_out, dim_out, rng, trainable=trainable)

    def __call__(self, t, t_max: int) -> Tensor:
        steps = np.atleast_1d(np.asarray(t))
        if np.any(steps < 0) or np.any(steps > t_max):
            raise ContractError(f"timestep {t} outside [0, {t_max}]")
        feats = T.tensor(sinusoidal_features(steps, self.dim_sin))
        return self.l2(T.silu(self.l1(feats)))  # (n, dim_out)


class ResBlock:
    """norm -> silu -> conv -> +time -> norm -> silu -> conv(zero) -> +skip."""

    def __init__(self, store, name, c_in, c_out, t_dim, rng, trainable=True):
        self.c_in, self.c_out = c_in, c_out
        self.n1 = GroupNorm(store, f"{name}.n1", c_in, trainable=trainable)
        self.c1 = Conv2d(store, f"{name}.c1", c_in, c_out, 3, rng, trainable=trainable)
        self.temb = Linear(store, f"{name}.temb", t_dim, c_out, rng, init="zeros",
                           trainable=trainable)
        self.n2 = GroupNorm(store, f"{name}.n2", c_out, trainable=trainable)
        self.c2 = Conv2d(store, f"{name}.c2", c_out, c_out, 3, rng, init="zeros",
                         trainable=trainable)
        self.skip = None
        if c_in != c_out:
            self.skip = Conv2d(store, f"{name}.skip", c_in, c_out, 1, rng, pad=0,
                               bias=False, trainable=trainable)

    def __call__(self, x: Tensor, t_emb: Tensor) -> Tensor:
        h = self.c1(T.silu(self.n1(x)))
        h = T.add_sample_channel(h, self.temb(t_emb))
        h = self.c2(T.silu(self.n2(h)))
        s = self.skip(x) if self.skip is not None else x
        return T.add(s, h)
