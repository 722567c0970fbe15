"""Tiny residual convolutional autoencoder providing the 4x-reduced latent
space.  Space-to-depth on the way in and pixel-shuffle on the way out keep
every convolution at or below half resolution and preserve high-frequency
detail better than interpolating upsamplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, GroupNorm, ParamStore
from .rng import Rng
from .tensor import Tensor


@dataclass
class CodecConfig:
    c_lat: int = 4
    widths: tuple = (32, 64)  # channels at 1/2 and 1/4 resolution
    kl_weight: float = 1e-6

    def to_dict(self):
        d = self.__dict__.copy()
        d["widths"] = list(d["widths"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, c*r^2, H, W) -> (N, c, H*r, W*r), composed from reshape/transpose."""
    n, crr, h, w = x.shape
    c = crr // (r * r)
    x = T.reshape(x, (n, c, r, r, h, w))
    x = T.transpose(x, (0, 1, 4, 2, 5, 3))
    return T.reshape(x, (n, c, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, c, H*r, W*r) -> (N, c*r^2, H, W), inverse of pixel_shuffle."""
    n, c, hr, wr = x.shape
    h, w = hr // r, wr // r
    x = T.reshape(x, (n, c, h, r, w, r))
    x = T.transpose(x, (0, 1, 3, 5, 2, 4))
    return T.reshape(x, (n, c * r * r, h, w))


class _ResBlock:
    """norm -> silu -> conv -> norm -> silu -> conv(zero) -> +skip."""

    def __init__(self, store, name, c, rng):
        self.n1 = GroupNorm(store, f"{name}.n1", c)
        self.c1 = Conv2d(store, f"{name}.c1", c, c, 3, rng)
        self.n2 = GroupNorm(store, f"{name}.n2", c)
        self.c2 = Conv2d(store, f"{name}.c2", c, c, 3, rng, init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        h = self.c1(T.silu(self.n1(x)))
        h = self.c2(T.silu(self.n2(h)))
        return T.add(x, h)


class CodecModel:
    """Encoder (3 -> c_lat, /4 spatial) and decoder (c_lat -> 3, x4).

    ``encode`` is deterministic (mean head only); the variance head is
    used solely by the KL term during codec training.
    """

    def __init__(self, cfg: CodecConfig = None, seed: int = 0):
        self.cfg = cfg or CodecConfig()
        w0, w1 = self.cfg.widths
        c = self.cfg.c_lat
        self.store = ParamStore()
        rng = Rng(seed, stream=0xAE)
        s = self.store
        self.e_in = Conv2d(s, "codec.e_in", 12, w0, 3, rng)
        self.e_b0 = _ResBlock(s, "codec.e_b0", w0, rng)
        self.e_d0 = Conv2d(s, "codec.e_d0", w0, w1, 2, rng, stride=2, pad=0)
        self.e_b1 = _ResBlock(s, "codec.e_b1", w1, rng)
        self.e_b2 = _ResBlock(s, "codec.e_b2", w1, rng)
        self.e_mu = Conv2d(s, "codec.e_mu", w1, c, 3, rng)
        self.e_lv = Conv2d(s, "codec.e_lv", w1, c, 3, rng, init="zeros")
        self.d_in = Conv2d(s, "codec.d_in", c, w1, 3, rng)
        self.d_b0 = _ResBlock(s, "codec.d_b0", w1, rng)
        self.d_b1 = _ResBlock(s, "codec.d_b1", w1, rng)
        self.d_u0 = Conv2d(s, "codec.d_u0", w1, 4 * w0, 3, rng)
        self.d_b2 = _ResBlock(s, "codec.d_b2", w0, rng)
        self.d_b3 = _ResBlock(s, "codec.d_b3", w0, rng)
        self.d_n = GroupNorm(s, "codec.d_n", w0)
        self.d_out = Conv2d(s, "codec.d_out", w0, 12, 3, rng)
        self.frozen = False

    def _check_extents(self, x):
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(
                f"codec needs H, W divisible by 4, got {x.shape[2]}x{x.shape[3]}")

    def encode_heads(self, x: Tensor):
        """(mu, logvar) latent heads for an NCHW [-1,1] image tensor."""
        self._check_extents(x)
        h = self.e_in(pixel_unshuffle(x, 2))
        h = self.e_b0(h)
        h = self.e_b2(self.e_b1(self.e_d0(h)))
        return self.e_mu(h), self.e_lv(h)

    def encode_t(self, x: Tensor) -> Tensor:
        return self.encode_heads(x)[0]

    def decode_t(self, z: Tensor) -> Tensor:
        h = self.d_b1(self.d_b0(self.d_in(z)))
        h = self.d_b3(self.d_b2(pixel_shuffle(self.d_u0(h), 2)))
        h = self.d_out(T.silu(self.d_n(h)))
        return pixel_shuffle(h, 2)

    def encode(self, img: np.ndarray) -> np.ndarray:
        """Deterministic latent for an NCHW array clamped to [-1,1]."""
        with T.no_grad():
            return self.encode_t(Tensor(
                np.clip(img, -1.0, 1.0).astype(T.get_dtype()))).data

    def decode(self, z: np.ndarray) -> np.ndarray:
        """NCHW image array clamped to [-1,1]."""
        with T.no_grad():
            out = self.decode_t(Tensor(z.astype(T.get_dtype()))).data
        return np.clip(out, -1.0, 1.0)

    def loss(self, x: Tensor) -> Tensor:
        """Reconstruction MSE plus kl_weight * KL(mean, logvar || N(0, 1))."""
        mu, lv = self.encode_heads(x)
        recon = self.decode_t(mu)
        rec = T.mse(recon, x)
        # KL = -0.5 mean(1 + lv - mu^2 - exp(lv)); composed from primitives
        mu2 = T.mul(mu, mu)
        kl = T.scale(T.mean(T.add(T.sub(T.add(mu2, T.exp(lv)), lv), -1.0)), 0.5)
        return T.add(rec, T.scale(kl, self.cfg.kl_weight))

    def freeze(self):
        self.store.freeze_all()
        self.frozen = True
