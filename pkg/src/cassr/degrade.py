"""Seeded second-order blur/resize/noise/compression degradation pipeline
synthesizing LR images from HR sources (Real-ESRGAN-style, with block-DCT
quantization standing in for a JPEG codec)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imageops import filter2d_reflect, gaussian_kernel, resize
from .rng import Rng

# standard luminance quantization table (applied per channel)
_LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_DCT8 = None


def _dct_matrix() -> np.ndarray:
    global _DCT8
    if _DCT8 is None:
        k, n = np.mgrid[0:8, 0:8].astype(np.float64)
        m = np.cos((2 * n + 1) * k * np.pi / 16.0) * np.sqrt(2.0 / 8.0)
        m[0] /= np.sqrt(2.0)
        _DCT8 = m
    return _DCT8


def quality_to_table(quality: float) -> np.ndarray:
    """Conventional quality -> scaled table map (5000/q below 50, 200-2q above)."""
    if not (1 <= quality <= 100):
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    tbl = np.floor((_LUMA_QTABLE * s + 50.0) / 100.0)
    return np.clip(tbl, 1.0, 255.0)


def dct_quantize(img: np.ndarray, quality: float) -> np.ndarray:
    """Per-8x8-block DCT-II quantization artifacts, channels independent.

    Input/output in [0, 1]; blocks are computed on the 0..255 scale
    centered at 128.  Extents not divisible by 8 are edge-padded for the
    transform and cropped back.
    """
    tbl = quality_to_table(quality)
    d = _dct_matrix()
    h, w = img.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    x = img if img.ndim == 3 else img[..., None]
    x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge")
    x = x * 255.0 - 128.0
    hh, ww, c = x.shape
    blocks = x.reshape(hh // 8, 8, ww // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = np.einsum("ij,bqcjk,lk->bqcil", d, blocks, d)
    coef = np.round(coef / tbl) * tbl
    rec = np.einsum("ji,bqcjk,kl->bqcil", d, coef, d)
    out = rec.transpose(0, 3, 1, 4, 2).reshape(hh, ww, c)
    out = (out + 128.0) / 255.0
    out = out[:h, :w]
    return out[..., 0] if img.ndim == 2 else out


@dataclass
class DegradationConfig:
    scale_factor: int = 4
    blur_kernel_sizes: tuple = (3, 5, 7)
    blur_sigma: tuple = (0.2, 2.0)
    aniso_prob: float = 0.5
    resize_range: tuple = (0.5, 1.2)
    resize_kernels: tuple = ("nearest", "bilinear", "bicubic")
    noise_sigma: tuple = (0.002, 0.08)
    gray_noise_prob: float = 0.4
    jpeg_quality: tuple = (30, 95)
    second_order: bool = True
    # second pass uses narrower ranges
    blur_sigma2: tuple = (0.2, 1.0)
    resize_range2: tuple = (0.8, 1.2)
    noise_sigma2: tuple = (0.002, 0.04)
    jpeg_quality2: tuple = (50, 95)

    def __post_init__(self):
        if self.scale_factor < 1:
            raise ValueError("scale_factor must be >= 1")
        for lo, hi in (self.blur_sigma, self.resize_range, self.noise_sigma,
                       self.jpeg_quality):
            if hi < lo:
                raise ValueError(f"empty range ({lo}, {hi})")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        out = {}
        for k, v in d.items():
            out[k] = tuple(v) if isinstance(v, list) else v
        return cls(**out)


@dataclass
class DegradationRecord:
    """Exact sampled parameters and seed for one degraded image.

    Replaying with the same (hr, config, seed) reproduces the LR output
    bit-exactly; the sampled stage parameters are kept for inspection.
    """

    seed: int
    stages: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "stages": self.stages})

    @classmethod
    def from_json(cls, s: str):
        d = json.loads(s)
        return cls(seed=d["seed"], stages=d["stages"])


def _one_pass(img, cfg: DegradationConfig, rng: Rng, record, order: int):
    blur_sigma = cfg.blur_sigma if order == 0 else cfg.blur_sigma2
    resize_range = cfg.resize_range if order == 0 else cfg.resize_range2
    noise_sigma = cfg.noise_sigma if order == 0 else cfg.noise_sigma2
    quality_rng = cfg.jpeg_quality if order == 0 else cfg.jpeg_quality2

    # blur (identity-kernel override below sigma 1e-3)
    ksize = int(rng.choice(list(cfg.blur_kernel_sizes)))
    aniso = rng.uniform() < cfg.aniso_prob
    sx = rng.uniform((), *blur_sigma)
    sy = rng.uniform((), *blur_sigma) if aniso else sx
    theta = rng.uniform((), 0.0, np.pi) if aniso else 0.0
    if max(sx, sy) >= 1e-3:
        img = filter2d_reflect(img, gaussian_kernel(ksize, sx, sy, theta))
    record.stages.append({"op": "blur", "ksize": ksize, "sigma_x": sx,
                          "sigma_y": sy, "theta": float(theta)})

    # resize
    h, w = img.shape[:2]
    s = rng.uniform((), *resize_range)
    kern = rng.choice(list(cfg.resize_kernels))
    nh, nw = max(8, round(h * s)), max(8, round(w * s))
    img = resize(img, nh, nw, kern)
    record.stages.append({"op": "resize", "scale": s, "kernel": kern})

    # additive Gaussian noise
    sigma = rng.uniform((), *noise_sigma)
    gray = rng.uniform() < cfg.gray_noise_prob
    if sigma > 0.0:
        if gray:
            n = rng.normal(img.shape[:2])[..., None] * sigma
        else:
            n = rng.normal(img.shape) * sigma
        img = np.clip(img + n, 0.0, 1.0)
    record.stages.append({"op": "noise", "sigma": sigma, "gray": bool(gray)})

    # compression artifacts (quality 100 bypasses, exact identity)
    q = rng.uniform((), *quality_rng)
    if q < 100.0:
        img = np.clip(dct_quantize(img, q), 0.0, 1.0)
    record.stages.append({"op": "dct_quantize", "quality": q})
    return img


def degrade(hr_img: np.ndarray, cfg: DegradationConfig, seed: int):
    """(lr_img, DegradationRecord) for an HWC HR image in [0, 1]."""
    h, w = hr_img.shape[:2]
    if h % cfg.scale_factor or w % cfg.scale_factor:
        raise ValueError(
            f"HR extents {h}x{w} not divisible by scale {cfg.scale_factor}")
    rng = Rng(seed, stream=0xDE)
    record = DegradationRecord(seed=seed)
    img = hr_img.astype(np.float64)
    img = _one_pass(img, cfg, rng, record, order=0)
    if cfg.second_order:
        img = _one_pass(img, cfg, rng, record, order=1)
    lr = resize(img, h // cfg.scale_factor, w // cfg.scale_factor, "bicubic")
    lr = np.clip(lr, 0.0, 1.0)
    record.stages.append({"op": "final_downsample", "factor": cfg.scale_factor,
                          "kernel": "bicubic"})
    return lr, record


def replay(hr_img: np.ndarray, cfg: DegradationConfig, record: DegradationRecord):
    """Re-run the pipeline from a record's seed; bit-exact reproduction."""
    lr, _ = degrade(hr_img, cfg, record.seed)
    return lr
