"""Pixel-space image quality metrics (PSNR, SSIM) and metric reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for images in [0,1]; +inf when identical."""
    if a.shape != b.shape:
        raise ValueError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    err = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def _gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a 1-D window g."""
    tmp = np.apply_along_axis(lambda r: np.convolve(r, g, mode="valid"), 1, img)
    return np.apply_along_axis(lambda c: np.convolve(c, g, mode="valid"), 0, tmp)


def ssim(a: np.ndarray, b: np.ndarray, window=11, sigma=1.5,
         k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Mean local SSIM over an 11x11 Gaussian window, grayscale by channel mean."""
    if a.shape != b.shape:
        raise ValueError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    x = a.mean(axis=2) if a.ndim == 3 else a.astype(np.float64)
    y = b.mean(axis=2) if b.ndim == 3 else b.astype(np.float64)
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} smaller than {window}x{window} window")
    g = _gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM plus aggregates and run metadata."""

    variant: str = ""
    metadata: dict = field(default_factory=dict)
    per_image: list = field(default_factory=list)  # (index, psnr, ssim)

    def add(self, index: int, p: float, s: float):
        self.per_image.append((index, p, s))

    def _finite(self, col):
        vals = [row[col] for row in self.per_image]
        return [v for v in vals if math.isfinite(v)] or [math.inf]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self._finite(1)))

    @property
    def std_psnr(self) -> float:
        return float(np.std(self._finite(1)))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self._finite(2)))

    def to_csv(self) -> str:
        lines = ["index,psnr,ssim"]
        for i, p, s in self.per_image:
            ptxt = "inf" if math.isinf(p) else f"{p:.6f}"
            lines.append(f"{i},{ptxt},{s:.6f}")
        lines.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}")
        lines.append(f"std,{self.std_psnr:.6f},")
        return "\n".join(lines) + "\n"

    def consistent(self) -> bool:
        """Aggregates must be recomputable from stored per-image values."""
        return math.isclose(self.mean_psnr, float(np.mean(self._finite(1))))
