"""Pure-numpy image resampling and filtering on HxWxC float arrays.

The bicubic kernel is the cubic convolution kernel with a = -0.5
(Catmull-Rom):

    k(x) = (a+2)|x|^3 - (a+3)|x|^2 + 1          for |x| <= 1
    k(x) = a|x|^3 - 5a|x|^2 + 8a|x| - 4a        for 1 < |x| < 2

Source coordinates use the half-pixel convention
``src = (dst + 0.5) / scale - 0.5`` and edges are clamped.  When
downscaling, the kernel support is widened by 1/scale (anti-aliased,
PIL-style).
"""

from __future__ import annotations

import functools

import numpy as np

CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    m1 = ax <= 1.0
    m2 = (ax > 1.0) & (ax < 2.0)
    out[m1] = (a + 2) * ax[m1] ** 3 - (a + 3) * ax[m1] ** 2 + 1
    out[m2] = a * ax[m2] ** 3 - 5 * a * ax[m2] ** 2 + 8 * a * ax[m2] - 4 * a
    return out


def _linear_kernel(x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(x), 0.0, None)


@functools.lru_cache(maxsize=256)
def _resample_matrix(n_in: int, n_out: int, kernel: str) -> tuple:
    """Dense (n_out, n_in) row-normalized resampling matrix."""
    scale = n_out / n_in
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    if kernel == "nearest":
        idx = np.clip(np.floor(src + 0.5).astype(int), 0, n_in - 1)
        mat = np.zeros((n_out, n_in))
        mat[np.arange(n_out), idx] = 1.0
        return (mat,)
    support = 2.0 if kernel == "bicubic" else 1.0
    fn = cubic_kernel if kernel == "bicubic" else _linear_kernel
    if kernel not in ("bicubic", "bilinear"):
        raise ValueError(f"unknown resize kernel {kernel!r}")
    widen = max(1.0, 1.0 / scale)  # anti-alias when downscaling
    radius = support * widen
    mat = np.zeros((n_out, n_in))
    for o in range(n_out):
        lo = int(np.floor(src[o] - radius)) + 1
        hi = int(np.ceil(src[o] + radius))
        taps = np.arange(lo, hi + 1)
        w = fn((taps - src[o]) / widen)
        s = w.sum()
        if s != 0:
            w = w / s
        np.add.at(mat[o], np.clip(taps, 0, n_in - 1), w)
    return (mat,)


def resize(img: np.ndarray, out_h: int, out_w: int, kernel: str = "bicubic") -> np.ndarray:
    """Separable resize of an (H, W) or (H, W, C) array."""
    h, w = img.shape[:2]
    mr = _resample_matrix(h, out_h, kernel)[0]
    mc = _resample_matrix(w, out_w, kernel)[0]
    if img.ndim == 2:
        return mr @ img @ mc.T
    return np.einsum("oh,hwc,pw->opc", mr, img, mc, optimize=True)


def gaussian_kernel(size: int, sigma_x: float, sigma_y: float = None,
                    theta: float = 0.0) -> np.ndarray:
    """Normalized (an)isotropic Gaussian kernel; sum is 1."""
    if sigma_y is None:
        sigma_y = sigma_x
    r = size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    ct, st = np.cos(theta), np.sin(theta)
    xr = ct * x + st * y
    yr = -st * x + ct * y
    k = np.exp(-0.5 * ((xr / sigma_x) ** 2 + (yr / sigma_y) ** 2))
    return k / k.sum()


def filter2d_reflect(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D correlation with reflect padding, channels independent."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    pad = ((ph, ph), (pw, pw)) + (((0, 0),) if img.ndim == 3 else ())
    xp = np.pad(img, pad, mode="reflect")
    h, w = img.shape[:2]
    out = np.zeros_like(img, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * xp[i : i + h, j : j + w]
    return out


def to_model(img_hwc: np.ndarray) -> np.ndarray:
    """[0,1] HWC image -> [-1,1] 1xCxHxW model array."""
    return (img_hwc.transpose(2, 0, 1)[None] * 2.0 - 1.0).copy()


def from_model(x_nchw: np.ndarray) -> np.ndarray:
    """[-1,1] 1xCxHxW model array -> clipped [0,1] HWC image."""
    return np.clip((x_nchw[0].transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)
