"""Kernel backend selection: numba-jitted loops or pure numpy.

The convolution kernels dominate training time.  Two implementations
are provided and selected once at import via the ``CASSR_BACKEND``
environment variable:

  - ``numpy``  — im2col + BLAS matmul (default: on the small conv shapes
    this package runs, sgemm beats jitted loops by an order of magnitude;
    see benchmarks/bench_backends.py)
  - ``numba``  — @njit direct-loop kernels (single-threaded, cached)
  - ``auto``   — same as numpy
"""

from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("CASSR_BACKEND", "auto").lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(f"CASSR_BACKEND must be auto|numba|numpy, got {_REQUESTED!r}")

USE_NUMBA = False
if _REQUESTED == "numba":
    from numba import njit

    USE_NUMBA = True
ACTIVE = "numba" if USE_NUMBA else "numpy"


def _pad_input(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _out_extent(size, k, stride, pad):
    num = size + 2 * pad - k
    if num < 0 or num % stride != 0:
        raise ValueError(
            f"conv output extent not integral: (size={size} + 2*pad={pad} "
            f"- k={k}) not divisible by stride={stride}"
        )
    return num // stride + 1


# -- pure-numpy (im2col) path -------------------------------------------------

def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[
                :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
            ]
    return cols


def _conv2d_forward_np(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = _out_extent(h, kh, stride, pad)
    wo = _out_extent(wd, kw, stride, pad)
    cols = _im2col(_pad_input(x, pad), kh, kw, stride, ho, wo)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))  # (O,N,Ho,Wo)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), cols


def _conv2d_backward_np(dy, x, w, cols, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    if cols is None:
        cols = _im2col(_pad_input(x, pad), kh, kw, stride, ho, wo)
    dw = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 4, 5]))
    dcols = np.tensordot(w, dy, axes=([0], [1]))  # (C,kh,kw,N,Ho,Wo)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[
                :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
            ] += dcols[:, i, j].transpose(1, 0, 2, 3)
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return np.ascontiguousarray(dx), dw


# -- numba path ---------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True)
    def _conv2d_forward_nb(xp, w, stride, ho, wo):
        n, c = xp.shape[0], xp.shape[1]
        o, kh, kw = w.shape[0], w.shape[2], w.shape[3]
        out = np.zeros((n, o, ho, wo), dtype=xp.dtype)
        for b in range(n):
            for oc in range(o):
                acc = out[b, oc]
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wij = w[oc, ic, i, j]
                            for y in range(ho):
                                row = xp[b, ic, y * stride + i]
                                for xx in range(wo):
                                    acc[y, xx] += wij * row[xx * stride + j]
        return out

    @njit(cache=True)
    def _conv2d_backward_nb(dy, xp, w, stride):
        n, c, hp, wp = xp.shape
        o, kh, kw = w.shape[0], w.shape[2], w.shape[3]
        ho, wo = dy.shape[2], dy.shape[3]
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        for b in range(n):
            for oc in range(o):
                g2 = dy[b, oc]
                for ic in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wij = w[oc, ic, i, j]
                            acc_w = 0.0
                            for y in range(ho):
                                grow = g2[y]
                                drow = dxp[b, ic, y * stride + i]
                                xrow = xp[b, ic, y * stride + i]
                                for xx in range(wo):
                                    drow[xx * stride + j] += grow[xx] * wij
                                    acc_w += grow[xx] * xrow[xx * stride + j]
                            dw[oc, ic, i, j] += acc_w
        return dxp, dw


def conv2d_forward(x, w, stride, pad):
    """Cross-correlation forward; returns (out, ctx) with ctx reused in backward."""
    if USE_NUMBA:
        ho = _out_extent(x.shape[2], w.shape[2], stride, pad)
        wo = _out_extent(x.shape[3], w.shape[3], stride, pad)
        xp = np.ascontiguousarray(_pad_input(x, pad))
        return _conv2d_forward_nb(xp, np.ascontiguousarray(w), stride, ho, wo), xp
    return _conv2d_forward_np(x, w, stride, pad)


def conv2d_backward(dy, x, w, ctx, stride, pad):
    """Gradients (dx, dw) for conv2d_forward."""
    if USE_NUMBA:
        xp = ctx if ctx is not None else np.ascontiguousarray(_pad_input(x, pad))
        dxp, dw = _conv2d_backward_nb(
            np.ascontiguousarray(dy), xp, np.ascontiguousarray(w), stride
        )
        h, wd = x.shape[2], x.shape[3]
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        return np.ascontiguousarray(dx), dw
    return _conv2d_backward_np(dy, x, w, ctx, stride, pad)
