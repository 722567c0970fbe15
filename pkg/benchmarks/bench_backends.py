"""Compare the numpy (im2col + BLAS) and numba (jitted loop) convolution
kernels on the shapes this package actually runs.

Run twice, once per backend (selection happens at import):

    CASSR_BACKEND=numpy python3 benchmarks/bench_backends.py
    CASSR_BACKEND=numba python3 benchmarks/bench_backends.py

Measured on one CPU core the numpy path wins by roughly an order of
magnitude on every shape below, which is why it is the default backend.
"""

import time

import numpy as np

from cassr import backend

# (label, N, C_in, H, W, C_out, k, stride, pad) — the hot shapes of the
# 64x64 HR / 16x16 latent pipeline plus the codec encoder.
SHAPES = [
    ("latent in   ", 4, 4, 16, 16, 32, 3, 1, 1),
    ("level0 res  ", 4, 32, 16, 16, 32, 3, 1, 1),
    ("level1 res  ", 4, 64, 8, 8, 64, 3, 1, 1),
    ("level2 res  ", 4, 128, 4, 4, 128, 3, 1, 1),
    ("down 2x2/s2 ", 4, 32, 16, 16, 64, 2, 2, 0),
    ("codec e_in  ", 4, 3, 64, 64, 32, 3, 1, 1),
    ("codec mid   ", 4, 64, 16, 16, 64, 3, 1, 1),
]


def bench_shape(label, n, c, h, w, o, k, stride, pad, reps=30):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wt = rng.standard_normal((o, c, k, k)).astype(np.float32)
    # warm-up (also triggers numba compilation)
    out, ctx = backend.conv2d_forward(x, wt, stride, pad)
    dy = rng.standard_normal(out.shape).astype(np.float32)
    backend.conv2d_backward(dy, x, wt, ctx, stride, pad)

    t0 = time.perf_counter()
    for _ in range(reps):
        out, ctx = backend.conv2d_forward(x, wt, stride, pad)
    fwd = (time.perf_counter() - t0) / reps

    t0 = time.perf_counter()
    for _ in range(reps):
        backend.conv2d_backward(dy, x, wt, ctx, stride, pad)
    bwd = (time.perf_counter() - t0) / reps
    print(f"{label}  fwd {fwd * 1e3:8.3f} ms   bwd {bwd * 1e3:8.3f} ms")
    return fwd, bwd


def main():
    print(f"active backend: {backend.ACTIVE}")
    tot_f = tot_b = 0.0
    for spec in SHAPES:
        f, b = bench_shape(*spec)
        tot_f += f
        tot_b += b
    print(f"{'total       '}  fwd {tot_f * 1e3:8.3f} ms   "
          f"bwd {tot_b * 1e3:8.3f} ms")


if __name__ == "__main__":
    main()
