"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import Rng


@dataclass
class GradCheckReport:
    step: float
    threshold: float
    per_param: dict = field(default_factory=dict)  # name -> max relative error

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold

    def __str__(self):
        lines = [f"{'param':<32} {'max_rel_err':>12}"]
        for name, err in self.per_param.items():
            lines.append(f"{name:<32} {err:>12.3e}")
        lines.append(
            f"overall max {self.max_rel_err:.3e} "
            f"({'PASS' if self.passed else 'FAIL'} at {self.threshold:g}, h={self.step:g})"
        )
        return "\n".join(lines)


def _rel_err(a: float, n: float, atol: float = 1e-6) -> float:
    # Below atol both values sit in central-difference cancellation noise
    # (f64 eps * loss / h); treat them as agreeing rather than dividing
    # noise by noise.
    if max(abs(a), abs(n)) < atol:
        return 0.0
    return abs(a - n) / max(abs(a), abs(n))


def finite_diff_check(
    f,
    params: dict,
    h: float = 1e-5,
    threshold: float = 1e-4,
    max_coords: int = 32,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` is a zero-argument deterministic function returning a scalar
    Tensor built from the tensors in ``params`` (name -> Tensor, all
    requires_grad).  Run in f64 mode.  For large tensors, ``max_coords``
    coordinates per tensor are sampled (at least 32 where available).
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    T.backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = Rng(seed, stream=0xFD)
    report = GradCheckReport(step=h, threshold=threshold)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = list(range(n))
        else:
            seen = set()
            while len(seen) < max_coords:
                seen.add(rng.randint(0, n))
            coords = sorted(seen)
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            with T.no_grad():
                fp = f().item()
            flat[idx] = orig - h
            with T.no_grad():
                fm = f().item()
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, _rel_err(float(analytic[name].reshape(-1)[idx]), numeric))
        report.per_param[name] = worst
    return report


# -- named finite-difference suite --------------------------------------------
# Each case is a zero-argument builder returning (f, params) for
# finite_diff_check.  Grouped so the command line can run one module's
# cases in isolation.

def _rand(rng, shape):
    return T.tensor(rng.normal(shape) * 0.5, requires_grad=True)


def _cases_tensor(rng):
    a = _rand(rng, (3, 4))
    b = _rand(rng, (3, 4))
    m1 = _rand(rng, (3, 5))
    m2 = _rand(rng, (5, 4))
    bm1 = _rand(rng, (2, 3, 5))
    bm2 = _rand(rng, (2, 5, 4))
    bias = _rand(rng, (4,))
    x4 = _rand(rng, (2, 4, 6, 6))
    w4 = _rand(rng, (3, 4, 3, 3))
    cb = _rand(rng, (4,))
    sc = _rand(rng, (2, 4))
    g = _rand(rng, (4,))
    be = _rand(rng, (4,))
    return {
        "add": (lambda: T.tsum(T.mul(T.add(a, b), b)), {"a": a, "b": b}),
        "sub": (lambda: T.tsum(T.mul(T.sub(a, b), a)), {"a": a, "b": b}),
        "mul": (lambda: T.tsum(T.mul(a, b)), {"a": a, "b": b}),
        "scale": (lambda: T.tsum(T.scale(T.mul(a, a), 1.7)), {"a": a}),
        "exp": (lambda: T.tsum(T.exp(T.scale(a, 0.3))), {"a": a}),
        "silu": (lambda: T.tsum(T.silu(a)), {"a": a}),
        "matmul": (lambda: T.tsum(T.matmul(m1, m2)), {"m1": m1, "m2": m2}),
        "matmul_batched": (lambda: T.tsum(T.matmul(bm1, bm2)),
                           {"bm1": bm1, "bm2": bm2}),
        "bias_add": (lambda: T.tsum(T.mul(T.bias_add(a, bias),
                                          T.bias_add(a, bias))),
                     {"a": a, "bias": bias}),
        "bias_add_channel": (lambda: T.tsum(T.mul(T.bias_add_channel(x4, cb),
                                                  x4)),
                             {"x": x4, "cb": cb}),
        "add_sample_channel": (lambda: T.tsum(
            T.mul(T.add_sample_channel(x4, sc), x4)), {"x": x4, "sc": sc}),
        "conv2d": (lambda: T.tsum(T.conv2d(x4, w4, stride=1, pad=1)),
                   {"x": x4, "w": w4}),
        "conv2d_strided": (lambda: T.tsum(
            T.mul(T.conv2d(x4, w4, stride=1, pad=1),
                  T.conv2d(x4, w4, stride=1, pad=1))), {"x": x4, "w": w4}),
        "reshape_transpose": (lambda: T.tsum(
            T.mul(T.transpose(T.reshape(a, (4, 3)), (1, 0)), b)),
            {"a": a, "b": b}),
        "concat_slice": (lambda: T.tsum(T.mul(
            T.slice_axis(T.concat([a, b], axis=0), 0, 1, 5),
            T.slice_axis(T.concat([b, a], axis=0), 0, 0, 4))),
            {"a": a, "b": b}),
        "upsample_nearest": (lambda: T.tsum(
            T.mul(T.upsample_nearest(x4, 2), T.upsample_nearest(x4, 2))),
            {"x": x4}),
        "downsample_strided": (lambda: T.tsum(
            T.mul(T.downsample_strided(x4, 2), T.downsample_strided(x4, 2))),
            {"x": x4}),
        "mean": (lambda: T.mean(T.mul(a, a)), {"a": a}),
        "mse": (lambda: T.mse(a, b), {"a": a, "b": b}),
        "softmax": (lambda: T.tsum(T.mul(T.softmax(a, axis=-1), b)),
                    {"a": a, "b": b}),
        "group_norm": (lambda: T.tsum(T.mul(
            T.group_norm(x4, g, be, 2, 1e-5), x4)),
            {"x": x4, "g": g, "be": be}),
    }


def _cases_layers(rng):
    from .layers import Attention, ParamStore, ResBlock, TimestepEmbedding

    cases = {}

    store = ParamStore()
    attn = Attention(store, "gc.attn", 6, Rng(1, stream=1))
    q = _rand(rng, (2, 5, 6))
    kv = _rand(rng, (2, 7, 6))
    params = dict(store.items())
    params["q"] = q
    params["kv"] = kv
    cases["attention"] = (lambda: T.tsum(T.mul(attn(q, kv), attn(q, kv))),
                          params)

    store2 = ParamStore()
    rb = ResBlock(store2, "gc.rb", 4, 6, 8, Rng(2, stream=1))
    for _, p in store2.items():  # break zero inits so gradients are generic
        p.data = rng.normal(p.shape) * 0.3
    temb = _rand(rng, (2, 8))
    x = _rand(rng, (2, 4, 6, 6))
    p2 = dict(store2.items())
    p2["x"] = x
    p2["temb"] = temb
    cases["resblock"] = (lambda: T.tsum(T.mul(rb(x, temb), rb(x, temb))), p2)

    store3 = ParamStore()
    te = TimestepEmbedding(store3, "gc.te", 8, 6, Rng(3, stream=1))
    p3 = dict(store3.items())
    cases["timestep_embedding"] = (
        lambda: T.tsum(T.mul(te([3, 7], 10), te([3, 7], 10))), p3)
    return cases


def _cases_model(rng):
    from .layers import ParamStore
    from .unet import MultipleAttentionBlock

    store = ParamStore()
    mab = MultipleAttentionBlock(store, "gc.mab", 6, Rng(4, stream=1))
    for _, p in store.items():  # perturb the zero output projections
        p.data = rng.normal(p.shape) * 0.3
    x = _rand(rng, (1, 6, 3, 3))
    r = _rand(rng, (1, 6, 3, 3))
    l = _rand(rng, (1, 6, 3, 3))
    params = dict(store.items())
    params.update({"x": x, "r": r, "l": l})
    return {"multiple_attention": (
        lambda: T.tsum(T.mul(mab(x, r, l), mab(x, r, l))), params)}


MODULES = ("tensor", "layers", "model")


def run_suite(module: str = None, h: float = 1e-5, threshold: float = 1e-4,
              max_coords: int = 16) -> dict:
    """Run the finite-difference suite in f64; returns name -> report."""
    if module is not None and module not in MODULES:
        raise ValueError(f"unknown gradcheck module {module!r}, "
                         f"expected one of {MODULES}")
    prev = T.get_dtype()
    T.set_dtype("f64")
    try:
        rng = Rng(0xC0FFEE, stream=0xFD)
        groups = {"tensor": _cases_tensor, "layers": _cases_layers,
                  "model": _cases_model}
        reports = {}
        for gname, builder in groups.items():
            if module is not None and gname != module:
                continue
            for cname, (f, params) in builder(rng).items():
                reports[f"{gname}.{cname}"] = finite_diff_check(
                    f, params, h=h, threshold=threshold, max_coords=max_coords)
        return reports
    finally:
        T.set_dtype("f32" if prev == np.float32 else "f64")
