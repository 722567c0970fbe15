"""Stage-1 image activation: produce a less-degraded, target-resolution
reference image from the LR input, behind a pluggable generator interface."""

from __future__ import annotations

import numpy as np

from . import schedule as S
from . import tensor as T
from .imageops import resize
from .layers import Conv2d, ParamStore
from .rng import Rng
from .tensor import ContractError, Tensor

KINDS = ("identity_upsample", "cnn_restorer", "mini_diffusion_restorer")


def bicubic_upsample(lr_nchw: np.ndarray, scale: int) -> np.ndarray:
    """Catmull-Rom (a = -0.5) bicubic upsampling of an NCHW [-1,1] array."""
    n, c, h, w = lr_nchw.shape
    out = np.empty((n, c, h * scale, w * scale), dtype=lr_nchw.dtype)
    for i in range(n):
        hwc = lr_nchw[i].transpose(1, 2, 0)
        out[i] = resize(hwc, h * scale, w * scale, "bicubic").transpose(2, 0, 1)
    return np.clip(out, -1.0, 1.0)


class RefGenerator:
    """Pluggable reference generator; all kinds share the activate contract:
    output extents = LR extents x scale, output in [-1,1], deterministic
    given (generator, input, seed)."""

    def __init__(self, kind: str, scale: int = 4, seed: int = 0,
                 base_model=None, codec=None, sched=None,
                 diffusion_steps: int = 8, diffusion_t_start: int = None):
        if kind not in KINDS:
            raise ValueError(f"unknown generator kind {kind!r}, expected {KINDS}")
        self.kind = kind
        self.scale = scale
        self.trained = kind != "cnn_restorer"
        self.store = ParamStore()
        if kind == "cnn_restorer":
            rng = Rng(seed, stream=0xAC)
            w = 48
            self.c1 = Conv2d(self.store, "act.c1", 3, w, 3, rng)
            self.c2 = Conv2d(self.store, "act.c2", w, w, 3, rng)
            self.c3 = Conv2d(self.store, "act.c3", w, w, 3, rng)
            self.c4 = Conv2d(self.store, "act.c4", w, w, 3, rng)
            self.c5 = Conv2d(self.store, "act.c5", w, 3, 3, rng, init="zeros")
        elif kind == "mini_diffusion_restorer":
            if base_model is None or codec is None or sched is None:
                raise ContractError(
                    "mini_diffusion_restorer needs base model, codec and schedule")
            self.base_model = base_model
            self.codec = codec
            self.sched = sched
            self.steps = diffusion_steps
            self.t_start = diffusion_t_start or max(1, sched.t_max // 4)

    def residual_t(self, up: Tensor) -> Tensor:
        """Trainable residual head over the bicubic-upsampled input."""
        h = T.silu(self.c1(up))
        h = T.add(h, T.silu(self.c3(T.silu(self.c2(h)))))
        h = T.silu(self.c4(h))
        # Damped residual: a small fixed output scale keeps late-training
        # optimizer noise from perturbing the near-identity optimum.
        return T.add(up, T.scale(self.c5(h), 0.25))

    def __call__(self, lr_nchw: np.ndarray, seed: int = 0) -> np.ndarray:
        return activate(self, lr_nchw, seed)


def activate(gen: RefGenerator, lr_nchw: np.ndarray, seed: int = 0) -> np.ndarray:
    """Reference image (NCHW, [-1,1]) at LR extents x scale."""
    up = bicubic_upsample(lr_nchw, gen.scale)
    if gen.kind == "identity_upsample":
        return up
    if gen.kind == "cnn_restorer":
        if not gen.trained:
            raise ContractError("cnn_restorer used before training")
        with T.no_grad():
            out = gen.residual_t(Tensor(up.astype(T.get_dtype()))).data
        return np.clip(out, -1.0, 1.0)
    # mini_diffusion_restorer: partially noise the encoded upsampled LR and
    # run a short unconditional DDIM trajectory on the frozen base model
    sched = gen.sched
    z = gen.codec.encode(up)
    eps = Rng(seed, stream=0x1D).normal(z.shape)
    t0 = gen.t_start
    z_t = S.q_sample(z, t0, eps, sched)
    ts = [t for t in S.ddim_timesteps(sched.t_max, gen.steps) if t <= t0]
    if not ts or ts[0] != t0:
        ts = [t0] + [t for t in ts if t < t0]
    with T.no_grad():
        for t, t_prev in zip(ts[:-1], ts[1:]):
            eps_hat = gen.base_model.predict_base(
                Tensor(z_t.astype(T.get_dtype())), np.full(z_t.shape[0], t)).data
            z_t = S.ddim_step(z_t, eps_hat.astype(np.float64), t, t_prev, 0.0, sched)
    return gen.codec.decode(z_t)
