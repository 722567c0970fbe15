"""Noise schedule, forward noising, noise-prediction loss, DDIM stepping
and classifier-free guidance arithmetic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import ContractError


@dataclass
class NoiseSchedule:
    """beta/alpha/alpha_bar tables indexed 0..T, with alpha_bar[0] = 1.

    Index 0 is the identity step (no noise); betas live at 1..T.
    """

    t_max: int
    beta: np.ndarray       # (T+1,), beta[0] unused (0)
    alpha: np.ndarray      # 1 - beta
    alpha_bar: np.ndarray  # running product, alpha_bar[0] = 1

    def __post_init__(self):
        assert self.alpha_bar[0] == 1.0
        assert np.all(np.diff(self.alpha_bar) < 0)


def linear_schedule(t_max: int, beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    """Betas linearly spaced from beta_start to beta_end inclusive.

    T=1 degenerates to the range start (a single beta of beta_start).
    """
    if t_max < 1:
        raise ValueError(f"schedule needs T >= 1, got {t_max}")
    betas = (np.array([beta_start]) if t_max == 1
             else np.linspace(beta_start, beta_end, t_max))
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(t_max, beta, alpha, alpha_bar)


def _check_t(sched: NoiseSchedule, t, lo: int = 0):
    t = np.asarray(t)
    if np.any(t < lo) or np.any(t > sched.t_max):
        raise ContractError(f"step {t} outside [{lo}, {sched.t_max}]")


def q_sample(z0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward noising: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    ``t`` may be a scalar step or one step per leading-axis sample.
    """
    _check_t(sched, t)
    if z0.shape != eps.shape:
        raise T.DimensionError(f"q_sample shapes differ: {z0.shape} vs {eps.shape}")
    ab = sched.alpha_bar[np.asarray(t)]
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def ddpm_loss(model_fn, z0, z_lr, z_r, t, c, eps, sched: NoiseSchedule) -> T.Tensor:
    """Noise-prediction MSE: ||eps - model(z_t, z_r, z_lr, t, c)||^2 / n.

    ``model_fn(z_t, z_lr, z_r, t, c)`` must return the predicted noise
    Tensor; gradients flow only into its trainable parameters (z_t and
    eps are constant leaves).
    """
    z_t = q_sample(z0, t, eps, sched)
    pred = model_fn(T.Tensor(z_t.astype(T.get_dtype())), z_lr, z_r, t, c)
    return T.mse(pred, T.Tensor(eps.astype(T.get_dtype())))


def ddim_step(z_t, eps_hat, t, t_prev, eta, sched: NoiseSchedule, noise=None):
    """One DDIM update from step t to t_prev (t > t_prev >= 0)."""
    if not (sched.t_max >= t > t_prev >= 0):
        raise ContractError(f"ddim requires T >= t > t_prev >= 0, got {t}, {t_prev}")
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t_prev]
    z0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p)
    rem = 1.0 - ab_p - sigma**2
    assert rem >= -1e-12, "sigma^2 exceeded 1 - alpha_bar[t_prev]"
    out = np.sqrt(ab_p) * z0_hat + np.sqrt(max(rem, 0.0)) * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ContractError("eta > 0 requires a noise draw")
        out = out + sigma * noise
    return out


def cfg_combine(eps_cond, eps_uncond, s: float):
    """Classifier-free guidance: eps_uncond + s (eps_cond - eps_uncond)."""
    if eps_cond.shape != eps_uncond.shape:
        raise T.DimensionError(
            f"cfg shapes differ: {eps_cond.shape} vs {eps_uncond.shape}")
    if s == 1.0:
        return eps_cond
    return eps_uncond + s * (eps_cond - eps_uncond)


def init_noise(z_lr_up: np.ndarray, sched: NoiseSchedule, seed: int,
               lr_init: bool = True) -> np.ndarray:
    """Sampling start point; optionally diffuses the upsampled-LR latent to step T."""
    eps = Rng(seed, stream=0x17).normal(z_lr_up.shape)
    if not lr_init:
        return eps
    ab = sched.alpha_bar[sched.t_max]
    return np.sqrt(ab) * z_lr_up + np.sqrt(1.0 - ab) * eps


def ddim_timesteps(t_max: int, steps: int) -> list:
    """Uniformly spaced decreasing step subset ending at 0."""
    if not (1 <= steps <= t_max):
        raise ContractError(f"ddim steps must be in [1, {t_max}], got {steps}")
    ts = np.unique(np.linspace(0, t_max, steps + 1).round().astype(int))
    return list(ts[::-1])
