"""Diffusion algebra: schedule oracle, forward-noising Monte-Carlo
marginals, DDIM inversion and DDPM-posterior equivalence, CFG identities."""

import numpy as np
import pytest

from cassr import schedule as S
from cassr import tensor as T
from cassr.rng import Rng
from cassr.tensor import ContractError, Tensor


def test_schedule_degenerate_t1():
    s = S.linear_schedule(1)
    np.testing.assert_array_equal(s.beta[1:], [1e-4])


def test_schedule_t2_endpoints():
    s = S.linear_schedule(2)
    np.testing.assert_allclose(s.beta[1:], [1e-4, 0.02], atol=1e-15)


def test_alpha_bar_running_product_oracle():
    # Independent oracle: explicit python-loop running product.
    s = S.linear_schedule(200)
    prod = 1.0
    for t in range(1, 201):
        prod *= 1.0 - s.beta[t]
        assert abs(s.alpha_bar[t] - prod) < 1e-12
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_q_sample_identity_at_t0():
    s = S.linear_schedule(200)
    z0 = Rng(0).normal((2, 3, 4, 4))
    eps = Rng(1).normal(z0.shape)
    np.testing.assert_array_equal(S.q_sample(z0, 0, eps, s), z0)


def test_q_sample_zero_noise():
    s = S.linear_schedule(200)
    z0 = Rng(2).normal((1, 2, 4, 4))
    got = S.q_sample(z0, 137, np.zeros_like(z0), s)
    np.testing.assert_allclose(got, np.sqrt(s.alpha_bar[137]) * z0, atol=1e-15)


@pytest.mark.parametrize("t", [1, 100, 200])
def test_q_sample_monte_carlo_marginals(t):
    # 1e4 draws: sample mean within 4 SE of sqrt(abar)*z0, sample variance
    # within 4 SE of 1 - abar (SE of variance ~ sqrt(2/(n-1)) * sigma^2).
    s = S.linear_schedule(200)
    n = 10_000
    z0_val = 0.7
    z0 = np.full((n,), z0_val)
    eps = Rng(1234 + t).normal((n,))
    z_t = S.q_sample(z0, t, eps, s)
    ab = s.alpha_bar[t]
    true_mean = np.sqrt(ab) * z0_val
    true_var = 1.0 - ab
    se_mean = np.sqrt(true_var / n)
    se_var = true_var * np.sqrt(2.0 / (n - 1))
    assert abs(z_t.mean() - true_mean) < 4 * se_mean
    assert abs(z_t.var() - true_var) < 4 * se_var


def test_q_sample_per_sample_t():
    s = S.linear_schedule(200)
    z0 = Rng(3).normal((3, 2, 4, 4))
    eps = Rng(4).normal(z0.shape)
    t = np.array([0, 50, 200])
    got = S.q_sample(z0, t, eps, s)
    for i, ti in enumerate(t):
        np.testing.assert_array_equal(got[i],
                                      S.q_sample(z0[i:i+1], int(ti), eps[i:i+1], s)[0])


def test_q_sample_rejects_out_of_range():
    s = S.linear_schedule(200)
    z = np.zeros((1, 1, 2, 2))
    with pytest.raises(ContractError):
        S.q_sample(z, 201, z, s)


def test_ddpm_loss_stub_identities():
    s = S.linear_schedule(200)
    z0 = Rng(5).normal((2, 1, 4, 4))
    eps = Rng(6).normal(z0.shape)

    def exact(z_t, z_lr, z_r, t, c):
        return Tensor(eps.astype(T.get_dtype()))

    def off_by_one(z_t, z_lr, z_r, t, c):
        return Tensor((eps + 1.0).astype(T.get_dtype()))

    assert S.ddpm_loss(exact, z0, None, None, 37, None, eps, s).item() == 0.0
    assert S.ddpm_loss(off_by_one, z0, None, None, 37, None, eps, s).item() == (
        pytest.approx(1.0, abs=1e-6))


def test_ddim_inverts_true_noise():
    # Feeding the exact noise used by q_sample with eta=0, t_prev=0
    # recovers z0 to f64 round-off.
    s = S.linear_schedule(200)
    z0 = Rng(7).normal((1, 2, 4, 4))
    eps = Rng(8).normal(z0.shape)
    for t in (1, 100, 200):
        z_t = S.q_sample(z0, t, eps, s)
        back = S.ddim_step(z_t, eps, t, 0, 0.0, s)
        np.testing.assert_allclose(back, z0, atol=1e-10)


def test_ddim_deterministic():
    s = S.linear_schedule(200)
    z_t = Rng(9).normal((1, 1, 4, 4))
    eps = Rng(10).normal(z_t.shape)
    np.testing.assert_array_equal(S.ddim_step(z_t, eps, 120, 80, 0.0, s),
                                  S.ddim_step(z_t, eps, 120, 80, 0.0, s))


def test_ddim_eta1_matches_ddpm_posterior():
    # Symbolic oracle: with eta=1 and adjacent steps, the update must equal
    # the DDPM posterior q(z_{t-1} | z_t, z0_hat):
    #   mean = (sqrt(abar_p) beta_t / (1-abar_t)) z0
    #        + (sqrt(alpha_t)(1-abar_p) / (1-abar_t)) z_t
    #   var  = (1-abar_p)/(1-abar_t) * beta_t
    s = S.linear_schedule(200)
    t, tp = 120, 119
    z_t = Rng(11).normal((1, 1, 4, 4))
    eps_hat = Rng(12).normal(z_t.shape)
    noise = Rng(13).normal(z_t.shape)
    got = S.ddim_step(z_t, eps_hat, t, tp, 1.0, s, noise)

    ab_t, ab_p = s.alpha_bar[t], s.alpha_bar[tp]
    beta_t = s.beta[t]
    alpha_t = s.alpha[t]
    z0_hat = (z_t - np.sqrt(1 - ab_t) * eps_hat) / np.sqrt(ab_t)
    mean = (np.sqrt(ab_p) * beta_t / (1 - ab_t) * z0_hat
            + np.sqrt(alpha_t) * (1 - ab_p) / (1 - ab_t) * z_t)
    sigma = np.sqrt((1 - ab_p) / (1 - ab_t) * beta_t)
    np.testing.assert_allclose(got, mean + sigma * noise, atol=1e-10)


def test_ddim_eta_without_noise_errors():
    s = S.linear_schedule(200)
    z = np.zeros((1, 1, 2, 2))
    with pytest.raises(ContractError):
        S.ddim_step(z, z, 10, 5, 0.5, s)


def test_ddim_step_order_contract():
    s = S.linear_schedule(200)
    z = np.zeros((1, 1, 2, 2))
    with pytest.raises(ContractError):
        S.ddim_step(z, z, 5, 10, 0.0, s)


def test_cfg_identities():
    c = Rng(14).normal((2, 3))
    u = Rng(15).normal((2, 3))
    assert S.cfg_combine(c, u, 1.0) is c  # exact object, bit-identical
    np.testing.assert_array_equal(S.cfg_combine(c, u, 0.0), u)
    assert S.cfg_combine(np.array([1.0]), np.array([0.0]), 2.0)[0] == 2.0


def test_init_noise_standard_normal_when_not_lr_init():
    s = S.linear_schedule(200)
    z = np.zeros((1, 1, 100, 100))
    out = S.init_noise(z, s, seed=5, lr_init=False)
    n = out.size
    assert abs(out.mean()) < 4 / np.sqrt(n)
    assert abs(out.var() - 1.0) < 4 * np.sqrt(2.0 / (n - 1))


def test_init_noise_deterministic_and_lr_shifted():
    s = S.linear_schedule(200)
    z = Rng(16).normal((1, 2, 8, 8))
    a = S.init_noise(z, s, seed=9)
    np.testing.assert_array_equal(a, S.init_noise(z, s, seed=9))
    ab = s.alpha_bar[200]
    eps = S.init_noise(z, s, seed=9, lr_init=False)
    np.testing.assert_allclose(a, np.sqrt(ab) * z + np.sqrt(1 - ab) * eps,
                               atol=1e-12)


def test_ddim_timesteps():
    ts = S.ddim_timesteps(200, 20)
    assert ts[0] == 200 and ts[-1] == 0
    assert all(a > b for a, b in zip(ts, ts[1:]))
    with pytest.raises(ContractError):
        S.ddim_timesteps(200, 0)
