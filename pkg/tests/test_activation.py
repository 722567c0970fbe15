"""Reference-image generators: shape/range contracts, determinism,
zero-init equivalences and the trained-before-use precondition."""

import numpy as np
import pytest

from cassr.activation import RefGenerator, activate, bicubic_upsample
from cassr.codec import CodecConfig, CodecModel
from cassr.rng import Rng
from cassr.schedule import linear_schedule
from cassr.tensor import ContractError
from cassr.unet import CasSRModel, ModelConfig


def _lr(n=1, c=3, s=8, seed=0):
    return Rng(seed).uniform((n, c, s, s)) * 2 - 1


def test_identity_upsample_constant():
    gen = RefGenerator("identity_upsample", scale=4)
    lr = np.full((1, 3, 8, 8), 0.25)
    out = activate(gen, lr)
    assert out.shape == (1, 3, 32, 32)
    np.testing.assert_allclose(out, 0.25, atol=1e-12)


def test_cnn_restorer_zero_init_equals_bicubic():
    gen = RefGenerator("cnn_restorer", scale=4, seed=1)
    gen.trained = True  # zero residual head: output is exactly the upsample
    lr = _lr(seed=2)
    np.testing.assert_allclose(activate(gen, lr), bicubic_upsample(lr, 4),
                               atol=1e-6)


def test_cnn_restorer_untrained_errors():
    gen = RefGenerator("cnn_restorer", scale=4)
    with pytest.raises(ContractError, match="before training"):
        activate(gen, _lr())


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown generator kind"):
        RefGenerator("upscaler_3000")


def test_mini_diffusion_requires_components():
    with pytest.raises(ContractError):
        RefGenerator("mini_diffusion_restorer")


def test_mini_diffusion_shape_and_determinism():
    cfg = ModelConfig(c_lat=4, widths=(8, 16), sin_dim=8, t_dim=16, t_max=40)
    model = CasSRModel(cfg, seed=3)
    codec = CodecModel(CodecConfig(widths=(8, 16)), seed=3)
    sched = linear_schedule(40)
    gen = RefGenerator("mini_diffusion_restorer", scale=4, base_model=model,
                       codec=codec, sched=sched, diffusion_steps=4)
    lr = _lr(s=8, seed=4)
    a = activate(gen, lr, seed=7)
    b = activate(gen, lr, seed=7)
    assert a.shape == (1, 3, 32, 32)
    assert a.min() >= -1.0 and a.max() <= 1.0
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, activate(gen, lr, seed=8))


def test_all_kinds_share_output_contract():
    # Swapping kinds must not change the output interface.
    cfg = ModelConfig(c_lat=4, widths=(8, 16), sin_dim=8, t_dim=16, t_max=40)
    model = CasSRModel(cfg, seed=5)
    codec = CodecModel(CodecConfig(widths=(8, 16)), seed=5)
    sched = linear_schedule(40)
    lr = _lr(s=8, seed=6)
    for kind in ("identity_upsample", "cnn_restorer", "mini_diffusion_restorer"):
        gen = RefGenerator(kind, scale=4, seed=5, base_model=model,
                           codec=codec, sched=sched, diffusion_steps=4)
        gen.trained = True
        out = activate(gen, lr, seed=1)
        assert out.shape == (1, 3, 32, 32)
        assert out.min() >= -1.0 and out.max() <= 1.0
