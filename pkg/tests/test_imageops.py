"""Resampling and filtering: cubic kernel values, partition of unity,
constant preservation, reflect-padded filtering."""

import numpy as np
import pytest

from cassr.imageops import (cubic_kernel, filter2d_reflect, from_model,
                            gaussian_kernel, resize, to_model)
from cassr.rng import Rng


def test_cubic_kernel_catmull_rom_values():
    # a = -0.5: k(0)=1, k(1)=k(2)=0, interior value k(0.5)=0.5625
    x = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    k = cubic_kernel(x)
    assert k[0] == pytest.approx(1.0)
    assert k[2] == pytest.approx(0.0, abs=1e-15)
    assert k[4] == pytest.approx(0.0, abs=1e-15)
    assert k[5] == 0.0
    assert k[1] == pytest.approx(0.5625)


def test_resize_preserves_constant():
    img = np.full((16, 16, 3), 0.37)
    for kern in ("nearest", "bilinear", "bicubic"):
        for hw in ((8, 8), (32, 32), (11, 23)):
            out = resize(img, *hw, kern)
            np.testing.assert_allclose(out, 0.37, atol=1e-12)
            assert out.shape == (*hw, 3)


def test_resize_identity_at_same_size():
    img = Rng(1).uniform((12, 12, 3))
    np.testing.assert_allclose(resize(img, 12, 12, "nearest"), img, atol=0)
    np.testing.assert_allclose(resize(img, 12, 12, "bicubic"), img, atol=1e-12)


def test_resize_nearest_oracle_2x():
    img = np.arange(4.0).reshape(2, 2, 1)
    out = resize(img, 4, 4, "nearest")
    np.testing.assert_array_equal(out[:2, :2, 0], np.full((2, 2), 0.0))
    np.testing.assert_array_equal(out[2:, 2:, 0], np.full((2, 2), 3.0))


def test_bilinear_midpoint_oracle():
    # 1x2 image upsampled 2x: interior samples interpolate linearly
    img = np.array([[[0.0], [1.0]]])
    out = resize(img, 1, 4, "bilinear")[0, :, 0]
    # half-pixel convention: output centers at x=0.25,0.75,1.25,1.75 of input
    np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0], atol=1e-12)


def test_downscale_antialias_averages():
    # checkerboard downscaled 4x with AA support must land near the mean
    y, x = np.mgrid[0:32, 0:32]
    img = ((x + y) % 2).astype(float)[..., None]
    out = resize(img, 8, 8, "bicubic")
    assert abs(out.mean() - 0.5) < 0.02
    assert out.std() < 0.15


def test_filter2d_reflect_identity_and_constant():
    img = Rng(2).uniform((10, 10, 3))
    ident = np.zeros((3, 3))
    ident[1, 1] = 1.0
    np.testing.assert_allclose(filter2d_reflect(img, ident), img, atol=1e-15)
    blur = gaussian_kernel(5, 1.0)
    const = np.full((10, 10, 3), 0.6)
    np.testing.assert_allclose(filter2d_reflect(const, blur), 0.6, atol=1e-12)


def test_model_space_round_trip():
    img = Rng(3).uniform((8, 8, 3))
    x = to_model(img)
    assert x.shape == (1, 3, 8, 8)
    assert x.min() >= -1.0 and x.max() <= 1.0
    np.testing.assert_allclose(from_model(x), img, atol=1e-12)
