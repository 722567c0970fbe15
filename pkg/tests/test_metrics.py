"""PSNR/SSIM closed forms and metric-report self-consistency."""

import math

import numpy as np
import pytest

from cassr.metrics import MetricReport, psnr, ssim
from cassr.rng import Rng


def test_psnr_identical_is_inf():
    img = Rng(0).uniform((16, 16, 3))
    assert psnr(img, img) == math.inf


def test_psnr_zero_vs_one_is_zero_db():
    assert psnr(np.zeros((8, 8, 3)), np.ones((8, 8, 3))) == pytest.approx(0.0)


def test_psnr_closed_form_20db():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)  # MSE = 0.01
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_symmetry_and_shape_error():
    a, b = Rng(1).uniform((8, 8, 3)), Rng(2).uniform((8, 8, 3))
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, b[:4])


def test_ssim_identical_is_one():
    img = Rng(3).uniform((32, 32, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_ssim_negative_for_inverted_image():
    # Mid-gray-centered data against its negative: structure term flips sign.
    x = 0.5 + 0.3 * np.sin(np.linspace(0, 8 * np.pi, 32 * 32)).reshape(32, 32)
    assert ssim(x, 1.0 - x) < 0.0


def test_ssim_constant_offset_luminance_closed_form():
    # Constant images: contrast/structure terms degenerate to 1, leaving
    # the luminance term (2 mx my + C1) / (mx^2 + my^2 + C1).
    c = 0.25
    a = np.full((16, 16), c)
    b = np.full((16, 16), c + 0.5)
    c1 = 0.01 ** 2
    expect = (2 * c * (c + 0.5) + c1) / (c * c + (c + 0.5) ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expect, abs=1e-9)


def test_ssim_window_error():
    small = np.zeros((8, 8))
    with pytest.raises(ValueError, match="window"):
        ssim(small, small)


def test_report_aggregates_and_csv():
    rep = MetricReport(variant="x")
    rep.add(0, 20.0, 0.5)
    rep.add(1, 30.0, 0.7)
    rep.add(2, math.inf, 1.0)
    assert rep.mean_psnr == pytest.approx(25.0)  # inf excluded from mean
    assert rep.mean_ssim == pytest.approx((0.5 + 0.7 + 1.0) / 3)
    assert rep.consistent()
    csv = rep.to_csv()
    assert "inf" in csv.splitlines()[3]
    assert csv.splitlines()[0] == "index,psnr,ssim"
