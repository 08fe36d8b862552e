import math

import numpy as np
import pytest

from oracles import brute_ssim
from mvprior.errors import ValidationError
from mvprior.metrics import PSNR_INF, coverage, gaussian_window, psnr, ssim, ssim_map


def test_identical_images():
    a = np.random.default_rng(0).random((16, 16, 3))
    assert psnr(a, a) == PSNR_INF == math.inf
    assert ssim(a, a) == 1.0


def test_constant_offset_is_20_db():
    a = np.random.default_rng(1).uniform(0, 0.9, size=(20, 20, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_uses_only_masked_pixels():
    a = np.zeros((4, 4))
    b = a.copy()
    b[0, 0] = 1.0
    mask = np.ones((4, 4), bool)
    mask[0, 0] = False
    assert psnr(a, b, mask) == PSNR_INF
    assert psnr(a, b) == pytest.approx(10 * math.log10(16))


def test_checkerboard_inversion():
    a = (np.indices((24, 24)).sum(axis=0) % 2).astype(float)
    val = ssim(a, 1 - a)
    assert val < -0.99
    assert val == pytest.approx(brute_ssim(a, 1 - a, np.ones_like(a, bool)), abs=1e-10)


def test_ssim_matches_brute_force_under_mask():
    rng = np.random.default_rng(2)
    a = rng.random((14, 13))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    mask = rng.random(a.shape) > 0.3
    assert ssim(a, b, mask) == pytest.approx(brute_ssim(a, b, mask), abs=1e-10)


def test_ssim_color_is_channel_mean():
    rng = np.random.default_rng(3)
    a, b = rng.random((10, 10, 3)), rng.random((10, 10, 3))
    mask = np.ones((10, 10), bool)
    per = [ssim(a[..., c], b[..., c]) for c in range(3)]
    assert ssim(a, b, mask) == pytest.approx(np.mean(per), abs=1e-15)


def test_ssim_bounds():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a, b = rng.random((12, 12)), rng.random((12, 12))
        m = ssim_map(a, b, np.ones((12, 12), bool))
        assert np.all(m <= 1 + 1e-12) and np.all(m >= -1 - 1e-12)


def test_empty_mask_and_shape_errors():
    a = np.zeros((3, 3))
    with pytest.raises(ValidationError, match="empty"):
        psnr(a, a, np.zeros((3, 3), bool))
    with pytest.raises(ValidationError, match="empty"):
        ssim(a, a, np.zeros((3, 3), bool))
    with pytest.raises(ValidationError):
        psnr(a, np.zeros((3, 4)))
    with pytest.raises(ValidationError):
        ssim(a, a, np.ones((2, 2), bool))


def test_window_and_coverage():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0) and g.argmax() == 5
    assert coverage(np.array([[True, False], [False, False]])) == 0.25
