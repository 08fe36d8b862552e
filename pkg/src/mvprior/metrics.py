"""Masked image quality metrics for unit-range float images."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from mvprior.errors import ValidationError

PSNR_INF = math.inf
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check(a, b, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ValidationError("mask shape does not match the images")
    if not mask.any():
        raise ValidationError("mask is empty")
    return a, b, mask


def psnr(a, b, mask=None, peak: float = 1.0) -> float:
    """PSNR in dB over masked pixels; identical inputs give ``PSNR_INF``."""
    a, b, mask = _check(a, b, mask)
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _wfilter(x, g):
    y = correlate1d(x, g, axis=0, mode="constant", cval=0.0)
    return correlate1d(y, g, axis=1, mode="constant", cval=0.0)


def ssim_map(a, b, mask, data_range: float = 1.0):
    """Per-pixel SSIM of 2-D images using mask-weighted Gaussian windows.

    Local statistics only see masked pixels: window weights are multiplied
    by the mask and renormalized.
    """
    g = gaussian_window()
    m = mask.astype(np.float64)
    norm = _wfilter(m, g)
    with np.errstate(invalid="ignore", divide="ignore"):

        def mean(x):
            return _wfilter(x * m, g) / norm

        mu_a, mu_b = mean(a), mean(b)
        var_a = mean(a * a) - mu_a**2
        var_b = mean(b * b) - mu_b**2
        cov = mean(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, mask=None, data_range: float = 1.0) -> float:
    """Mean masked SSIM; color images average their channels."""
    a, b, mask = _check(a, b, mask)
    if np.array_equal(a[mask], b[mask]):
        return 1.0
    if a.ndim == 2:
        return float(ssim_map(a, b, mask, data_range)[mask].mean())
    return float(np.mean([ssim_map(a[..., c], b[..., c], mask, data_range)[mask].mean() for c in range(a.shape[-1])]))


def coverage(mask) -> float:
    return float(np.asarray(mask, dtype=bool).mean())
