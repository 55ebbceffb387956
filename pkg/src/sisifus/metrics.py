"""Image quality metrics: PSNR, windowed SSIM, masked MAE.

Conventions: the first argument is the ground truth.  PSNR's peak defaults
to the largest ground-truth magnitude, and SSIM's dynamic range defaults to
the ground-truth range; supply ``peak`` / ``data_range`` explicitly when a
symmetric comparison is needed.  Perceptual (learned) metrics are out of
scope and reported as "not computed" wherever a metrics table is emitted.
"""

from __future__ import annotations

import math

import numpy as np

from .core import Plane


def _values(x) -> np.ndarray:
    arr = x.values if isinstance(x, Plane) else np.asarray(x, dtype=np.float64)
    return np.asarray(arr, dtype=np.float64)


def _pair(a, b):
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise ValueError(f"shape mismatch: {av.shape} vs {bv.shape}")
    return av, bv


def psnr(gt, test, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    av, bv = _pair(gt, test)
    if peak is None:
        peak = float(np.abs(av).max())
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((av - bv) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _window_sums(x: np.ndarray, w: int) -> np.ndarray:
    """Sums over every w-by-w window (valid positions only), via integral image."""
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=c[1:, 1:])
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim(gt, test, window: int = 25, data_range: float | None = None) -> float:
    """Mean structural similarity over uniform windows at stride 1.

    Windows that would overhang the border are dropped, so both images must
    be at least ``window`` pixels on each side.  Statistics are population
    moments (divide by the window pixel count).
    """
    av, bv = _pair(gt, test)
    if window < 2:
        raise ValueError("window must be >= 2")
    if min(av.shape) < window:
        raise ValueError(f"image {av.shape} smaller than the {window}-pixel SSIM window")
    if data_range is None:
        data_range = float(av.max() - av.min())
    if data_range <= 0:
        data_range = 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    n = float(window * window)
    mu_a = _window_sums(av, window) / n
    mu_b = _window_sums(bv, window) / n
    var_a = _window_sums(av * av, window) / n - mu_a**2
    var_b = _window_sums(bv * bv, window) / n - mu_b**2
    cov = _window_sums(av * bv, window) / n - mu_a * mu_b
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(score.mean())


def mae(gt, test, mask=None) -> float:
    """Mean absolute error, optionally restricted to a boolean mask."""
    av, bv = _pair(gt, test)
    err = np.abs(av - bv)
    if mask is None:
        return float(err.mean())
    mv = _values(mask).astype(bool)
    if mv.shape != av.shape:
        raise ValueError(f"mask shape {mv.shape} does not match {av.shape}")
    if not mv.any():
        raise ValueError("mask selects no pixels")
    return float(err[mv].mean())
