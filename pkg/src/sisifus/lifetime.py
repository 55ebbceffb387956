"""Per-pixel lifetime estimation from time-resolved photon histograms.

Two estimators are provided.  ``log_linear_tail`` fits a weighted straight
line to the log of the background-subtracted decay tail; ``center_of_mass``
computes the first moment of the tail relative to the peak.  Both operate on
the same tail window: bins from ``peak + tail_start`` through the last bin
whose raw count exceeds the background level.  Pixels that cannot be fitted
(too few photons, empty tail, non-decaying tail) come back as NaN, the
package-wide "unsampled" marker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Datacube, Plane

METHODS = ("log_linear_tail", "center_of_mass")

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class FitConfig:
    """Lifetime-fit settings.

    Attributes:
        method: ``log_linear_tail`` or ``center_of_mass``.
        tail_start: first tail bin, counted from the peak bin.  Zero includes
            the peak itself, which is exact for noiseless single exponentials.
        min_counts: pixels with fewer total photons are left unsampled.
        background: constant per-bin background.  None estimates it per pixel
            as the mean of the pre-peak bins (zero when the peak is bin 0).
    """

    method: str = "log_linear_tail"
    tail_start: int = 0
    min_counts: int = 50
    background: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown fit method {self.method!r}; expected one of {METHODS}")
        if self.tail_start < 0:
            raise ValueError("tail_start must be >= 0")
        if self.min_counts < 1:
            raise ValueError("min_counts must be >= 1")
        if self.background is not None and self.background < 0:
            raise ValueError("background must be >= 0")


def _tail_window(counts: np.ndarray, peak: int, tail_start: int, background: float):
    start = peak + tail_start
    if start >= counts.size:
        return None
    above = np.nonzero(counts > background)[0]
    if above.size == 0 or above[-1] < start:
        return None
    return start, int(above[-1])


def _fit_pixel(counts: np.ndarray, peak: int, cfg: FitConfig, bin_width: float) -> float:
    if cfg.background is None:
        background = float(counts[:peak].mean()) if peak > 0 else 0.0
    else:
        background = float(cfg.background)

    window = _tail_window(counts, peak, cfg.tail_start, background)
    if window is None:
        return np.nan
    start, stop = window
    tail = counts[start : stop + 1] - background
    t = np.arange(start, stop + 1, dtype=np.float64)

    if cfg.method == "log_linear_tail":
        if tail.size < 2:
            return np.nan
        y = np.log(np.maximum(tail, _LOG_FLOOR))
        w = counts[start : stop + 1]
        wsum = w.sum()
        if wsum <= 0:
            return np.nan
        tbar = (w * t).sum() / wsum
        ybar = (w * y).sum() / wsum
        denom = (w * (t - tbar) ** 2).sum()
        if denom <= 0:
            return np.nan
        slope = (w * (t - tbar) * (y - ybar)).sum() / denom
        if slope >= 0:
            return np.nan
        return -bin_width / slope

    # center_of_mass
    tail = np.maximum(tail, 0.0)
    total = tail.sum()
    if total <= 0:
        return np.nan
    return float(((t - peak) * tail).sum() / total) * bin_width


def fit_lifetime(cube: Datacube, cfg: FitConfig = FitConfig()) -> Plane:
    """Fit a lifetime at every pixel of a datacube.

    Returns a lifetime plane in the time unit of ``cube.bin_width``, with NaN
    at pixels that could not be fitted.
    """
    counts = cube.counts
    rows, cols, _ = counts.shape
    totals = counts.sum(axis=2)
    if cube.t0_bin is not None:
        peaks = np.full((rows, cols), int(cube.t0_bin))
    else:
        peaks = counts.argmax(axis=2)

    out = np.full((rows, cols), np.nan)
    fit_mask = totals >= cfg.min_counts
    for r, c in zip(*np.nonzero(fit_mask)):
        tau = _fit_pixel(counts[r, c], int(peaks[r, c]), cfg, cube.bin_width)
        if np.isfinite(tau) and tau >= 0:
            out[r, c] = tau
    return Plane(values=out, role="lifetime", units="ns")
