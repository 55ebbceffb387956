"""Local prior: per-window 1-D intensity-to-lifetime regression.

Around every LR sample a small window of neighbouring samples is collected
and a one-dimensional function from intensity to lifetime is fitted.  Each
fitted function is then evaluated at the intensities of the HR pixels in the
block that the sample anchors, producing a dense lifetime prior.  Evaluation
never extrapolates: query intensities are clamped to the fitted support, so
predictions beyond the sampled range hold the endpoint values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, splev, splrep

from .core import Plane, SamplingMap
from .metrics import mae, psnr

FUNCTIONS = (
    "nearest",
    "linear",
    "cubic",
    "spline_linear",
    "spline_quadratic",
    "spline_cubic",
    "rbf_gp",
)

_SPLINE_DEGREE = {"spline_linear": 1, "spline_quadratic": 2, "spline_cubic": 3}


@dataclass(frozen=True)
class LocalPriorConfig:
    """Window size, fit family and optional output clamp for the local prior."""

    window: int = 5
    function: str = "linear"
    clamp_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2 samples per side")
        if self.function not in FUNCTIONS:
            raise ValueError(f"unknown function {self.function!r}; expected one of {FUNCTIONS}")
        if self.clamp_range is not None:
            lo, hi = self.clamp_range
            if not (lo <= hi):
                raise ValueError("clamp_range must be (low, high) with low <= high")


@dataclass
class WindowFunction:
    """A fitted 1-D intensity -> lifetime map with clamped evaluation.

    ``degenerate`` marks windows that could not support a fit (fewer than two
    valid pairs, or a single distinct intensity); such functions evaluate to
    the constant ``fallback`` everywhere.
    """

    kind: str
    support: tuple[float, float]
    degenerate: bool = False
    fallback: float = np.nan
    _eval: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __call__(self, intensity) -> np.ndarray:
        q = np.asarray(intensity, dtype=np.float64)
        if self.degenerate:
            return np.full(q.shape, self.fallback)
        lo, hi = self.support
        return np.asarray(self._eval(np.clip(q, lo, hi)), dtype=np.float64)


def _dedup(x: np.ndarray, y: np.ndarray):
    """Average lifetimes that share an exact intensity; returns sorted knots."""
    ux, inverse = np.unique(x, return_inverse=True)
    sums = np.bincount(inverse, weights=y, minlength=ux.size)
    counts = np.bincount(inverse, minlength=ux.size)
    means = sums / counts
    # Duplicates that agree exactly must average to themselves bitwise;
    # sum/k drops an ulp whenever k*y rounds.
    lo = np.full(ux.size, np.inf)
    hi = np.full(ux.size, -np.inf)
    np.minimum.at(lo, inverse, y)
    np.maximum.at(hi, inverse, y)
    return ux, np.where(lo == hi, lo, means)


def _gp_eval(x: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    # Gaussian-process regression with an RBF kernel; length scale is half the
    # sampled intensity range and the noise floor scales with label variance.
    ell = (x[-1] - x[0]) / 2.0
    noise = 1e-4 * float(np.var(y)) + 1e-12
    ymean = float(y.mean())
    diff = x[:, None] - x[None, :]
    k_train = np.exp(-(diff**2) / (2.0 * ell**2))
    alpha = np.linalg.solve(k_train + noise * np.eye(x.size), y - ymean)

    def evaluate(q: np.ndarray) -> np.ndarray:
        cross = np.exp(-((q[..., None] - x) ** 2) / (2.0 * ell**2))
        return ymean + cross @ alpha

    return evaluate


def _spline_eval(x, y, degree):
    k = min(degree, x.size - 1)
    # Smoothing-spline regression; the misfit budget scales with label
    # variance so the fit is unit-independent.  Degenerate solves fall back
    # to the interpolating spline of the same degree.
    s = x.size * float(np.var(y)) * 0.01
    try:
        tck = splrep(x, y, k=k, s=s)
    except Exception:
        tck = splrep(x, y, k=k, s=0.0)
    return lambda q: splev(q, tck)


def _nearest_eval(x, y):
    mids = (x[:-1] + x[1:]) / 2.0

    def evaluate(q):
        return y[np.searchsorted(mids, q)]

    return evaluate


def fit_window(samples, function: str = "linear") -> WindowFunction:
    """Fit one window's (intensity, lifetime) pairs.

    ``samples`` is a sequence of pairs or an (N, 2) array.  NaN lifetimes are
    dropped; duplicate intensities are averaged before fitting.  Windows with
    fewer than two valid pairs, or a single distinct intensity, come back
    degenerate with the mean valid lifetime as constant fallback.
    """
    if function not in FUNCTIONS:
        raise ValueError(f"unknown function {function!r}; expected one of {FUNCTIONS}")
    arr = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples,
                     dtype=np.float64)
    if arr.size == 0:
        return WindowFunction(kind=function, support=(np.nan, np.nan), degenerate=True)
    arr = arr.reshape(-1, 2)
    valid = ~np.isnan(arr[:, 1])
    x, y = arr[valid, 0], arr[valid, 1]
    fallback = float(y.mean()) if y.size else np.nan
    if x.size < 2:
        return WindowFunction(kind=function, support=(np.nan, np.nan),
                              degenerate=True, fallback=fallback)
    x, y = _dedup(x, y)
    if x.size < 2:
        return WindowFunction(kind=function, support=(np.nan, np.nan),
                              degenerate=True, fallback=float(y.mean()))

    if function == "nearest":
        evaluate = _nearest_eval(x, y)
    elif function == "linear":
        evaluate = lambda q: np.interp(q, x, y)  # noqa: E731
    elif function == "cubic":
        evaluate = CubicSpline(x, y)
    elif function in _SPLINE_DEGREE:
        evaluate = _spline_eval(x, y, _SPLINE_DEGREE[function])
    else:
        evaluate = _gp_eval(x, y)
    return WindowFunction(kind=function, support=(float(x[0]), float(x[-1])), _eval=evaluate)


def _block_edges(n_samples: int, factor: int, offset: int, hr_len: int) -> np.ndarray:
    """HR boundaries of per-sample blocks; outer blocks absorb the margins."""
    edges = np.empty(n_samples + 1, dtype=np.intp)
    edges[0] = 0
    edges[-1] = hr_len
    for i in range(1, n_samples):
        edges[i] = offset + factor * i
    return edges


def generate_local_prior(lr_tau: Plane, hr_intensity: Plane,
                         smap: SamplingMap, cfg: LocalPriorConfig = LocalPriorConfig()) -> Plane:
    """Build the dense local prior for an LR lifetime / HR intensity pair.

    Every HR pixel receives exactly one prediction, from the window fit of
    the LR sample whose block contains it.
    """
    if lr_tau.shape != smap.lr_shape:
        raise ValueError(f"lr_tau shape {lr_tau.shape} does not match lr_shape {smap.lr_shape}")
    if hr_intensity.shape != smap.hr_shape:
        raise ValueError(
            f"hr_intensity shape {hr_intensity.shape} does not match hr_shape {smap.hr_shape}")

    tau = lr_tau.values
    if np.all(np.isnan(tau)):
        raise ValueError("no usable lifetime samples (all LR entries unsampled)")
    global_mean = float(np.nanmean(tau))

    intens = hr_intensity.values
    sample_i = intens[np.ix_(smap.sample_rows(), smap.sample_cols())]
    m, n = smap.lr_shape
    (fr, fc), (orow, ocol) = smap.factor, smap.offset
    half_lo, half_hi = (cfg.window - 1) // 2, cfg.window // 2
    row_edges = _block_edges(m, fr, orow, smap.hr_shape[0])
    col_edges = _block_edges(n, fc, ocol, smap.hr_shape[1])

    out = np.empty(smap.hr_shape, dtype=np.float64)
    for i in range(m):
        r0, r1 = max(0, i - half_lo), min(m, i + half_hi + 1)
        for j in range(n):
            c0, c1 = max(0, j - half_lo), min(n, j + half_hi + 1)
            pairs = np.column_stack((sample_i[r0:r1, c0:c1].ravel(),
                                     tau[r0:r1, c0:c1].ravel()))
            fn = fit_window(pairs, cfg.function)
            if fn.degenerate and np.isnan(fn.fallback):
                fn.fallback = global_mean
            block = intens[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]]
            out[row_edges[i]:row_edges[i + 1], col_edges[j]:col_edges[j + 1]] = fn(block)

    if cfg.clamp_range is not None:
        np.clip(out, cfg.clamp_range[0], cfg.clamp_range[1], out=out)
    np.maximum(out, 0.0, out=out)
    return Plane(values=out, role="prior", units=lr_tau.units)


@dataclass(frozen=True)
class SweepEntry:
    window: int
    function: str
    mae: float
    psnr: float


def sweep_local_configs(lr_tau: Plane, hr_intensity: Plane, gt_tau: Plane,
                        smap: SamplingMap,
                        window_sizes: Sequence[int],
                        functions: Sequence[str]) -> list[SweepEntry]:
    """Grid-search window sizes and fit families against a ground truth.

    Returns one entry per (window, function) combination, sorted by MAE
    ascending.  An empty grid yields an empty list.
    """
    entries = []
    for w in window_sizes:
        for fn in functions:
            prior = generate_local_prior(lr_tau, hr_intensity, smap,
                                         LocalPriorConfig(window=int(w), function=fn))
            entries.append(SweepEntry(
                window=int(w), function=fn,
                mae=mae(gt_tau, prior),
                psnr=psnr(gt_tau, prior),
            ))
    entries.sort(key=lambda e: e.mae)
    return entries
