"""Decimation forward model and its companions.

The forward operator is pure point sampling: LR pixel (i, j) copies the HR
pixel at the mapped position, no pre-filtering.  Its adjoint scatters LR
values back onto the sample positions, so decimate(decimate_adjoint(x)) == x
exactly.  Bilinear upsampling is the interpolation baseline and the solver
initializer; it inverts decimation at the sample positions.
"""

from __future__ import annotations

import numpy as np

from .core import Plane, SamplingMap


def _check_hr(plane: Plane, smap: SamplingMap) -> None:
    if plane.shape != smap.hr_shape:
        raise ValueError(f"plane shape {plane.shape} does not match hr_shape {smap.hr_shape}")


def _check_lr(plane: Plane, smap: SamplingMap) -> None:
    if plane.shape != smap.lr_shape:
        raise ValueError(f"plane shape {plane.shape} does not match lr_shape {smap.lr_shape}")


def decimate(hr: Plane, smap: SamplingMap) -> Plane:
    """Point-sample an HR plane down to the LR grid."""
    _check_hr(hr, smap)
    (fr, fc), (orow, ocol) = smap.factor, smap.offset
    m, n = smap.lr_shape
    values = hr.values[orow : orow + fr * (m - 1) + 1 : fr,
                       ocol : ocol + fc * (n - 1) + 1 : fc]
    return Plane(values=values, role=hr.role, units=hr.units)


def decimate_adjoint(lr: Plane, smap: SamplingMap) -> Plane:
    """Adjoint of :func:`decimate`: scatter LR values onto an HR canvas of zeros."""
    _check_lr(lr, smap)
    out = np.zeros(smap.hr_shape, dtype=np.float64)
    out[np.ix_(smap.sample_rows(), smap.sample_cols())] = lr.values
    return Plane(values=out, role=lr.role, units=lr.units)


def _axis_weights(length: int, n_samples: int, factor: int, offset: int):
    """Per-axis interpolation: left knot index and fractional weight."""
    pos = (np.arange(length, dtype=np.float64) - offset) / factor
    pos = np.clip(pos, 0.0, n_samples - 1.0)
    if n_samples == 1:
        return np.zeros(length, dtype=np.intp), np.zeros(length)
    left = np.minimum(np.floor(pos).astype(np.intp), n_samples - 2)
    return left, pos - left


def bilinear_upsample(lr: Plane, smap: SamplingMap) -> Plane:
    """Bilinearly interpolate an LR plane onto the HR grid.

    Exact at sample positions; beyond the outermost samples the edge value is
    extended, so the output never extrapolates.  Unsampled (NaN) input is
    rejected: fill or mask before upsampling.
    """
    _check_lr(lr, smap)
    if np.isnan(lr.values).any():
        raise ValueError("cannot upsample a plane with unsampled (NaN) entries")
    (fr, fc), (orow, ocol) = smap.factor, smap.offset
    m, n = smap.lr_shape
    mrow, ncol = smap.hr_shape
    i0, wa = _axis_weights(mrow, m, fr, orow)
    j0, wb = _axis_weights(ncol, n, fc, ocol)

    v = lr.values
    i1 = np.minimum(i0 + 1, m - 1)
    j1 = np.minimum(j0 + 1, n - 1)
    rows = v[i0, :] * (1.0 - wa)[:, None] + v[i1, :] * wa[:, None]
    out = rows[:, j0] * (1.0 - wb)[None, :] + rows[:, j1] * wb[None, :]
    return Plane(values=out, role=lr.role, units=lr.units)
