"""Shared data model: time-resolved datacubes, 2-D planes, sampling geometry.

All arithmetic inside the package is done in 64-bit floats; file storage is
32-bit (see :mod:`sisifus.fileio`).  NaN is reserved as the explicit
"unsampled" marker and is only legal in lifetime planes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

PLANE_ROLES = ("intensity", "lifetime", "prior", "weight")


def _as_readonly_f64(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("array must be non-empty")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Plane:
    """A single 2-D image with a semantic role.

    Attributes:
        values: 2-D float64 array, immutable after construction.
        role: one of ``intensity``, ``lifetime``, ``prior`` or ``weight``.
        units: free-text physical units ("ns", "photon counts", ...).

    Role-specific invariants are enforced on construction:
      * lifetime: finite values must be >= 0; NaN marks unsampled pixels.
      * prior: all values finite and >= 0 (no NaN).
      * weight: all values finite and within [0, 1].
      * intensity: all values finite.
    """

    values: np.ndarray
    role: str
    units: str = ""

    def __post_init__(self):
        if self.role not in PLANE_ROLES:
            raise ValueError(f"unknown plane role {self.role!r}; expected one of {PLANE_ROLES}")
        arr = _as_readonly_f64(self.values, 2)
        nan = np.isnan(arr)
        if self.role == "lifetime":
            finite = arr[~nan]
            if not np.all(np.isfinite(finite)):
                raise ValueError("lifetime plane contains non-finite values other than NaN")
            if finite.size and finite.min() < 0:
                raise ValueError("lifetime plane contains negative values")
        elif self.role == "prior":
            if nan.any() or not np.all(np.isfinite(arr)):
                raise ValueError("prior plane must be finite everywhere (no NaN)")
            if arr.min() < 0:
                raise ValueError("prior plane contains negative values")
        elif self.role == "weight":
            if nan.any() or not np.all(np.isfinite(arr)):
                raise ValueError("weight plane must be finite everywhere")
            if arr.min() < 0 or arr.max() > 1:
                raise ValueError("weight plane values must lie in [0, 1]")
        else:  # intensity
            if not np.all(np.isfinite(arr)):
                raise ValueError("intensity plane must be finite everywhere")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def has_unsampled(self) -> bool:
        """True when the plane carries NaN "unsampled" markers."""
        return bool(np.isnan(self.values).any())


@dataclass(frozen=True)
class Datacube:
    """Time-resolved photon histogram stack.

    Attributes:
        counts: (rows, cols, bins) array of per-bin photon counts.  Measured
            data is integer-valued; synthetic noiseless cubes may carry
            fractional expected counts.  All entries must be finite and >= 0.
        bin_width: duration of one time bin.  The package is unit-agnostic:
            lifetimes produced from a cube inherit whatever time unit
            ``bin_width`` is expressed in (nanoseconds by convention).
        t0_bin: index of the excitation peak, when known.  Optional; fitting
            falls back to a per-pixel argmax when unset.
    """

    counts: np.ndarray
    bin_width: float
    t0_bin: int | None = None

    def __post_init__(self):
        arr = _as_readonly_f64(self.counts, 3)
        if not np.all(np.isfinite(arr)):
            raise ValueError("datacube counts must be finite")
        if arr.min() < 0:
            raise ValueError("datacube counts must be non-negative")
        if not (self.bin_width > 0):
            raise ValueError("bin_width must be positive")
        if self.t0_bin is not None and not (0 <= int(self.t0_bin) < arr.shape[2]):
            raise ValueError("t0_bin outside the time axis")
        object.__setattr__(self, "counts", arr)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.counts.shape


@dataclass(frozen=True)
class SamplingMap:
    """Geometry linking a low-resolution grid to high-resolution pixels.

    Sample (i, j) of the LR grid sits at HR pixel
    ``(offset[0] + factor[0] * i, offset[1] + factor[1] * j)``.
    Corner-aligned sampling (offset (0, 0)) is the package default.

    Attributes:
        factor: per-axis undersampling factor (rows, cols), each >= 1.
        offset: HR pixel of LR sample (0, 0).
        lr_shape: LR grid shape (rows, cols).
        hr_shape: HR image shape (rows, cols).
    """

    factor: Tuple[int, int]
    offset: Tuple[int, int]
    lr_shape: Tuple[int, int]
    hr_shape: Tuple[int, int]

    def __post_init__(self):
        factor = tuple(int(f) for f in np.atleast_1d(self.factor)) if not isinstance(self.factor, tuple) else tuple(int(f) for f in self.factor)
        if len(factor) == 1:
            factor = (factor[0], factor[0])
        offset = tuple(int(o) for o in self.offset)
        lr_shape = tuple(int(s) for s in self.lr_shape)
        hr_shape = tuple(int(s) for s in self.hr_shape)
        if len(factor) != 2 or len(offset) != 2 or len(lr_shape) != 2 or len(hr_shape) != 2:
            raise ValueError("factor, offset, lr_shape, hr_shape must all be 2-tuples")
        for axis in range(2):
            if factor[axis] < 1:
                raise ValueError("sampling factor must be >= 1")
            if offset[axis] < 0:
                raise ValueError("sampling offset must be >= 0")
            if lr_shape[axis] < 1 or hr_shape[axis] < 1:
                raise ValueError("shapes must be positive")
            last = offset[axis] + factor[axis] * (lr_shape[axis] - 1)
            if last >= hr_shape[axis]:
                raise ValueError(
                    f"axis {axis}: last sample at HR index {last} falls outside hr_shape {hr_shape}"
                )
        object.__setattr__(self, "factor", factor)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "lr_shape", lr_shape)
        object.__setattr__(self, "hr_shape", hr_shape)

    @classmethod
    def from_factor(cls, hr_shape, factor, offset=(0, 0)) -> "SamplingMap":
        """Build the densest LR grid that fits ``hr_shape`` at ``factor``."""
        if np.isscalar(factor):
            factor = (int(factor), int(factor))
        factor = tuple(int(f) for f in factor)
        offset = tuple(int(o) for o in offset)
        hr_shape = tuple(int(s) for s in hr_shape)
        lr_shape = []
        for axis in range(2):
            if factor[axis] < 1:
                raise ValueError("sampling factor must be >= 1")
            if offset[axis] >= hr_shape[axis]:
                raise ValueError("offset outside the HR image")
            lr_shape.append((hr_shape[axis] - 1 - offset[axis]) // factor[axis] + 1)
        return cls(factor=factor, offset=offset, lr_shape=tuple(lr_shape), hr_shape=hr_shape)

    def sample_rows(self) -> np.ndarray:
        return self.offset[0] + self.factor[0] * np.arange(self.lr_shape[0])

    def sample_cols(self) -> np.ndarray:
        return self.offset[1] + self.factor[1] * np.arange(self.lr_shape[1])


def integrate_time(cube: Datacube) -> Plane:
    """Collapse the time axis of a datacube into a total-intensity plane."""
    values = cube.counts.sum(axis=2)
    return Plane(values=values, role="intensity", units="photon counts")
