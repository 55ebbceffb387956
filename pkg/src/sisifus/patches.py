"""Patch extraction and augmentation for the global prior.

Every in-bounds HR pixel (at least ``edge_margin`` pixels from each border)
contributes one two-channel intensity patch centred on it.  Channel 0 is the
patch normalized to [0, 1] by its own min/max (flat patches become 0.5
everywhere); channel 1 is the raw patch divided by the global intensity
maximum.  Patches centred on valid LR sample positions carry their lifetime
as a label; all other patches are unlabeled prediction queries.

Training sets are grown two ways: the 8-fold dihedral group (rotations and
mirrors), and optionally the 8 nearest spatial neighbours of each labeled
centre, which inherit the centre's label.  Neighbour windows that would poke
past the border are completed by edge replication so the augmented count is
exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Plane, SamplingMap

SOURCE_SAMPLED = 0
SOURCE_NEIGHBOR = 1

_NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class GlobalPriorConfig:
    """Patch geometry, network shape and training settings for the global prior.

    ``neighbor_augment=None`` resolves automatically: on for undersampling
    factors of 8 and above, off below.
    """

    patch_side: int = 13
    edge_margin: int = 6
    epochs: int = 150
    batch: int = 100
    n_inits: int = 3
    neighbor_augment: bool | None = None
    conv_filters: tuple[int, ...] = (8, 16, 32)
    kernel_size: int = 3
    dense_units: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.patch_side < 3 or self.patch_side % 2 == 0:
            raise ValueError("patch_side must be an odd integer >= 3")
        if self.edge_margin < self.patch_side // 2:
            raise ValueError("edge_margin must be at least patch_side // 2")
        for name in ("epochs", "batch", "n_inits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be an odd positive integer")
        side = self.patch_side
        for f in self.conv_filters:
            side -= self.kernel_size - 1
            if f < 1 or side < 1:
                raise ValueError("conv stack reduces the patch below 1 pixel")
        if any(u < 1 for u in self.dense_units):
            raise ValueError("dense_units must be positive")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")

    def resolve_neighbor_augment(self, smap: SamplingMap) -> bool:
        if self.neighbor_augment is not None:
            return self.neighbor_augment
        return max(smap.factor) >= 8


@dataclass
class PatchSet:
    """A stack of two-channel patches with labels and provenance.

    Attributes:
        patches: (N, p, p, 2) float64 channel stack.
        labels: (N,) lifetimes; NaN marks unlabeled prediction patches.
        origins: (N, 2) HR pixel each patch is centred on.
        source: (N,) provenance, SOURCE_SAMPLED or SOURCE_NEIGHBOR.
        variant: (N,) dihedral variant id 0-7 (0 = untransformed).
        edge_margin: border width excluded from patch centres.
        intensity_max: global intensity maximum used for channel 1.
        intensity: reference to the source intensity values, kept so
            augmentation can cut neighbour windows; dropped on augmented sets.
    """

    patches: np.ndarray
    labels: np.ndarray
    origins: np.ndarray
    source: np.ndarray
    variant: np.ndarray
    edge_margin: int
    intensity_max: float
    intensity: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.patches.shape[0]

    @property
    def labeled_mask(self) -> np.ndarray:
        return ~np.isnan(self.labels)

    @property
    def labeled_count(self) -> int:
        return int(self.labeled_mask.sum())


def _channels(raw: np.ndarray, intensity_max: float) -> np.ndarray:
    """Stack (N, p, p) raw patches into the (N, p, p, 2) channel format."""
    lo = raw.min(axis=(1, 2), keepdims=True)
    hi = raw.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span[:, 0, 0] == 0
    span[flat] = 1.0
    ch0 = (raw - lo) / span
    ch0[flat] = 0.5
    ch1 = raw / intensity_max if intensity_max > 0 else np.zeros_like(raw)
    return np.stack((ch0, ch1), axis=-1)


def extract_patches(hr_intensity: Plane, lr_tau: Plane, smap: SamplingMap,
                    cfg: GlobalPriorConfig = GlobalPriorConfig()) -> PatchSet:
    """Cut one patch per in-bounds HR pixel and label the sampled ones."""
    if hr_intensity.shape != smap.hr_shape:
        raise ValueError(
            f"hr_intensity shape {hr_intensity.shape} does not match hr_shape {smap.hr_shape}")
    if lr_tau.shape != smap.lr_shape:
        raise ValueError(f"lr_tau shape {lr_tau.shape} does not match lr_shape {smap.lr_shape}")
    p, margin = cfg.patch_side, cfg.edge_margin
    nrow, ncol = smap.hr_shape
    if nrow < 2 * margin + 1 or ncol < 2 * margin + 1:
        raise ValueError(f"image {smap.hr_shape} has no in-bounds pixels at margin {margin}")

    intens = hr_intensity.values
    windows = sliding_window_view(intens, (p, p))
    half = p // 2
    rows = np.arange(margin, nrow - margin)
    cols = np.arange(margin, ncol - margin)
    raw = windows[np.ix_(rows - half, cols - half)].reshape(-1, p, p)

    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    origins = np.column_stack((grid_r.ravel(), grid_c.ravel()))
    n_cols = cols.size

    labels = np.full(raw.shape[0], np.nan)
    sr, sc = smap.sample_rows(), smap.sample_cols()
    for i, r in enumerate(sr):
        if not (margin <= r < nrow - margin):
            continue
        for j, c in enumerate(sc):
            if not (margin <= c < ncol - margin):
                continue
            tau = lr_tau.values[i, j]
            if np.isnan(tau):
                continue
            labels[(r - margin) * n_cols + (c - margin)] = tau
    if not np.any(~np.isnan(labels)):
        raise ValueError("no labeled patches in bounds; widen the image or lower edge_margin")

    intensity_max = float(intens.max())
    return PatchSet(
        patches=_channels(raw, intensity_max),
        labels=labels,
        origins=origins,
        source=np.zeros(raw.shape[0], dtype=np.uint8),
        variant=np.zeros(raw.shape[0], dtype=np.uint8),
        edge_margin=margin,
        intensity_max=intensity_max,
        intensity=intens,
    )


def _clipped_windows(intens: np.ndarray, centers: np.ndarray, p: int) -> np.ndarray:
    """Cut p-by-p windows around centres, replicating edges when clipped."""
    half = p // 2
    rows = np.clip(centers[:, 0, None] + np.arange(-half, half + 1)[None, :], 0, intens.shape[0] - 1)
    cols = np.clip(centers[:, 1, None] + np.arange(-half, half + 1)[None, :], 0, intens.shape[1] - 1)
    return intens[rows[:, :, None], cols[:, None, :]]


def _dihedral(stack: np.ndarray, k: int) -> np.ndarray:
    """Variant k of a (N, p, p, C) stack: k%4 quarter-turns, then mirror if k >= 4."""
    out = np.rot90(stack, k % 4, axes=(1, 2))
    if k >= 4:
        out = out[:, :, ::-1, :]
    return np.ascontiguousarray(out)


def augment(patchset: PatchSet, smap: SamplingMap,
            cfg: GlobalPriorConfig = GlobalPriorConfig()) -> PatchSet:
    """Expand the labeled patches into a training set.

    Neighbour augmentation (when enabled) first adds the 8 spatially nearest
    patches with the sampled patch's label, then the full dihedral group is
    applied, for exactly 72 instances per labeled patch; without neighbours
    the dihedral group alone gives exactly 8.
    """
    mask = patchset.labeled_mask
    if not mask.any():
        raise ValueError("patch set has no labeled patches to augment")
    base_patches = [patchset.patches[mask]]
    base_labels = [patchset.labels[mask]]
    base_origins = [patchset.origins[mask]]
    base_source = [np.full(int(mask.sum()), SOURCE_SAMPLED, dtype=np.uint8)]

    if cfg.resolve_neighbor_augment(smap):
        if patchset.intensity is None:
            raise ValueError("patch set lost its intensity reference; cannot cut neighbours")
        centers = patchset.origins[mask]
        for dr, dc in _NEIGHBOR_OFFSETS:
            shifted = centers + np.array([dr, dc])
            raw = _clipped_windows(patchset.intensity, shifted, cfg.patch_side)
            base_patches.append(_channels(raw, patchset.intensity_max))
            base_labels.append(patchset.labels[mask])
            base_origins.append(shifted)
            base_source.append(np.full(centers.shape[0], SOURCE_NEIGHBOR, dtype=np.uint8))

    stack = np.concatenate(base_patches)
    labels = np.concatenate(base_labels)
    origins = np.concatenate(base_origins)
    source = np.concatenate(base_source)

    out_patches = np.concatenate([_dihedral(stack, k) for k in range(8)])
    reps = 8
    return PatchSet(
        patches=out_patches,
        labels=np.tile(labels, reps),
        origins=np.tile(origins, (reps, 1)),
        source=np.tile(source, reps),
        variant=np.repeat(np.arange(8, dtype=np.uint8), stack.shape[0]),
        edge_margin=patchset.edge_margin,
        intensity_max=patchset.intensity_max,
        intensity=None,
    )
