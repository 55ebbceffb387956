"""Rendering: CLAHE intensity equalization and lifetime/intensity composites.

The composite follows the usual FLIM display convention: lifetime picks the
hue through a perceptual colormap, local-contrast-equalized intensity sets
the brightness.  Colormaps are shipped as in-package data tables; PNG output
is 8-bit RGB.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from . import _colormap_data
from .core import Plane

COLORMAPS = {
    "viridis": np.asarray(_colormap_data.VIRIDIS, dtype=np.float64),
    "gray": np.stack([np.linspace(0.0, 1.0, 256)] * 3, axis=1),
}


def _values(x) -> np.ndarray:
    arr = x.values if isinstance(x, Plane) else np.asarray(x, dtype=np.float64)
    return np.asarray(arr, dtype=np.float64)


def clahe(intensity, tiles: tuple[int, int] = (8, 8), clip: float = 2.0) -> Plane:
    """Contrast-limited adaptive histogram equalization onto [0, 1].

    The image is divided into ``tiles`` regions (edge-extended when the shape
    does not divide evenly); each tile's 256-bin histogram is clipped at
    ``clip`` times the uniform bin height, the excess is redistributed evenly,
    and per-tile CDF mappings are blended bilinearly between tile centres.
    Constant input maps to 0.5 everywhere.
    """
    arr = _values(intensity)
    if arr.ndim != 2:
        raise ValueError("clahe expects a 2-D image")
    tr, tc = int(tiles[0]), int(tiles[1])
    if tr < 1 or tc < 1:
        raise ValueError("tile counts must be >= 1")
    if not (clip > 0):
        raise ValueError("clip must be positive")
    vmin, vmax = float(arr.min()), float(arr.max())
    if vmax == vmin:
        return Plane(values=np.full(arr.shape, 0.5), role="weight", units="")

    n_bins = 256
    bins = np.minimum(((arr - vmin) / (vmax - vmin) * n_bins).astype(np.intp), n_bins - 1)

    rows, cols = arr.shape
    tile_h = -(-rows // tr)  # ceil
    tile_w = -(-cols // tc)
    pad_r, pad_c = tile_h * tr - rows, tile_w * tc - cols
    padded = np.pad(bins, ((0, pad_r), (0, pad_c)), mode="edge")

    # Per-tile clipped histograms -> CDF lookup tables.
    lut = np.empty((tr, tc, n_bins), dtype=np.float64)
    limit = clip * (tile_h * tile_w) / n_bins
    for ti in range(tr):
        for tj in range(tc):
            tile = padded[ti * tile_h:(ti + 1) * tile_h, tj * tile_w:(tj + 1) * tile_w]
            hist = np.bincount(tile.ravel(), minlength=n_bins).astype(np.float64)
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / n_bins
            lut[ti, tj] = np.cumsum(hist) / hist.sum()

    # Bilinear blend between the four surrounding tile centres.
    def axis_blend(length, n_tiles, tile_len):
        centers = (np.arange(n_tiles) + 0.5) * tile_len - 0.5
        pos = np.arange(length, dtype=np.float64)
        t = np.clip((pos - centers[0]) / tile_len, 0.0, n_tiles - 1.0)
        lo = np.minimum(t.astype(np.intp), max(n_tiles - 2, 0))
        return lo, np.minimum(lo + 1, n_tiles - 1), t - lo

    ri0, ri1, rw = axis_blend(rows, tr, tile_h)
    ci0, ci1, cw = axis_blend(cols, tc, tile_w)
    r0 = ri0[:, None]
    r1 = ri1[:, None]
    c0 = ci0[None, :]
    c1 = ci1[None, :]
    b = bins[:rows, :cols]
    out = ((1 - rw)[:, None] * (1 - cw)[None, :] * lut[r0, c0, b]
           + (1 - rw)[:, None] * cw[None, :] * lut[r0, c1, b]
           + rw[:, None] * (1 - cw)[None, :] * lut[r1, c0, b]
           + rw[:, None] * cw[None, :] * lut[r1, c1, b])
    return Plane(values=np.clip(out, 0.0, 1.0), role="weight", units="")


def _lookup(table: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Linear interpolation into a (256, 3) color table for t in [0, 1]."""
    x = np.clip(t, 0.0, 1.0) * (table.shape[0] - 1)
    lo = np.minimum(x.astype(np.intp), table.shape[0] - 2)
    frac = (x - lo)[..., None]
    return table[lo] * (1.0 - frac) + table[lo + 1] * frac


def composite(tau, intensity, tau_range: tuple[float, float],
              colormap: str = "viridis",
              tiles: tuple[int, int] = (8, 8), clip: float = 2.0) -> np.ndarray:
    """Blend lifetime hue with equalized intensity brightness.

    ``tau`` is clipped to ``tau_range`` and mapped through the colormap; the
    result is scaled channel-wise by ``clahe(intensity)``.  Returns an
    (M, N, 3) float array in [0, 1].
    """
    tv = _values(tau)
    iv = _values(intensity)
    if tv.shape != iv.shape:
        raise ValueError(f"shape mismatch: tau {tv.shape} vs intensity {iv.shape}")
    lo, hi = float(tau_range[0]), float(tau_range[1])
    if not (hi > lo):
        raise ValueError("tau_range must be (low, high) with high > low")
    table = COLORMAPS.get(colormap)
    if table is None:
        raise ValueError(f"unknown colormap {colormap!r}; available: {sorted(COLORMAPS)}")
    t = (np.clip(np.nan_to_num(tv, nan=lo), lo, hi) - lo) / (hi - lo)
    rgb = _lookup(table, t)
    lum = clahe(iv, tiles=tiles, clip=clip).values
    return rgb * lum[:, :, None]


def save_png(rgb: np.ndarray, path) -> None:
    """Write an (M, N, 3) float image in [0, 1] as 8-bit RGB PNG."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("save_png expects an (M, N, 3) array")
    quantized = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")
