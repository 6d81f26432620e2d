"""8-bit luminance imaging: histograms, CLAHE, bilinear resize.

Images are ``uint8`` arrays of shape (height, width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NBINS = 256


def as_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def to_luminance(rgb) -> np.ndarray:
    """Rec.601 luma of an (..., 3) uint8 array, rounded half-up."""
    rgb = np.asarray(rgb, dtype=np.int64)
    if rgb.shape[-1] != 3:
        raise ValueError("expected RGB triplets in the last axis")
    y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return y.astype(np.uint8)


def histogram(region) -> np.ndarray:
    region = np.asarray(region)
    if region.size == 0:
        raise ValueError("histogram of an empty region")
    return np.bincount(region.ravel().astype(np.int64), minlength=NBINS).astype(np.float64)


def clip_redistribute(hist, clip_limit_abs: float) -> np.ndarray:
    """Clip every bin at the limit and spread the excess evenly, in a single pass.

    Bins end up at most ``limit + excess / nbins``.
    """
    h = np.asarray(hist, dtype=np.float64)
    over = np.maximum(h - clip_limit_abs, 0.0)
    excess = math.fsum(over)
    if excess == 0.0:
        return h.copy()
    return np.minimum(h, clip_limit_abs) + excess / h.size


def _round_half_up(x):
    return np.floor(x + 0.5)


def tile_lut(hist, n_pixels: float | None = None) -> np.ndarray:
    """CDF mapping ``round(255 (cdf(v) - cdf_min) / (N - cdf_min))``.

    ``cdf_min`` is the CDF at the first occupied bin.  A histogram with a single
    occupied bin has no spread to equalize and maps to the identity.
    """
    h = np.asarray(hist, dtype=np.float64)
    cdf = np.cumsum(h)
    n = cdf[-1] if n_pixels is None else float(n_pixels)
    nz = np.flatnonzero(h > 0)
    if nz.size == 0:
        raise ValueError("tile_lut on an empty histogram")
    cdf_min = cdf[nz[0]]
    if n - cdf_min <= 0:
        return np.arange(h.size, dtype=np.float64)
    lut = _round_half_up(255.0 * (cdf - cdf_min) / (n - cdf_min))
    return np.clip(lut, 0.0, 255.0)


def equalize_hist(img) -> np.ndarray:
    """Plain global histogram equalization."""
    img = as_image(img)
    return tile_lut(histogram(img))[img].astype(np.uint8)


@dataclass(frozen=True)
class TileGrid:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0  # multiple of the uniform bin height; inf disables clipping
    bins: int = NBINS

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("tile grid needs at least one tile per axis")
        if not self.clip_limit >= 1.0:
            raise ValueError("clip_limit must be >= 1.0")
        if self.bins != NBINS:
            raise ValueError("only 256-bin 8-bit CLAHE is supported")


def tile_edges(extent: int, tiles: int) -> np.ndarray:
    return (np.arange(tiles + 1) * extent) // tiles


@dataclass
class TileMapping:
    luts: np.ndarray          # (tiles_y, tiles_x, 256)
    centers_y: np.ndarray     # (tiles_y,) pixel-row centers
    centers_x: np.ndarray     # (tiles_x,)


def tile_mappings(img, grid: TileGrid) -> TileMapping:
    img = as_image(img)
    h, w = img.shape
    if grid.tiles_y > h or grid.tiles_x > w:
        raise ValueError(f"image {w}x{h} smaller than tile grid {grid.tiles_x}x{grid.tiles_y}")
    ey, ex = tile_edges(h, grid.tiles_y), tile_edges(w, grid.tiles_x)
    luts = np.empty((grid.tiles_y, grid.tiles_x, NBINS))
    for i in range(grid.tiles_y):
        for j in range(grid.tiles_x):
            tile = img[ey[i]:ey[i + 1], ex[j]:ex[j + 1]]
            hist = histogram(tile)
            if math.isfinite(grid.clip_limit):
                hist = clip_redistribute(hist, grid.clip_limit * tile.size / NBINS)
            luts[i, j] = tile_lut(hist, tile.size)
    cy = (ey[:-1] + ey[1:] - 1) / 2.0
    cx = (ex[:-1] + ex[1:] - 1) / 2.0
    return TileMapping(luts, cy, cx)


def _neighbors(coords: np.ndarray, centers: np.ndarray):
    """Lower/upper tile index and fractional distance per pixel coordinate (clamped at borders)."""
    k = len(centers)
    lo = np.searchsorted(centers, coords, side="right") - 1
    lo = np.clip(lo, 0, k - 1)
    hi = np.minimum(lo + 1, k - 1)
    span = centers[hi] - centers[lo]
    frac = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    return lo, hi, frac


def clahe(img, grid: TileGrid = TileGrid()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Each pixel blends the LUTs of its four nearest tile centers::

        f = (1-dc) * ((1-dr) f_ul + dr f_bl) + dc * ((1-dr) f_ur + dr f_br)

    with ``dr``/``dc`` the row/column offsets from the upper-left center,
    normalized by the center spacing.  Pixels outside the center lattice clamp
    to the nearest centers.
    """
    img = as_image(img)
    m = tile_mappings(img, grid)
    h, w = img.shape
    r0, r1, dr = _neighbors(np.arange(h, dtype=np.float64), m.centers_y)
    c0, c1, dc = _neighbors(np.arange(w, dtype=np.float64), m.centers_x)
    R0, C0 = np.meshgrid(r0, c0, indexing="ij")
    R1, C1 = np.meshgrid(r1, c1, indexing="ij")
    DR, DC = np.meshgrid(dr, dc, indexing="ij")
    f_ul = m.luts[R0, C0, img]
    f_bl = m.luts[R1, C0, img]
    f_ur = m.luts[R0, C1, img]
    f_br = m.luts[R1, C1, img]
    f = (1.0 - DC) * ((1.0 - DR) * f_ul + DR * f_bl) + DC * ((1.0 - DR) * f_ur + DR * f_br)
    return np.clip(_round_half_up(f), 0, 255).astype(np.uint8)


def resize_bilinear(img, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; identity when the size matches."""
    img = as_image(img)
    return np.clip(_round_half_up(resize_float(img, out_w, out_h)), 0, 255).astype(np.uint8)


def resize_float(arr, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of a float field (half-pixel centers, edge clamp)."""
    a = np.asarray(arr, dtype=np.float64)
    h, w = a.shape
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be positive")
    if (h, w) == (out_h, out_w):
        return a.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]
