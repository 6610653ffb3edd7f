"""Raster primitives: exact EDT, Canny edges, bilinear resize, thresholding.

Rasters are plain 2-D numpy arrays indexed ``[row, col]``: gray images are
float in ``[0, 1]``, masks are bool, score/distance maps are float.
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np
from scipy import ndimage

__all__ = [
    "binarize",
    "canny_edges",
    "exact_edt",
    "label_components",
    "resize_bilinear",
    "resize_matrix",
]

_BIG = 1e20
_EIGHT = np.ones((3, 3), dtype=bool)


@numba.njit(cache=True)
def _envelope_1d(f, out, v, z):
    # lower envelope of parabolas (q - i)^2 + f[i]
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d = q - v[k]
        out[q] = d * d + f[v[k]]


@numba.njit(cache=True)
def _squared_edt(fg):
    h, w = fg.shape
    g = np.empty((h, w), dtype=np.float64)
    n = max(h, w)
    f = np.empty(n, dtype=np.float64)
    o = np.empty(n, dtype=np.float64)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for c in range(w):
        for r in range(h):
            f[r] = _BIG if fg[r, c] else 0.0
        _envelope_1d(f[:h], o[:h], v, z)
        for r in range(h):
            g[r, c] = o[r]
    for r in range(h):
        for c in range(w):
            f[c] = g[r, c]
        _envelope_1d(f[:w], o[:w], v, z)
        for c in range(w):
            g[r, c] = o[c]
    return g


def exact_edt(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from each true pixel to the nearest false pixel.

    Distances are between pixel centers and exact (integer squared distances
    are computed exactly, then square-rooted). False pixels map to 0. A mask
    with no false pixel at all is measured against the one-pixel frame just
    outside the image.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        raise ValueError("exact_edt needs a nonempty mask")
    if mask.all():
        padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = True
        return np.sqrt(_squared_edt(padded))[1:-1, 1:-1]
    return np.sqrt(_squared_edt(mask))


def _gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_sep(img: np.ndarray, kr: np.ndarray, kc: np.ndarray) -> np.ndarray:
    # correlation with edge replication, separable kernels
    r = len(kr) // 2
    p = np.pad(img, r, mode="edge")
    h, w = img.shape
    tmp = sum(kr[i] * p[i : i + h, :] for i in range(len(kr)))
    return sum(kc[j] * tmp[:, j : j + w] for j in range(len(kc)))


def canny_edges(
    img: np.ndarray,
    low: float = 0.1,
    high: float = 0.3,
    sigma: float = 1.4,
    ksize: int = 5,
) -> np.ndarray:
    """Canny edge map; thresholds are fractions of the maximum gradient magnitude."""
    if not (0 <= low < high <= 1):
        raise ValueError(f"canny thresholds need 0 <= low < high <= 1, got {low}, {high}")
    img = np.asarray(img, dtype=np.float64)
    img = img - img.min()
    smooth = _filter_sep(img, _gaussian_kernel(sigma, ksize), _gaussian_kernel(sigma, ksize))
    deriv = np.array([-1.0, 0.0, 1.0])
    tri = np.array([1.0, 2.0, 1.0])
    gx = _filter_sep(smooth, tri, deriv)
    gy = _filter_sep(smooth, deriv, tri)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros(img.shape, dtype=bool)

    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def shifted(dr, dc):
        return p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    keep = np.zeros(mag.shape, dtype=bool)
    # y grows downward, so a 45 degree gradient points to (+col, +row)
    for lo, hi, (dr, dc) in (
        (0.0, 22.5, (0, 1)),
        (157.5, 180.0, (0, 1)),
        (22.5, 67.5, (1, 1)),
        (67.5, 112.5, (1, 0)),
        (112.5, 157.5, (1, -1)),
    ):
        sel = (angle >= lo) & (angle < hi)
        local = (mag >= shifted(dr, dc)) & (mag > shifted(-dr, -dc))
        keep |= sel & local
    keep &= mag > 0

    strong = keep & (mag >= high * peak)
    weak = keep & (mag >= low * peak)
    labels, n = ndimage.label(weak, structure=_EIGHT)
    if n == 0:
        return np.zeros(img.shape, dtype=bool)
    hit = np.zeros(n + 1, dtype=bool)
    hit[labels[strong]] = True
    hit[0] = False
    return hit[labels]


@lru_cache(maxsize=256)
def _resize_matrix_cached(n_in: int, n_out: int) -> np.ndarray:
    m = sample_matrix(n_in, 0.0, float(n_in), n_out)
    m.setflags(write=False)
    return m


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """1-D bilinear interpolation operator (half-pixel centers, clamped ends)."""
    if n_in < 1 or n_out < 1:
        raise ValueError("resize sizes must be >= 1")
    m = _resize_matrix_cached(int(n_in), int(n_out))
    return m if dtype == np.float64 else m.astype(dtype)


def resize_bilinear(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize of a 2-D raster (or a stack ``(..., rows, cols)``)."""
    img = np.asarray(img)
    if w < 1 or h < 1:
        raise ValueError("resize target must be >= 1 in both dimensions")
    dtype = img.dtype if img.dtype in (np.float32, np.float64) else np.float64
    a = img.astype(dtype, copy=False)
    rows, cols = a.shape[-2:]
    if (rows, cols) == (h, w):
        return a.copy()
    mh = resize_matrix(rows, h, dtype)
    mw = resize_matrix(cols, w, dtype)
    return mh @ a @ mw.T


def sample_matrix(n_in: int, start: float, length: float, n_out: int) -> np.ndarray:
    """Bilinear operator sampling ``[start, start + length]`` of an axis at ``n_out`` cells.

    Output cell ``i`` reads the input at continuous coordinate
    ``start + (i + 0.5) * length / n_out`` (pixel ``j`` is centered at ``j + 0.5``),
    with clamped ends.
    """
    if n_in < 1 or n_out < 1 or length <= 0:
        raise ValueError("sample_matrix needs positive sizes")
    m = np.zeros((n_out, n_in), dtype=np.float64)
    src = start + (np.arange(n_out) + 0.5) * (length / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def crop_bilinear(img: np.ndarray, x0: float, y0: float, x1: float, y1: float, w: int, h: int) -> np.ndarray:
    """Resample the region ``[x0, x1] x [y0, y1]`` of ``img`` onto a ``w x h`` grid."""
    img = np.asarray(img, dtype=np.float64)
    rows, cols = img.shape
    mh = sample_matrix(rows, y0, y1 - y0, h)
    mw = sample_matrix(cols, x0, x1 - x0, w)
    return mh @ img @ mw.T


def binarize(values: np.ndarray, thresh: float) -> np.ndarray:
    return np.asarray(values) > thresh


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labels (0 = background) and component count."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    return labels, int(n)
