"""Polygon and rotated-box primitives.

Coordinates are continuous pixel coordinates with the y axis pointing down.
Pixel ``(row, col)`` covers ``[col, col+1) x [row, row+1)`` and its center is
``(col + 0.5, row + 0.5)``. "Clockwise" means clockwise as seen on screen,
which is a positive shoelace sum in this y-down frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AxisBox",
    "CropTransform",
    "QuadBox",
    "as_polygon",
    "convex_hull",
    "convex_iou",
    "map_coords",
    "map_polygon",
    "min_area_rect",
    "point_in_polygon",
    "polygon_area",
    "polygon_bounds",
    "polygon_iou",
    "rasterize_polygon",
    "rasterize_polygons",
    "signed_area",
]

AREA_EPS = 1e-9
IOU_GRID = 512


def signed_area(points: np.ndarray) -> float:
    """Shoelace area; positive for clockwise (screen) vertex order."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def as_polygon(points) -> np.ndarray:
    """Validate and return an ``(n, 2)`` float array.

    Accepts nested pairs or a flat ``[x0, y0, x1, y1, ...]`` sequence.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        if arr.size % 2:
            raise ValueError(f"flat polygon needs an even number of values, got {arr.size}")
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"polygon must have shape (n, 2), got {arr.shape}")
    if len(arr) < 3:
        raise ValueError(f"polygon needs at least 3 vertices, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("polygon has non-finite coordinates")
    if np.any(np.all(arr == np.roll(arr, -1, axis=0), axis=1)):
        raise ValueError("polygon has repeated consecutive vertices")
    if abs(signed_area(arr)) <= AREA_EPS:
        raise ValueError("degenerate polygon (zero area)")
    return arr


def polygon_area(p) -> float:
    return abs(signed_area(as_polygon(p)))


def polygon_bounds(p: np.ndarray) -> tuple[float, float, float, float]:
    return float(p[:, 0].min()), float(p[:, 1].min()), float(p[:, 0].max()), float(p[:, 1].max())


def rasterize_polygon(
    p: np.ndarray,
    width: int,
    height: int,
    origin: tuple[float, float] = (0.0, 0.0),
    cell: float = 1.0,
) -> np.ndarray:
    """Even-odd fill sampled at cell centers.

    Cell ``(r, c)`` has center ``origin + ((c + 0.5) * cell, (r + 0.5) * cell)``.
    Only rows/columns overlapping the polygon's bounds are evaluated.
    """
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros((height, width), dtype=bool)
    ox, oy = origin
    x0, y0, x1, y1 = polygon_bounds(p)
    r0 = max(0, int(math.floor((y0 - oy) / cell - 0.5)))
    r1 = min(height, int(math.ceil((y1 - oy) / cell + 0.5)))
    c0 = max(0, int(math.floor((x0 - ox) / cell - 0.5)))
    c1 = min(width, int(math.ceil((x1 - ox) / cell + 0.5)))
    if r0 >= r1 or c0 >= c1:
        return out
    ys = oy + (np.arange(r0, r1) + 0.5) * cell
    xs = ox + (np.arange(c0, c1) + 0.5) * cell
    a = p
    b = np.roll(p, -1, axis=0)
    ay, by = a[:, 1][:, None], b[:, 1][:, None]
    crosses = (ay <= ys) != (by <= ys)  # (edges, rows), half-open rule
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ys - ay) / (by - ay)
    xc = a[:, 0][:, None] + t * (b[:, 0] - a[:, 0])[:, None]
    xc = np.where(crosses, xc, np.inf)
    # parity of crossings strictly left of each cell center
    left = (xc[:, :, None] < xs[None, None, :]).sum(axis=0)
    out[r0:r1, c0:c1] = (left % 2) == 1
    return out


def rasterize_polygons(polys: Iterable[np.ndarray], width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for p in polys:
        mask |= rasterize_polygon(p, width, height)
    return mask


def polygon_iou(a, b) -> float:
    """IoU of two polygons by rasterization on a shared grid.

    The grid covers the union bounding box with its longest side split into
    512 cells, so the result is symmetric in ``a`` and ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax0, ay0, ax1, ay1 = polygon_bounds(a)
    bx0, by0, bx1, by1 = polygon_bounds(b)
    if ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0:
        return 0.0
    x0, y0 = min(ax0, bx0), min(ay0, by0)
    x1, y1 = max(ax1, bx1), max(ay1, by1)
    cell = max(x1 - x0, y1 - y0) / IOU_GRID
    nx = max(1, int(math.ceil((x1 - x0) / cell)))
    ny = max(1, int(math.ceil((y1 - y0) / cell)))
    ma = rasterize_polygon(a, nx, ny, (x0, y0), cell)
    mb = rasterize_polygon(b, nx, ny, (x0, y0), cell)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def point_in_polygon(pt, p: np.ndarray, slack: float = 0.0) -> bool:
    """Even-odd containment; points within ``slack`` of an edge count as inside."""
    x, y = float(pt[0]), float(pt[1])
    a = np.asarray(p, dtype=np.float64)
    b = np.roll(a, -1, axis=0)
    if slack > 0:
        d = b - a
        ln2 = np.maximum((d**2).sum(axis=1), 1e-300)
        t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / ln2, 0.0, 1.0)
        dist = np.hypot(a[:, 0] + t * d[:, 0] - x, a[:, 1] + t * d[:, 1] - y)
        if dist.min() <= slack:
            return True
    crosses = (a[:, 1] <= y) != (b[:, 1] <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = a[:, 0] + (y - a[:, 1]) / (b[:, 1] - a[:, 1]) * (b[:, 0] - a[:, 0])
    return bool(np.count_nonzero(crosses & (xc > x)) % 2)


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, clockwise (screen) order, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for q in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    upper: list = []
    for q in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    hull = np.array(lower[:-1] + upper[:-1])
    # monotone chain yields counter-clockwise in y-up, i.e. clockwise on screen
    if len(hull) >= 3 and signed_area(hull) < 0:
        hull = hull[::-1]
    return hull


def _canonical_quad(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(4, 2)
    if signed_area(v) < 0:
        v = v[::-1]
    start = min(range(4), key=lambda i: (v[i, 1], v[i, 0]))
    return np.roll(v, -start, axis=0).copy()


@dataclass(frozen=True)
class QuadBox:
    """Convex quadrilateral with a detection score.

    Vertices are canonicalized on construction: clockwise, starting from the
    lexicographically smallest ``(y, x)`` vertex.
    """

    vertices: np.ndarray
    score: float = 0.0

    def __post_init__(self):
        v = _canonical_quad(self.vertices)
        if not np.all(np.isfinite(v)):
            raise ValueError("quad has non-finite coordinates")
        if self.score < 0:
            raise ValueError(f"quad score must be nonnegative, got {self.score}")
        e = np.roll(v, -1, axis=0) - v
        turns = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(turns < -1e-9 * max(1.0, float(np.abs(v).max()) ** 2)):
            raise ValueError("quad is not convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "score", float(self.score))

    @property
    def area(self) -> float:
        return abs(signed_area(self.vertices))

    def with_score(self, score: float) -> "QuadBox":
        return QuadBox(self.vertices, score)


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    # Sutherland-Hodgman; both polygons clockwise on screen (positive area)
    out = subject
    n = len(clip)
    for i in range(n):
        if len(out) == 0:
            break
        a, b = clip[i], clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        side = ex * (out[:, 1] - a[1]) - ey * (out[:, 0] - a[0])
        inside = side >= 0
        nxt = []
        m = len(out)
        for j in range(m):
            p, q = out[j], out[(j + 1) % m]
            sp, sq = side[j], side[(j + 1) % m]
            if inside[j]:
                nxt.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                nxt.append(p + t * (q - p))
        out = np.array(nxt) if nxt else np.zeros((0, 2))
    return out


def convex_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Exact IoU of two convex polygons (clockwise) by polygon clipping."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if (
        a[:, 0].max() <= b[:, 0].min()
        or b[:, 0].max() <= a[:, 0].min()
        or a[:, 1].max() <= b[:, 1].min()
        or b[:, 1].max() <= a[:, 1].min()
    ):
        return 0.0
    inter_poly = _clip_convex(a, b)
    inter = abs(signed_area(inter_poly)) if len(inter_poly) >= 3 else 0.0
    union = abs(signed_area(a)) + abs(signed_area(b)) - inter
    return inter / union if union > 0 else 0.0


def min_area_rect(points, pad: float = 0.0) -> QuadBox:
    """Rotating-calipers minimum-area rectangle over the convex hull.

    ``pad`` pushes every side outward by that distance.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise ValueError(f"min_area_rect needs at least 3 points, got {len(pts)}")
    hull = convex_hull(pts)
    if len(hull) < 3 or abs(signed_area(hull)) <= AREA_EPS:
        raise ValueError("min_area_rect: points are collinear")
    best = None
    for i in range(len(hull)):
        e = hull[(i + 1) % len(hull)] - hull[i]
        u = e / np.hypot(e[0], e[1])
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        area = (pu.max() - pu.min()) * (pv.max() - pv.min())
        if best is None or area < best[0] - 1e-12:
            best = (area, u, v, pu.min(), pu.max(), pv.min(), pv.max())
    _, u, v, u0, u1, v0, v1 = best
    u0, v0, u1, v1 = u0 - pad, v0 - pad, u1 + pad, v1 + pad
    corners = np.array([u0 * u + v0 * v, u1 * u + v0 * v, u1 * u + v1 * v, u0 * u + v1 * v])
    return QuadBox(corners, 0.0)


@dataclass(frozen=True)
class AxisBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"invalid axis box {self.as_list()}")

    @classmethod
    def from_polygon(cls, p: np.ndarray) -> "AxisBox":
        return cls(*polygon_bounds(np.asarray(p, dtype=np.float64)))

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def as_list(self) -> list[float]:
        return [float(self.x0), float(self.y0), float(self.x1), float(self.y1)]

    def as_polygon(self) -> np.ndarray:
        return np.array(
            [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]],
            dtype=np.float64,
        )

    def expand(self, pad: float) -> "AxisBox":
        return AxisBox(self.x0 - pad, self.y0 - pad, self.x1 + pad, self.y1 + pad)


@dataclass(frozen=True)
class CropTransform:
    """Axis-aligned scale+translate between a source box and a crop raster."""

    source_box: AxisBox
    target_width: int = 128
    target_height: int = 128

    def __post_init__(self):
        if self.target_width < 1 or self.target_height < 1:
            raise ValueError("crop target dimensions must be >= 1")

    @property
    def scale(self) -> tuple[float, float]:
        return (
            self.target_width / self.source_box.width,
            self.target_height / self.source_box.height,
        )


def map_coords(t: CropTransform, p: Sequence[float], direction: str = "to_crop") -> tuple[float, float]:
    (x, y), (sx, sy) = p, t.scale
    b = t.source_box
    if direction == "to_crop":
        return ((x - b.x0) * sx, (y - b.y0) * sy)
    if direction == "to_global":
        return (b.x0 + x / sx, b.y0 + y / sy)
    raise ValueError(f"unknown direction {direction!r}")


def map_polygon(t: CropTransform, p: np.ndarray, direction: str = "to_crop") -> np.ndarray:
    """Vectorized :func:`map_coords` over an ``(n, 2)`` array."""
    p = np.asarray(p, dtype=np.float64)
    sx, sy = t.scale
    b = t.source_box
    if direction == "to_crop":
        return np.column_stack([(p[:, 0] - b.x0) * sx, (p[:, 1] - b.y0) * sy])
    if direction == "to_global":
        return np.column_stack([b.x0 + p[:, 0] / sx, b.y0 + p[:, 1] / sy])
    raise ValueError(f"unknown direction {direction!r}")
