"""Deterministic synthetic text scenes with polygon, box, cell and skeleton truth.

Each text instance is a ribbon swept along a straight segment or a quadratic
Bezier curve and split into character cells rendered as alternating-intensity
blocks with a darker stroke band along the centerline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import AxisBox, rasterize_polygon, signed_area
from .raster import resize_bilinear
from .skeleton import soft_skeleton_label

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 100


@dataclass
class GenConfig:
    count: int = 10
    width: int = 256
    height: int = 256
    min_instances: int = 1
    max_instances: int = 4
    curved_fraction: float = 0.5
    texture: float = 0.25
    noise: float = 0.02
    clutter: int = 2
    min_gap: int = 3  # pixels kept free around each placed instance
    min_stroke: float = 8.0
    max_stroke: float = 24.0
    min_cells: int = 3
    max_cells: int = 10
    max_angle: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.curved_fraction <= 1.0:
            raise ValueError("curved_fraction must be in [0, 1]")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        if self.min_gap < 1:
            raise ValueError("min_gap must be >= 1")


@dataclass
class TextInstance:
    polygon: np.ndarray
    char_cells: list[np.ndarray]
    mask: np.ndarray
    axis_box: AxisBox
    shape_kind: str  # "straight" | "curved"


@dataclass
class AnnotatedSample:
    image: np.ndarray
    instances: list[TextInstance] = field(default_factory=list)
    skeleton: np.ndarray | None = None
    index: int = 0

    @property
    def polygons(self) -> list[np.ndarray]:
        return [t.polygon for t in self.instances]

    @property
    def boxes(self) -> list[AxisBox]:
        return [t.axis_box for t in self.instances]

    @property
    def text_mask(self) -> np.ndarray:
        m = np.zeros(self.image.shape, dtype=bool)
        for t in self.instances:
            m |= t.mask
        return m


def _bezier(p0, p1, p2, t):
    t = t[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def _bezier_d1(p0, p1, p2, t):
    t = t[:, None]
    return 2 * (1 - t) * (p1 - p0) + 2 * t * (p2 - p1)


def _centerline(rng, cfg: GenConfig, n_cells: int, stroke: float, kind: str):
    """Centerline samples, unit normals and samples-per-cell, or None if rejected."""
    cell_len = stroke * rng.uniform(0.7, 1.4)
    length = min(n_cells * cell_len, 0.8 * min(cfg.width, cfg.height))
    theta = math.radians(rng.uniform(-cfg.max_angle, cfg.max_angle))
    direction = np.array([math.cos(theta), math.sin(theta)])
    normal = np.array([-direction[1], direction[0]])
    center = np.array([rng.uniform(0, cfg.width), rng.uniform(0, cfg.height)])
    p0 = center - direction * length / 2
    p2 = center + direction * length / 2
    if kind == "straight":
        t = np.linspace(0.0, 1.0, n_cells + 1)
        pts = p0 + t[:, None] * (p2 - p0)
        return pts, np.repeat(normal[None], len(pts), axis=0), 1
    bend = rng.uniform(0.12, 0.3) * length * rng.choice([-1.0, 1.0])
    p1 = center + normal * 2 * bend
    # curvature check: the ribbon must not fold onto itself
    dense = np.linspace(0.0, 1.0, 257)
    d1 = _bezier_d1(p0, p1, p2, dense)
    d2 = 2 * (p2 - 2 * p1 + p0)
    speed = np.hypot(d1[:, 0], d1[:, 1])
    kappa = np.abs(d1[:, 0] * d2[1] - d1[:, 1] * d2[0]) / speed**3
    if kappa.max() * stroke > 0.8:
        return None
    # resample at equal arc length
    pos = _bezier(p0, p1, p2, dense)
    seg = np.hypot(*np.diff(pos, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    k = 4
    m = n_cells * k
    ts = np.interp(np.linspace(0.0, arc[-1], m + 1), arc, dense)
    pts = _bezier(p0, p1, p2, ts)
    tang = _bezier_d1(p0, p1, p2, ts)
    tang /= np.hypot(tang[:, 0], tang[:, 1])[:, None]
    normals = np.column_stack([-tang[:, 1], tang[:, 0]])
    return pts, normals, k


def _ribbon(pts, normals, stroke, k, kind):
    top = pts + normals * stroke / 2
    bottom = pts - normals * stroke / 2
    n_cells = (len(pts) - 1) // k
    if kind == "straight":
        polygon = np.array([top[0], top[-1], bottom[-1], bottom[0]])
    else:
        polygon = np.concatenate([top, bottom[::-1]])
    cells = []
    for j in range(n_cells):
        a, b = j * k, (j + 1) * k
        cells.append(np.concatenate([top[a : b + 1], bottom[a : b + 1][::-1]]))
    if signed_area(polygon) < 0:
        polygon = polygon[::-1].copy()
        cells = [c[::-1].copy() for c in cells]
    return polygon, cells


def _segment_distance(px, py, pts):
    """Distance from pixel centers to a polyline."""
    best = np.full(px.shape, np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        ln2 = max(float(d @ d), 1e-12)
        t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / ln2, 0.0, 1.0)
        best = np.minimum(best, np.hypot(px - a[0] - t * d[0], py - a[1] - t * d[1]))
    return best


def _background(rng, cfg: GenConfig) -> np.ndarray:
    coarse = rng.uniform(0.1, 0.45, size=(5, 5))
    return resize_bilinear(coarse, cfg.width, cfg.height)


def _place_clutter(rng, cfg, img, occupied):
    # round blobs: bright like text but without cell structure
    for _ in range(int(rng.integers(0, cfg.clutter + 1))):
        for _attempt in range(MAX_ATTEMPTS):
            cx, cy = rng.uniform(0, cfg.width), rng.uniform(0, cfg.height)
            rx, ry = rng.uniform(5, 18), rng.uniform(5, 18)
            yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width] + 0.5
            blob = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
            if not blob.any() or (blob & occupied).any():
                continue
            img[blob] = rng.uniform(0.55, 0.9)
            occupied |= ndimage.binary_dilation(blob, iterations=cfg.min_gap)
            break


def generate_sample(cfg: GenConfig, index: int) -> AnnotatedSample:
    rng = np.random.default_rng([cfg.seed, index])
    img = _background(rng, cfg)
    occupied = np.zeros((cfg.height, cfg.width), dtype=bool)
    instances: list[TextInstance] = []
    target = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    margin = 2.0
    for inst_no in range(target):
        placed = False
        for _attempt in range(MAX_ATTEMPTS):
            kind = "curved" if rng.random() < cfg.curved_fraction else "straight"
            stroke = rng.uniform(cfg.min_stroke, cfg.max_stroke)
            n_cells = int(rng.integers(cfg.min_cells, cfg.max_cells + 1))
            line = _centerline(rng, cfg, n_cells, stroke, kind)
            if line is None:
                continue
            pts, normals, k = line
            polygon, cells = _ribbon(pts, normals, stroke, k, kind)
            if (
                polygon[:, 0].min() < margin
                or polygon[:, 1].min() < margin
                or polygon[:, 0].max() > cfg.width - margin
                or polygon[:, 1].max() > cfg.height - margin
            ):
                continue
            mask = rasterize_polygon(polygon, cfg.width, cfg.height)
            if mask.sum() < 30 or (mask & occupied).any():
                continue
            placed = True
            break
        if not placed:
            log.warning("sample %d: could not place instance %d after %d attempts", index, inst_no, MAX_ATTEMPTS)
            continue
        base = rng.uniform(0.75, 0.95)
        contrast = rng.uniform(0.12, 0.25)
        for j, cell in enumerate(cells):
            cm = rasterize_polygon(cell, cfg.width, cfg.height) & mask
            img[cm] = base if j % 2 == 0 else base - contrast
        ys, xs = np.nonzero(mask)
        core = _segment_distance(xs + 0.5, ys + 0.5, pts) < stroke / 6
        img[ys[core], xs[core]] *= 1.0 - cfg.texture
        occupied |= ndimage.binary_dilation(mask, iterations=cfg.min_gap)
        instances.append(TextInstance(polygon, cells, mask, AxisBox.from_polygon(polygon), kind))
    _place_clutter(rng, cfg, img, occupied)
    if cfg.noise > 0:
        img = img + rng.normal(0.0, cfg.noise, size=img.shape)
    img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    skel = soft_skeleton_label([t.mask for t in instances], shape=img.shape).map.astype(np.float32)
    return AnnotatedSample(img, instances, skel, index)


def generate_dataset(cfg: GenConfig) -> list[AnnotatedSample]:
    return [generate_sample(cfg, i) for i in range(cfg.count)]


def split_dataset(samples, labeled_ratio: float, seed: int = 0):
    """Seeded shuffle, then the first ``round(ratio * n)`` samples are labeled."""
    if not 0.0 <= labeled_ratio <= 1.0:
        raise ValueError("labeled_ratio must be in [0, 1]")
    n = len(samples)
    order = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(labeled_ratio * n + 0.5))
    labeled = [samples[i] for i in order[:k]]
    unlabeled = [samples[i] for i in order[k:]]
    return labeled, unlabeled
