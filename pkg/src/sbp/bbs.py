"""Box-supervised pseudo labels: crop each box, segment it, splice the polygons back."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .geometry import (
    AxisBox,
    CropTransform,
    convex_hull,
    map_polygon,
    rasterize_polygon,
    rasterize_polygons,
    signed_area,
)
from .raster import binarize, crop_bilinear, label_components
from .sasn import CROP_SIZE, NetParams, TrainItem, predict
from .skeleton import soft_skeleton_label
from .supervision import PixelSupervision

log = logging.getLogger(__name__)

BOX_SLACK = 2.0
DP_EPSILON = 2.0
MIN_AREA = 16.0

# segmenter: (n, size, size) crops -> (n, size, size) scores in [0, 1]
Segmenter = Callable[[np.ndarray], np.ndarray]


@dataclass
class BBSConfig:
    thresh: float = 0.5
    window: float = 0.5
    crop_size: int = CROP_SIZE
    epsilon: float = DP_EPSILON
    min_area: float = MIN_AREA


@dataclass
class PseudoLabel:
    polygons: list[np.ndarray] = field(default_factory=list)
    mask: np.ndarray | None = None
    provenance: list[int] = field(default_factory=list)


def crop_text_regions(img: np.ndarray, boxes: Sequence[AxisBox | Sequence[float]], size: int = CROP_SIZE):
    """Bilinear ``size x size`` crops of each box with their crop transforms.

    Boxes may be AxisBox or ``(x0, y0, x1, y1)``. Boxes up to 2 px outside the image are clamped (with a warning); anything
    further out is rejected.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    out = []
    for i, b in enumerate(boxes):
        if not isinstance(b, AxisBox):
            x0, y0, x1, y1 = (float(v) for v in b)
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"box {i} has zero area")
            b = AxisBox(x0, y0, x1, y1)
        over = max(-b.x0, -b.y0, b.x1 - w, b.y1 - h)
        if over > BOX_SLACK:
            raise ValueError(f"box {i} lies {over:.2f} px outside the {w}x{h} image")
        if over > 0:
            log.warning("box %d extends %.2f px outside the image; clamped", i, over)
            x0, y0 = max(b.x0, 0.0), max(b.y0, 0.0)
            x1, y1 = min(b.x1, float(w)), min(b.y1, float(h))
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"box {i} has zero area after clamping")
            b = AxisBox(x0, y0, x1, y1)
        crop = crop_bilinear(img, b.x0, b.y0, b.x1, b.y1, size, size)
        out.append((crop, CropTransform(b, size, size)))
    return out


def _trace_outer(comp: np.ndarray) -> np.ndarray:
    """Outer boundary of one 8-connected component along pixel edges.

    Returns every unit step's start corner, so the closed polygon covers
    exactly the component's pixels (holes are filled). Directions are
    ``(dx, dy)`` in y-down image coordinates; foreground stays on the right.
    """
    m = np.pad(comp, 1)
    rows, cols = np.nonzero(m)
    k = np.lexsort((cols, rows))[0]
    r0, c0 = int(rows[k]), int(cols[k])
    # start at the top-left corner of the first pixel, heading east
    x, y, dx, dy = c0, r0, 1, 0
    start = (x, y, dx, dy)
    verts = [(x, y)]
    while True:
        x, y = x + dx, y + dy
        # pixels ahead-left / ahead-right of the vertex, relative to heading
        rx, ry = -dy, dx
        al = m[(2 * y + dy - ry) // 2, (2 * x + dx - rx) // 2]
        ar = m[(2 * y + dy + ry) // 2, (2 * x + dx + rx) // 2]
        if al:
            dx, dy = dy, -dx
        elif not ar:
            dx, dy = -dy, dx
        if (x, y, dx, dy) == start:
            break
        verts.append((x, y))
    return np.array(verts, dtype=np.float64) - 1.0  # undo the padding


def _point_line_dist(pts, a, b):
    d = b - a
    n = np.hypot(d[0], d[1])
    if n == 0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    return np.abs(d[0] * (pts[:, 1] - a[1]) - d[1] * (pts[:, 0] - a[0])) / n


def douglas_peucker(pts: np.ndarray, epsilon: float) -> np.ndarray:
    """Open-chain simplification; endpoints are always kept."""
    if len(pts) < 3:
        return pts
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _point_line_dist(pts[i + 1 : j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            k += i + 1
            keep[k] = True
            stack.append((i, k))
            stack.append((k, j))
    return pts[keep]


def simplify_closed(poly: np.ndarray, epsilon: float) -> np.ndarray:
    """Closed-polygon simplification: split at the vertex farthest from vertex 0."""
    if len(poly) <= 4:
        return poly
    far = int(np.argmax(np.hypot(*(poly - poly[0]).T)))
    a = douglas_peucker(poly[: far + 1], epsilon)
    b = douglas_peucker(np.vstack([poly[far:], poly[:1]]), epsilon)
    out = np.vstack([a, b[1:-1]])
    return out


def mask_to_polygons(mask: np.ndarray, min_area: float = MIN_AREA, epsilon: float = DP_EPSILON) -> list[np.ndarray]:
    """Polygons for every 8-connected component of at least ``min_area`` pixels."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = label_components(mask)
    if n == 0:
        return []
    counts = np.bincount(labels.ravel())
    polys = []
    for lab, sl in enumerate(ndimage.find_objects(labels, max_label=n), start=1):
        if counts[lab] < min_area:
            continue
        comp = labels[sl] == lab
        off = np.array([sl[1].start, sl[0].start], dtype=np.float64)
        raw = _trace_outer(comp)
        poly = simplify_closed(raw, epsilon)
        if len(poly) < 3 or abs(signed_area(poly)) < 1.0:
            poly = convex_hull(raw)
        polys.append(poly + off)
    return polys


def central_component(mask: np.ndarray, window: float = 0.5) -> np.ndarray:
    """Largest component touching the central ``window`` fraction of the crop."""
    h, w = mask.shape
    labels, n = label_components(mask)
    out = np.zeros_like(mask, dtype=bool)
    if n == 0:
        return out
    mh, mw = (1.0 - window) / 2 * h, (1.0 - window) / 2 * w
    r0, r1 = int(np.floor(mh)), int(np.ceil(h - mh))
    c0, c1 = int(np.floor(mw)), int(np.ceil(w - mw))
    central = np.unique(labels[r0:r1, c0:c1])
    central = central[central > 0]
    if central.size == 0:
        return out
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    best = central[np.argmax(counts[central])]
    return labels == best


def model_segmenter(model: NetParams, attention: bool = True) -> Segmenter:
    if not model.is_finite():
        raise ValueError("model parameters contain NaN or Inf")
    return lambda crops: predict(model, crops, attention=attention)


def generate_pseudo_labels(
    img: np.ndarray,
    boxes: Sequence[AxisBox],
    model: NetParams | Segmenter,
    thresh: float = 0.5,
    cfg: BBSConfig | None = None,
) -> PseudoLabel:
    """Segment each box crop, keep its central component and splice polygons globally."""
    cfg = cfg or BBSConfig(thresh=thresh)
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    segment = model_segmenter(model) if isinstance(model, NetParams) else model
    label = PseudoLabel(mask=np.zeros((h, w), dtype=bool))
    crops = crop_text_regions(img, boxes, cfg.crop_size)
    if not crops:
        return label
    scores = np.asarray(segment(np.stack([c for c, _ in crops])), dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("segmenter produced non-finite scores")
    for i, ((_, t), s) in enumerate(zip(crops, scores)):
        comp = central_component(binarize(s, cfg.thresh), cfg.window)
        for poly in mask_to_polygons(comp, min_area=1, epsilon=cfg.epsilon):
            g = map_polygon(t, poly, "to_global")
            lim = t.source_box.expand(BOX_SLACK)
            g[:, 0] = np.clip(g[:, 0], lim.x0, lim.x1)
            g[:, 1] = np.clip(g[:, 1], lim.y0, lim.y1)
            if abs(signed_area(g)) < 1e-6:
                continue
            label.polygons.append(g)
            label.provenance.append(i)
    label.mask = rasterize_polygons(label.polygons, w, h)
    return label


# ---------------------------------------------------------------------------
# segmenter training data


def instance_crop_items(samples, size: int = CROP_SIZE, pad: float = BOX_SLACK) -> list[TrainItem]:
    """One crop per text instance: its padded box resampled to ``size x size``.

    The target is that instance's polygon alone, rasterized in crop space, so
    neighbors leaking into the box count as background.
    """
    items = []
    for s in samples:
        h, w = s.image.shape
        for t in s.instances:
            b = t.axis_box.expand(pad)
            b = AxisBox(max(b.x0, 0.0), max(b.y0, 0.0), min(b.x1, float(w)), min(b.y1, float(h)))
            (crop, tf), = crop_text_regions(s.image, [b], size)
            mask = rasterize_polygon(map_polygon(tf, t.polygon, "to_crop"), size, size)
            if not mask.any():
                continue
            skel = soft_skeleton_label([mask]).map
            items.append(TrainItem(crop, PixelSupervision.from_mask(mask).states, skel))
    return items
