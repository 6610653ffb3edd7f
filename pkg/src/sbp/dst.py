"""Dynamic self-training: multi-scale pseudo boxes, background filtering, mixed batches."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .geometry import QuadBox, convex_iou, min_area_rect, rasterize_polygons
from .raster import binarize, canny_edges, exact_edt, label_components, resize_bilinear
from .sasn import (
    NetParams,
    TrainConfig,
    TrainItem,
    TrainState,
    iterations_per_epoch,
    predict,
    train_epoch,
)
from .skeleton import soft_skeleton_label
from .supervision import IGNORE, NEGATIVE, POSITIVE, PixelSupervision

log = logging.getLogger(__name__)

MIN_SCALE = 32


# ---------------------------------------------------------------------------
# multi-scale inference


@dataclass(frozen=True)
class ScaleSet:
    base: int
    step: int = 32
    offsets: tuple[int, ...] = (-3, -2, -1, 0, 1, 2, 3)

    def raw(self) -> list[int]:
        return [max(MIN_SCALE, self.base + o * self.step) for o in self.offsets]

    def scales(self) -> list[int]:
        return sorted(set(self.raw()))


def scaled_dims(h: int, w: int, shorter: int) -> tuple[int, int]:
    """Resize so the shorter side is ``shorter``; both sides rounded to multiples of 8."""
    f = shorter / min(h, w)
    return max(8, int(round(h * f / 8)) * 8), max(8, int(round(w * f / 8)) * 8)


ImageSegmenter = Callable[[np.ndarray], np.ndarray]


def _as_segmenter(model) -> ImageSegmenter:
    if isinstance(model, NetParams):
        if not model.is_finite():
            raise ValueError("model parameters contain NaN or Inf")
        return lambda img: predict(model, img)[0]
    return model


QUAD_PAD = 0.1


def component_quads(scores: np.ndarray, thresh: float, min_area: int = 4) -> list[QuadBox]:
    """Min-area rectangles around each component of ``scores > thresh``.

    The rectangle is fitted to boundary pixel centers and padded by
    ``QUAD_PAD`` so the extreme centers fall strictly inside; a rasterized
    rectangle then maps back onto itself (fitting pixel corners would add the
    staircase of every slanted edge). Components one pixel thin fall back to
    pixel corners. Score is the mean score inside
    the component.
    """
    mask = binarize(scores, thresh)
    labels, n = label_components(mask)
    if n == 0:
        return []
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    sums = np.bincount(labels.ravel(), weights=scores.ravel(), minlength=n + 1)
    quads = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if counts[lab] < min_area:
            continue
        comp = labels[sl] == lab
        edge = comp & ~ndimage.binary_erosion(comp)
        r, c = np.nonzero(edge)
        r, c = r + sl[0].start, c + sl[1].start
        centers = np.column_stack([c + 0.5, r + 0.5]).astype(np.float64)
        try:
            q = min_area_rect(centers, pad=QUAD_PAD)
        except ValueError:
            corners = np.concatenate([centers + 0.5 * np.array([dx, dy]) for dx in (-1, 1) for dy in (-1, 1)])
            q = min_area_rect(corners)
        quads.append(q.with_score(float(sums[lab] / counts[lab])))
    return quads


def multiscale_infer(
    model,
    img: np.ndarray,
    scales: ScaleSet | Sequence[int],
    thresh: float = 0.5,
    min_area: int = 4,
) -> list[QuadBox]:
    """Quads from every scale, mapped back to the input's coordinates."""
    segment = _as_segmenter(model)
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    sizes = scales.scales() if isinstance(scales, ScaleSet) else sorted(set(scales))
    out: list[QuadBox] = []
    for s in sizes:
        nh, nw = scaled_dims(h, w, s)
        x = resize_bilinear(img, nw, nh)
        scores = np.asarray(segment(x), dtype=np.float64)
        sx, sy = w / nw, h / nh
        for q in component_quads(scores, thresh, min_area):
            v = q.vertices * np.array([sx, sy])
            out.append(QuadBox(v, q.score))
    return out


# ---------------------------------------------------------------------------
# locality-aware NMS


def _align(ref: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cyclic shift of ``v`` whose vertices best correspond to ``ref``."""
    best = min(range(4), key=lambda k: float(((np.roll(v, -k, axis=0) - ref) ** 2).sum()))
    return np.roll(v, -best, axis=0)


def merge_quads(a: QuadBox, b: QuadBox) -> QuadBox:
    """Score-weighted vertex average; the merged score is the score sum."""
    total = a.score + b.score
    vb = _align(a.vertices, b.vertices)
    if total > 0:
        v = (a.score * a.vertices + b.score * vb) / total
    else:
        v = 0.5 * (a.vertices + vb)
    try:
        return QuadBox(v, total)
    except ValueError:
        # averaging can (rarely) break convexity; keep the stronger quad's shape
        return QuadBox((a if a.score >= b.score else b).vertices, total)


def _top_key(q: QuadBox):
    i = int(np.argmin(q.vertices[:, 1]))
    return (float(q.vertices[i, 1]), float(q.vertices[i, 0]))


def locality_merge(quads: Sequence[QuadBox], iou_merge: float = 0.5) -> list[QuadBox]:
    """Phase 1: merge runs of neighbors in top-vertex order."""
    order = sorted(range(len(quads)), key=lambda i: (_top_key(quads[i]), i))
    out: list[QuadBox] = []
    cur = None
    for i in order:
        q = quads[i]
        if cur is not None and convex_iou(cur.vertices, q.vertices) > iou_merge:
            cur = merge_quads(cur, q)
        else:
            if cur is not None:
                out.append(cur)
            cur = q
    if cur is not None:
        out.append(cur)
    return out


def greedy_nms(quads: Sequence[QuadBox], iou_thresh: float = 0.5) -> list[QuadBox]:
    """Phase 2: standard NMS by descending score (ties keep input order)."""
    order = sorted(range(len(quads)), key=lambda i: (-quads[i].score, i))
    keep: list[QuadBox] = []
    for i in order:
        q = quads[i]
        if all(convex_iou(q.vertices, k.vertices) <= iou_thresh for k in keep):
            keep.append(q)
    return keep


def locality_aware_nms(quads: Sequence[QuadBox], iou_merge: float = 0.5) -> list[QuadBox]:
    return greedy_nms(locality_merge(quads, iou_merge), iou_merge)


# ---------------------------------------------------------------------------
# pixel supervision


def background_filter(img: np.ndarray, sigma: float = 0.1, low: float = 0.1, high: float = 0.3) -> np.ndarray:
    """Confident background: pixels whose normalized distance to any edge exceeds ``sigma``."""
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must be in (0, 1)")
    edges = canny_edges(img, low, high)
    if not edges.any():
        log.info("background filter: no edges found, whole image is background")
        return np.ones(edges.shape, dtype=bool)
    t = exact_edt(~edges)
    t /= t.max()
    return t > sigma


def build_pixel_supervision(
    quads: Sequence[QuadBox], bg: np.ndarray | None, width: int, height: int
) -> PixelSupervision:
    """Positive inside any quad; negative on background not covered by a quad; ignore elsewhere."""
    pos = rasterize_polygons([q.vertices for q in quads], width, height)
    states = np.full((height, width), IGNORE, dtype=np.uint8)
    if bg is not None:
        bg = np.asarray(bg, dtype=bool)
        if bg.shape != (height, width):
            raise ValueError(f"background mask shape {bg.shape} != {(height, width)}")
        states[bg] = NEGATIVE
    states[pos] = POSITIVE
    return PixelSupervision(states)


def component_skeleton(positive: np.ndarray) -> np.ndarray:
    """Soft skeleton target treating each positive component as one instance."""
    labels, n = label_components(positive)
    if n == 0:
        return np.zeros(positive.shape)
    return soft_skeleton_label([labels == k for k in range(1, n + 1)]).map


# ---------------------------------------------------------------------------
# mixed batches


@dataclass(frozen=True)
class BatchPlan:
    epoch: int
    max_epoch: int
    tau: int
    alpha: int
    beta: int


def mixed_batch_plan(epoch: int, max_epoch: int, tau: int) -> BatchPlan:
    """``alpha = floor(epoch / max_epoch * tau)`` labeled, the rest unlabeled."""
    if max_epoch <= 0:
        raise ValueError("max_epoch must be >= 1")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not 0 <= epoch <= max_epoch:
        raise ValueError(f"epoch {epoch} outside [0, {max_epoch}]")
    alpha = min(max((epoch * tau) // max_epoch, 0), tau)
    return BatchPlan(epoch, max_epoch, tau, alpha, tau - alpha)


def dmt_loss(labeled_losses: Sequence[float], pseudo_losses: Sequence[float]) -> float:
    """``mean(L1) + mean(L2)``; an empty side contributes 0."""
    a = sum(labeled_losses) / len(labeled_losses) if labeled_losses else 0.0
    b = sum(pseudo_losses) / len(pseudo_losses) if pseudo_losses else 0.0
    return a + b


# ---------------------------------------------------------------------------
# training loop


@dataclass
class DSTConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sigma: float = 0.1
    psi: int = 32
    base_scale: int | None = None  # default: the image's shorter side
    offsets: tuple[int, ...] = (-3, -2, -1, 0, 1, 2, 3)
    thresh: float = 0.5
    iou_merge: float = 0.5
    min_area: int = 4
    multiscale: bool = True
    filtering: bool = True
    dynamic: bool = True
    fixed_alpha: int | None = None  # labeled count per batch when not dynamic
    regen_every: int = 1

    @property
    def tau(self) -> int:
        return self.train.batch_size


def scale_set_for(img_shape, cfg: DSTConfig) -> ScaleSet:
    base = cfg.base_scale or min(img_shape)
    offsets = cfg.offsets if cfg.multiscale else (0,)
    return ScaleSet(base, cfg.psi, tuple(offsets))


def pseudo_supervision(model, img: np.ndarray, cfg: DSTConfig, bg: np.ndarray | None = None) -> PixelSupervision:
    h, w = img.shape
    quads = multiscale_infer(model, img, scale_set_for(img.shape, cfg), cfg.thresh, cfg.min_area)
    quads = locality_aware_nms(quads, cfg.iou_merge)
    if not cfg.filtering:
        # plain self-training: everything outside the pseudo boxes is background
        bg = np.ones((h, w), dtype=bool)
    elif bg is None:
        bg = background_filter(img, cfg.sigma)
    return build_pixel_supervision(quads, bg, w, h)


def alpha_for(epoch: int, cfg: DSTConfig, n_labeled: int, n_unlabeled: int) -> int:
    tau = cfg.tau
    if n_unlabeled == 0:
        return tau
    if n_labeled == 0:
        return 0
    if cfg.dynamic:
        return mixed_batch_plan(epoch, cfg.train.epochs, tau).alpha
    if cfg.fixed_alpha is not None:
        return min(max(cfg.fixed_alpha, 0), tau)
    # proportional to pool sizes, i.e. uniform sampling from the union
    return min(max(int(round(tau * n_labeled / (n_labeled + n_unlabeled))), 1), tau - 1)


def dst_train(
    labeled: Sequence[TrainItem],
    unlabeled: Sequence[np.ndarray],
    model0: NetParams,
    cfg: DSTConfig,
    validate: Callable[[NetParams], dict] | None = None,
    log_path=None,
    history: list | None = None,
) -> NetParams:
    """Iterative self-training from ``model0``.

    Every ``regen_every`` epochs the current model relabels all unlabeled
    images; the epoch then runs mixed batches of ``alpha`` labeled and
    ``beta`` pseudo-labeled crops.
    """
    tcfg = cfg.train
    params = model0.copy()
    params.reset_momentum()
    n_l, n_u = len(labeled), len(unlabeled)
    if n_u == 0:
        log.info("dst: no unlabeled images, running supervised fine-tuning")
    if n_l == 0 and n_u == 0:
        raise ValueError("dst_train needs labeled or unlabeled data")
    n_iters = iterations_per_epoch(n_l + n_u, tcfg.batch_size)
    max_iter = n_iters * tcfg.epochs
    state = TrainState(tcfg.seed, n_l, n_u)
    bg_cache: dict[int, np.ndarray] = {}
    pseudo: list[TrainItem] = []
    fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(tcfg.epochs):
            alpha = alpha_for(epoch, cfg, n_l, n_u)
            beta = tcfg.batch_size - alpha
            if n_u and epoch % cfg.regen_every == 0:
                pseudo = []
                for k, img in enumerate(unlabeled):
                    if cfg.filtering and k not in bg_cache:
                        bg_cache[k] = background_filter(img, cfg.sigma)
                    sup = pseudo_supervision(params, img, cfg, bg_cache.get(k))
                    pseudo.append(TrainItem(np.asarray(img), sup.states, component_skeleton(sup.positive)))
            stats = train_epoch(params, labeled, pseudo, alpha, beta, n_iters, state, tcfg, max_iter)
            row = {"epoch": epoch, "alpha": alpha, "beta": beta, **stats}
            if pseudo:
                row["pseudo_positive"] = float(np.mean([(p.states == POSITIVE).mean() for p in pseudo]))
                row["pseudo_negative"] = float(np.mean([(p.states == NEGATIVE).mean() for p in pseudo]))
            if validate is not None:
                row.update(validate(params))
            log.info("dst epoch %d alpha %d beta %d loss %.4f", epoch, alpha, beta, stats["loss"])
            if history is not None:
                history.append(row)
            if fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    return params


def plan_log(cfg: DSTConfig, n_labeled: int, n_unlabeled: int) -> list[dict]:
    """The batch composition dst_train will use, epoch by epoch."""
    rows = []
    for e in range(cfg.train.epochs):
        a = alpha_for(e, cfg, n_labeled, n_unlabeled)
        rows.append({"epoch": e, "alpha": a, "beta": cfg.tau - a})
    return rows


def config_dict(cfg: DSTConfig) -> dict:
    d = asdict(cfg)
    d["offsets"] = list(cfg.offsets)
    return d


__all__ = [
    "BatchPlan",
    "DSTConfig",
    "ScaleSet",
    "background_filter",
    "build_pixel_supervision",
    "dmt_loss",
    "dst_train",
    "greedy_nms",
    "locality_aware_nms",
    "locality_merge",
    "mixed_batch_plan",
    "multiscale_infer",
]
