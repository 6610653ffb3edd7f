"""Miniature text detector: the segmentation network trained on full scenes.

Predictions are binarized score maps turned into polygons. Any label source
works for training: ground-truth polygons, boxes used as polygons, or
pseudo polygons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bbs import DP_EPSILON, MIN_AREA, mask_to_polygons
from .evaluation import PRF, score_dataset
from .geometry import rasterize_polygon
from .sasn import Arch, NetParams, TrainConfig, TrainItem, predict, train_supervised
from .skeleton import soft_skeleton_label
from .supervision import PixelSupervision

LABEL_SOURCES = ("gt", "box", "pseudo")


@dataclass
class DetectorConfig:
    thresh: float = 0.5
    min_area: float = MIN_AREA
    epsilon: float = DP_EPSILON


def instance_skeleton(masks: Sequence[np.ndarray], shape) -> np.ndarray:
    """Soft skeleton of possibly overlapping masks (earlier masks win shared pixels)."""
    taken = np.zeros(shape, dtype=bool)
    parts = []
    for m in masks:
        m = np.asarray(m, dtype=bool) & ~taken
        if m.any():
            parts.append(m)
            taken |= m
    return soft_skeleton_label(parts, shape=shape).map


def label_polygons(sample, source: str, pseudo=None) -> list[np.ndarray]:
    if source == "gt":
        return sample.polygons
    if source == "box":
        return [b.as_polygon() for b in sample.boxes]
    if source == "pseudo":
        if pseudo is None:
            raise ValueError("pseudo label source needs pseudo polygons")
        return list(pseudo)
    raise ValueError(f"unknown label source {source!r}; expected one of {LABEL_SOURCES}")


def detector_items(samples, source: str = "gt", pseudo=None) -> list[TrainItem]:
    """Training items from whole scenes; ``pseudo`` holds per-sample polygon lists."""
    items = []
    for i, s in enumerate(samples):
        h, w = s.image.shape
        polys = label_polygons(s, source, None if pseudo is None else pseudo[i])
        masks = [rasterize_polygon(p, w, h) for p in polys]
        union = np.zeros((h, w), dtype=bool)
        for m in masks:
            union |= m
        items.append(TrainItem(s.image, PixelSupervision.from_mask(union).states, instance_skeleton(masks, (h, w))))
    return items


def train_detector(items, cfg: TrainConfig, init: NetParams | None = None, arch: Arch | None = None, history=None):
    return train_supervised(items, cfg, init=init, arch=arch, history=history)


def predict_polygons(params: NetParams, images, cfg: DetectorConfig | None = None) -> list[list[np.ndarray]]:
    cfg = cfg or DetectorConfig()
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    scores = predict(params, images)
    return [mask_to_polygons(s > cfg.thresh, cfg.min_area, cfg.epsilon) for s in scores]


def evaluate_detector(params: NetParams, samples, cfg: DetectorConfig | None = None) -> PRF:
    preds = predict_polygons(params, np.stack([s.image for s in samples]), cfg)
    return score_dataset(preds, [s.polygons for s in samples])
