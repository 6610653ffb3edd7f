"""Soft skeleton targets and the soft skeleton loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import exact_edt

LOSS_EPS = 1e-6


@dataclass
class SkeletonLabel:
    """Distance-to-background map normalized per text instance."""

    map: np.ndarray
    instance_count: int


def soft_skeleton_label(
    instance_masks: Sequence[np.ndarray],
    shape: tuple[int, int] | None = None,
    normalize: str = "instance",
) -> SkeletonLabel:
    """Build the soft skeleton label from non-overlapping instance masks.

    Each instance contributes ``edt(mask) / d_max``. With ``normalize="instance"``
    ``d_max`` is the instance's own maximum distance, so every instance peaks at
    exactly 1.0; ``normalize="image"`` divides by the maximum over all instances.
    """
    if normalize not in ("instance", "image"):
        raise ValueError(f"normalize must be 'instance' or 'image', got {normalize!r}")
    masks = [np.asarray(m, dtype=bool) for m in instance_masks]
    if not masks:
        if shape is None:
            raise ValueError("shape is required when there are no instances")
        return SkeletonLabel(np.zeros(shape, dtype=np.float64), 0)
    shape = masks[0].shape
    occupied = np.zeros(shape, dtype=bool)
    dists = []
    for i, m in enumerate(masks):
        if m.shape != shape:
            raise ValueError(f"instance {i} has shape {m.shape}, expected {shape}")
        if not m.any():
            raise ValueError(f"instance {i} is empty")
        if (occupied & m).any():
            raise ValueError(f"instance {i} overlaps an earlier instance")
        occupied |= m
        dists.append(exact_edt(m))
    out = np.zeros(shape, dtype=np.float64)
    if normalize == "instance":
        for d in dists:
            out += d / d.max()
    else:
        top = max(d.max() for d in dists)
        for d in dists:
            out += d / top
    return SkeletonLabel(out, len(masks))


def skeleton_soft_loss(
    pred: np.ndarray,
    label,
    reduction: str = "sum",
    weights: np.ndarray | None = None,
    eps: float = LOSS_EPS,
) -> tuple[float, np.ndarray]:
    """Soft cross-entropy ``-sum log(1 - |p - F|)`` and its gradient in ``F``.

    ``|p - F|`` is clamped to ``1 - eps``. The gradient is
    ``sign(F - p) / (1 - |p - F|)`` with the clamped difference in the
    denominator, and 0 where ``F == p``. ``weights`` (optional, same shape)
    scale each pixel's term; ``reduction="mean"`` divides by the total weight.
    """
    target = label.map if isinstance(label, SkeletonLabel) else np.asarray(label)
    pred = np.asarray(pred)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs label {target.shape}")
    diff = pred - target
    gap = np.minimum(np.abs(diff), 1.0 - eps)
    per_pixel = -np.log1p(-gap)
    grad = np.sign(diff) / (1.0 - gap)
    if weights is not None:
        per_pixel = per_pixel * weights
        grad = grad * weights
    loss = float(per_pixel.sum())
    if reduction == "mean":
        total = float(weights.sum()) if weights is not None else float(pred.size)
        if total <= 0:
            return 0.0, np.zeros_like(grad)
        loss /= total
        grad = grad / total
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss, grad
