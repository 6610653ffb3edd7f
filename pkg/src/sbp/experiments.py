"""Desk-scale experiments on the synthetic corpus.

Each runner takes a small dataclass config and returns a plain dict of
numbers so scripts and the acceptance suite can share them.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bbs import BBSConfig, generate_pseudo_labels, instance_crop_items
from .detector import DetectorConfig, detector_items, evaluate_detector, train_detector
from .dst import DSTConfig, dst_train
from .evaluation import mean_mask_iou
from .sasn import Arch, TrainConfig, iterations_per_epoch, predict, train_sasn, train_supervised
from .supervision import POSITIVE
from .synthdata import GenConfig, generate_dataset, generate_sample, split_dataset

log = logging.getLogger(__name__)

# corpus seeds are offset so train, test and segmenter data never coincide
SEG_TRAIN_SEED = 1000
SEG_TEST_SEED = 5000
TEST_SEED = 9000
VAL_SEED = 7000


def _crops(seed: int, n: int, curved_fraction: float = 0.5) -> list:
    """The first ``n`` instance crops of a fresh corpus."""
    cfg = GenConfig(seed=seed, curved_fraction=curved_fraction)
    items: list = []
    index = 0
    while len(items) < n:
        items.extend(instance_crop_items([generate_sample(cfg, index)]))
        index += 1
    return items[:n]


# ---------------------------------------------------------------------------
# segmenter with / without skeleton attention


@dataclass
class AttentionExperiment:
    seed: int = 0
    n_train: int = 200
    n_test: int = 50
    epochs: int = 30


def run_attention_ablation(cfg: AttentionExperiment) -> dict:
    train = _crops(SEG_TRAIN_SEED + cfg.seed, cfg.n_train)
    test = _crops(SEG_TEST_SEED, cfg.n_test)
    images = np.stack([it.image for it in test])
    truth = [it.states == POSITIVE for it in test]
    out = {"seed": cfg.seed}
    for name, att in (("attention", True), ("ones", False)):
        t0 = time.perf_counter()
        params = train_sasn(train, TrainConfig(epochs=cfg.epochs, seed=cfg.seed, attention=att))
        scores = predict(params, images, attention=att)
        out[f"iou_{name}"] = mean_mask_iou([s > 0.5 for s in scores], truth)
        out[f"seconds_{name}"] = time.perf_counter() - t0
    out["gap"] = out["iou_attention"] - out["iou_ones"]
    return out


# ---------------------------------------------------------------------------
# label quality: GT polygons vs boxes vs box-supervised pseudo polygons


@dataclass
class BBSExperiment:
    seed: int = 0
    n_train: int = 200
    n_test: int = 50
    curved_fraction: float = 0.5
    seg_crops: int = 200
    seg_epochs: int = 30
    det_epochs: int = 30
    sources: tuple[str, ...] = ("gt", "box", "pseudo")


def run_bbs_experiment(cfg: BBSExperiment) -> dict:
    t0 = time.perf_counter()
    train = generate_dataset(GenConfig(count=cfg.n_train, seed=cfg.seed, curved_fraction=cfg.curved_fraction))
    test = generate_dataset(GenConfig(count=cfg.n_test, seed=TEST_SEED + cfg.seed, curved_fraction=cfg.curved_fraction))
    seg = train_sasn(_crops(SEG_TRAIN_SEED + cfg.seed, cfg.seg_crops), TrainConfig(epochs=cfg.seg_epochs, seed=cfg.seed))
    bcfg = BBSConfig()
    pseudo = [generate_pseudo_labels(s.image, s.boxes, seg, cfg=bcfg) for s in train]
    out: dict = {
        "seed": cfg.seed,
        "pseudo_mask_iou": mean_mask_iou([p.mask for p in pseudo], [s.text_mask for s in train]),
        "seconds_segmenter": time.perf_counter() - t0,
    }
    for source in cfg.sources:
        items = detector_items(train, source, [p.polygons for p in pseudo])
        det = train_detector(items, TrainConfig(epochs=cfg.det_epochs, seed=cfg.seed))
        prf = evaluate_detector(det, test)
        out[f"f_{source}"] = prf.fscore
        out[f"prf_{source}"] = prf.to_json()
    out["seconds"] = time.perf_counter() - t0
    return out


# ---------------------------------------------------------------------------
# dynamic self-training


@dataclass
class DSTExperiment:
    seed: int = 0
    n_images: int = 200
    labeled_ratio: float = 0.5
    n_test: int = 50
    n_val: int = 30
    size: int = 128
    max_instances: int = 3
    curved_fraction: float = 0.0
    clutter: int = 2
    min_gap: int = 10  # wider gaps keep neighboring ribbons from merging on 128 px scenes
    psi: int = 32
    pre_iterations: int = 520  # 40 epochs of the 50/50 split; fixed so every labeled size gets equal compute
    epochs: int = 10
    learning_rate: float = 0.01
    finetune_lr: float = 0.001  # self-training and baseline restart from a converged model
    regen_every: int = 1


# chain of self-training variants; each row adds one component to the last
VARIANTS = {
    "iter": dict(dynamic=False, multiscale=False, filtering=False),
    "dm": dict(dynamic=True, multiscale=False, filtering=False),
    "ms": dict(dynamic=True, multiscale=True, filtering=False),
    "fil": dict(dynamic=True, multiscale=True, filtering=True),
}
FULL = "fil"


@dataclass
class DSTSetup:
    cfg: DSTExperiment
    labeled: list
    unlabeled: list
    test: list
    val: list
    model0: object = None
    timings: dict = field(default_factory=dict)


def _scene_cfg(cfg: DSTExperiment, count: int, seed: int) -> GenConfig:
    return GenConfig(
        count=count,
        width=cfg.size,
        height=cfg.size,
        max_instances=cfg.max_instances,
        curved_fraction=cfg.curved_fraction,
        clutter=cfg.clutter,
        min_gap=cfg.min_gap,
        seed=seed,
    )


def dst_setup(cfg: DSTExperiment) -> DSTSetup:
    """Data split and the supervised starting model shared by every variant."""
    t0 = time.perf_counter()
    samples = generate_dataset(_scene_cfg(cfg, cfg.n_images, cfg.seed))
    labeled, unlabeled = split_dataset(samples, cfg.labeled_ratio, cfg.seed)
    test = generate_dataset(_scene_cfg(cfg, cfg.n_test, TEST_SEED + cfg.seed))
    val = generate_dataset(_scene_cfg(cfg, cfg.n_val, VAL_SEED + cfg.seed))
    setup = DSTSetup(cfg, labeled, unlabeled, test, val)
    items = detector_items(labeled, "gt")
    epochs = -(-cfg.pre_iterations // iterations_per_epoch(len(items), TrainConfig().batch_size))
    setup.model0 = train_supervised(items, _train_cfg(cfg, epochs), arch=Arch())
    setup.timings["pretrain"] = time.perf_counter() - t0
    return setup


def _train_cfg(cfg: DSTExperiment, epochs: int, lr: float | None = None) -> TrainConfig:
    return TrainConfig(epochs=epochs, seed=cfg.seed, learning_rate=lr or cfg.learning_rate, crop_size=cfg.size)


def dst_config(cfg: DSTExperiment, variant: str, **overrides) -> DSTConfig:
    knobs = dict(VARIANTS[variant], regen_every=cfg.regen_every, psi=cfg.psi)
    knobs.update(overrides)
    return DSTConfig(train=_train_cfg(cfg, cfg.epochs, cfg.finetune_lr), **knobs)


def run_dst_variant(setup: DSTSetup, variant: str | None, validate: bool = False, **overrides) -> dict:
    """``variant=None`` is the labeled-only baseline.

    The baseline fine-tunes ``model0`` on the labeled split for as many
    iterations as a self-training run takes, so neither side gets more compute.
    """
    cfg = setup.cfg
    t0 = time.perf_counter()
    labeled = detector_items(setup.labeled, "gt")
    unlabeled = [] if variant is None else [s.image for s in setup.unlabeled]
    dcfg = dst_config(cfg, variant or FULL, **overrides)
    if variant is None:
        tau = dcfg.tau
        iters = iterations_per_epoch(len(labeled) + len(setup.unlabeled), tau) * cfg.epochs
        epochs = -(-iters // iterations_per_epoch(len(labeled), tau))
        dcfg = replace(dcfg, train=replace(dcfg.train, epochs=epochs))
    val_fn = None
    if validate:
        val_fn = lambda p: {"val_f": evaluate_detector(p, setup.val).fscore}
    hist: list = []
    params = dst_train(labeled, unlabeled, setup.model0, dcfg, validate=val_fn, history=hist)
    prf = evaluate_detector(params, setup.test, DetectorConfig())
    out = {
        "variant": variant or "baseline",
        "seed": cfg.seed,
        "f": prf.fscore,
        "prf": prf.to_json(),
        "alphas": [h["alpha"] for h in hist],
        "seconds": time.perf_counter() - t0,
    }
    if validate:
        out["val_f"] = [h["val_f"] for h in hist]
    return out


def tail_std(values, fraction: float = 0.25) -> float:
    """Population std-dev over the final ``fraction`` of a series (at least 2 points)."""
    v = np.asarray(values, dtype=np.float64)
    k = max(2, int(np.ceil(fraction * len(v))))
    return float(np.std(v[-k:]))


def summary(config) -> dict:
    return asdict(config)
