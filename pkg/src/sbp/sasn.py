"""Miniature skeleton-attention segmentation network, numpy only.

Layout (H, W multiples of 8; channel counts from :class:`Arch`)::

    x -> stem(3x3) -> enc1(s2) = C1 (1/2) -> enc2(s2) = C2 (1/4) -> enc3(s2) = C3 (1/8)
    skeleton stream: [C1, up(C3)] -> fuse(3x3) -> head(1x1) -> sigmoid = skel (1/2)
    regular stream:  lat_i(C_i) -> skeleton attention (shared) = R_i
                     [up(R3), R2] -> dec2 -> [up(D2), R1] -> dec1 -> head -> up -> seg

The skeleton attention module multiplies a feature map by the skeleton map
resized to its scale, concatenates the maps before and after the multiply,
and reweights that concatenation with a channel-attention gate
(global average pool -> 1x1 -> sigmoid). One gate is shared by all scales.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import layers as L
from .raster import resize_bilinear
from .skeleton import skeleton_soft_loss
from .supervision import IGNORE, POSITIVE, PixelSupervision

log = logging.getLogger(__name__)

CROP_SIZE = 128
PARAMS_MAGIC = b"SASN"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class Arch:
    stem: int = 8
    enc: tuple[int, int, int] = (16, 24, 32)
    skel: int = 8
    lateral: int = 8
    dec: tuple[int, int] = (16, 8)

    @classmethod
    def tiny(cls, width: int = 2) -> "Arch":
        w = width
        return cls(stem=w, enc=(w, w, w), skel=w, lateral=w, dec=(w, w))


def param_shapes(arch: Arch) -> dict[str, tuple[int, ...]]:
    c0 = arch.stem
    c1, c2, c3 = arch.enc
    cs, d = arch.skel, arch.lateral
    e2, e1 = arch.dec
    return {
        "stem.w": (3, 3, 1, c0), "stem.b": (c0,),
        "enc1.w": (3, 3, c0, c1), "enc1.b": (c1,),
        "enc2.w": (3, 3, c1, c2), "enc2.b": (c2,),
        "enc3.w": (3, 3, c2, c3), "enc3.b": (c3,),
        "skel_fuse.w": (3, 3, c1 + c3, cs), "skel_fuse.b": (cs,),
        "skel_head.w": (cs, 1), "skel_head.b": (1,),
        "lat1.w": (c1, d), "lat1.b": (d,),
        "lat2.w": (c2, d), "lat2.b": (d,),
        "lat3.w": (c3, d), "lat3.b": (d,),
        "ca.w": (2 * d, 2 * d), "ca.b": (2 * d,),
        "dec2.w": (3, 3, 4 * d, e2), "dec2.b": (e2,),
        "dec1.w": (3, 3, e2 + 2 * d, e1), "dec1.b": (e1,),
        "seg_head.w": (e1, 1), "seg_head.b": (1,),
    }  # fmt: skip


# layers without a following ReLU get variance-preserving instead of He scaling
_LINEAR_OUT = {"skel_head.w", "seg_head.w", "ca.w", "lat1.w", "lat2.w", "lat3.w"}


@dataclass
class NetParams:
    arch: Arch
    tensors: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, t in self.tensors.items():
            if name not in self.momentum:
                self.momentum[name] = np.zeros_like(t)
            elif self.momentum[name].shape != t.shape:
                raise ValueError(f"momentum buffer for {name} has wrong shape")

    @property
    def dtype(self):
        return self.tensors["stem.w"].dtype

    def copy(self) -> "NetParams":
        return NetParams(
            self.arch,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.momentum.items()},
        )

    def reset_momentum(self) -> None:
        for v in self.momentum.values():
            v[...] = 0

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())

    def tobytes(self) -> bytes:
        return b"".join(self.tensors[k].tobytes() for k in sorted(self.tensors))


def init_params(arch: Arch | None = None, seed: int = 0, dtype=np.float32) -> NetParams:
    """Fan-in scaled normal weights from a seeded generator, zero biases."""
    arch = arch or Arch()
    rng = np.random.default_rng([seed, 0])
    tensors = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        gain = 1.0 if name in _LINEAR_OUT else 2.0
        tensors[name] = (rng.standard_normal(shape) * math.sqrt(gain / fan_in)).astype(dtype)
    return NetParams(arch, tensors)


def zero_params(arch: Arch | None = None, dtype=np.float32) -> NetParams:
    arch = arch or Arch()
    return NetParams(arch, {k: np.zeros(s, dtype) for k, s in param_shapes(arch).items()})


@dataclass
class SasnOutput:
    seg: np.ndarray  # (N, H, W) in [0, 1]
    skel: np.ndarray  # (N, H/2, W/2) in [0, 1]
    logits: np.ndarray  # (N, H, W) pre-sigmoid seg
    cache: dict = field(repr=False, default_factory=dict)
    gates: list = field(repr=False, default_factory=list)


def _attend(x, a, w, b, attention: bool):
    # skeleton attention + shared channel gate
    m = x * a[..., None] if attention else x
    u = np.concatenate([x, m], axis=-1)
    pooled = u.mean(axis=(1, 2))
    g = L.sigmoid(pooled @ w + b)
    return u * g[:, None, None, :], (x, a, u, pooled, g)


def _attend_backward(dr, cache, w, attention: bool):
    x, a, u, pooled, g = cache
    h, wd = u.shape[1:3]
    d = x.shape[-1]
    du = dr * g[:, None, None, :]
    dg = (dr * u).sum(axis=(1, 2))
    dq = dg * g * (1 - g)
    dw = pooled.T @ dq
    db = dq.sum(axis=0)
    du += (dq @ w.T)[:, None, None, :] / (h * wd)
    dx = du[..., :d].copy()
    dm = du[..., d:]
    if attention:
        dx += dm * a[..., None]
        da = (dm * x).sum(axis=-1)
    else:
        dx += dm
        da = None
    return dx, da, dw, db


def _normalize_input(params: NetParams, img) -> np.ndarray:
    x = np.asarray(img, dtype=params.dtype)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (H, W) or (N, H, W) input, got shape {x.shape}")
    h, w = x.shape[1:]
    if h < 8 or w < 8 or h % 8 or w % 8:
        raise ValueError(f"input size {h}x{w} must be a positive multiple of 8")
    return x


def forward(
    params: NetParams,
    img,
    attention: bool = True,
    skel_override: np.ndarray | None = None,
) -> SasnOutput:
    """Batched forward pass; caches activations for :func:`backward`.

    ``attention=False`` skips the attention multiply (the map passes through
    unchanged). ``skel_override`` replaces the predicted skeleton as the
    attention map, at C1 scale.
    """
    T = params.tensors
    x = _normalize_input(params, img)
    n, h, w = x.shape
    h1, w1, h2, w2, h3, w3 = h // 2, w // 2, h // 4, w // 4, h // 8, w // 8
    c = {}

    s, c["stem"] = L.conv3x3(x[..., None], T["stem.w"], T["stem.b"], 1)
    s = L.relu(s)
    c1, c["enc1"] = L.conv3x3(s, T["enc1.w"], T["enc1.b"], 2)
    c1 = L.relu(c1)
    c2, c["enc2"] = L.conv3x3(c1, T["enc2.w"], T["enc2.b"], 2)
    c2 = L.relu(c2)
    c3, c["enc3"] = L.conv3x3(c2, T["enc3.w"], T["enc3.b"], 2)
    c3 = L.relu(c3)
    c.update(s=s, c1=c1, c2=c2, c3=c3)

    k_in = np.concatenate([c1, L.resize_nhwc(c3, h1, w1)], axis=-1)
    k, c["skel_fuse"] = L.conv3x3(k_in, T["skel_fuse.w"], T["skel_fuse.b"], 1)
    k = L.relu(k)
    zs, _ = L.conv1x1(k, T["skel_head.w"], T["skel_head.b"])
    skel = L.sigmoid(zs[..., 0])
    c["k"] = k

    if skel_override is not None:
        a1 = np.broadcast_to(np.asarray(skel_override, dtype=x.dtype), skel.shape)
    else:
        a1 = skel
    a2 = L.resize_nhwc(a1[..., None], h2, w2)[..., 0]
    a3 = L.resize_nhwc(a1[..., None], h3, w3)[..., 0]

    refined, gates = [], []
    for i, (feat, a) in enumerate(((c1, a1), (c2, a2), (c3, a3)), start=1):
        lat, _ = L.conv1x1(feat, T[f"lat{i}.w"], T[f"lat{i}.b"])
        r, c[f"sa{i}"] = _attend(lat, a, T["ca.w"], T["ca.b"], attention)
        refined.append(r)
        gates.append(c[f"sa{i}"][4])
    r1, r2, r3 = refined

    d2_in = np.concatenate([L.resize_nhwc(r3, h2, w2), r2], axis=-1)
    d2, c["dec2"] = L.conv3x3(d2_in, T["dec2.w"], T["dec2.b"], 1)
    d2 = L.relu(d2)
    d1_in = np.concatenate([L.resize_nhwc(d2, h1, w1), r1], axis=-1)
    d1, c["dec1"] = L.conv3x3(d1_in, T["dec1.w"], T["dec1.b"], 1)
    d1 = L.relu(d1)
    zh, _ = L.conv1x1(d1, T["seg_head.w"], T["seg_head.b"])
    z = L.resize_nhwc(zh, h, w)[..., 0]
    c.update(d1=d1, d2=d2, skel=skel, attention=attention, override=skel_override is not None)
    return SasnOutput(L.sigmoid(z), skel, z, c, gates)


def backward(params: NetParams, out: SasnOutput, dlogits: np.ndarray, dskel: np.ndarray | None):
    """Gradients of a loss given ``dL/dlogits`` (seg) and ``dL/dskel`` (probabilities)."""
    T = params.tensors
    c = out.cache
    c1, c2, c3, s = c["c1"], c["c2"], c["c3"], c["s"]
    n, h, w = dlogits.shape
    h1, w1, h2, w2, h3, w3 = h // 2, w // 2, h // 4, w // 4, h // 8, w // 8
    e2 = T["dec2.w"].shape[3]
    dd = T["lat1.w"].shape[1] * 2
    g = {}

    dzh = L.resize_nhwc_backward(dlogits[..., None].astype(params.dtype), (h1, w1))
    dd1, g["seg_head.w"], g["seg_head.b"] = L.conv1x1_backward(dzh, c["d1"], T["seg_head.w"])
    dd1 = L.relu_backward(dd1, c["d1"])
    dd1_in, g["dec1.w"], g["dec1.b"] = L.conv3x3_backward(dd1, c["dec1"])
    dd2 = L.resize_nhwc_backward(dd1_in[..., :e2], (h2, w2))
    dr1 = dd1_in[..., e2:]
    dd2 = L.relu_backward(dd2, c["d2"])
    dd2_in, g["dec2.w"], g["dec2.b"] = L.conv3x3_backward(dd2, c["dec2"])
    dr3 = L.resize_nhwc_backward(dd2_in[..., :dd], (h3, w3))
    dr2 = dd2_in[..., dd:]

    attention = c["attention"]
    g["ca.w"] = np.zeros_like(T["ca.w"])
    g["ca.b"] = np.zeros_like(T["ca.b"])
    da1 = np.zeros((n, h1, w1), dtype=params.dtype)
    dfeat = {}
    for i, dr, feat, hw in ((1, dr1, c1, (h1, w1)), (2, dr2, c2, (h2, w2)), (3, dr3, c3, (h3, w3))):
        dlat, da, dw, db = _attend_backward(dr, c[f"sa{i}"], T["ca.w"], attention)
        g["ca.w"] += dw
        g["ca.b"] += db
        if da is not None:
            da1 += da if i == 1 else L.resize_nhwc_backward(da[..., None], (h1, w1))[..., 0]
        dfeat[i], g[f"lat{i}.w"], g[f"lat{i}.b"] = L.conv1x1_backward(dlat, feat, T[f"lat{i}.w"])

    skel = c["skel"]
    dsk = np.zeros_like(skel) if dskel is None else dskel.astype(params.dtype)
    if attention and not c["override"]:
        dsk = dsk + da1
    dzs = (dsk * skel * (1 - skel))[..., None]
    dk, g["skel_head.w"], g["skel_head.b"] = L.conv1x1_backward(dzs, c["k"], T["skel_head.w"])
    dk = L.relu_backward(dk, c["k"])
    dk_in, g["skel_fuse.w"], g["skel_fuse.b"] = L.conv3x3_backward(dk, c["skel_fuse"])
    c1_ch = c1.shape[3]
    dc1 = dfeat[1] + dk_in[..., :c1_ch]
    dc3 = dfeat[3] + L.resize_nhwc_backward(dk_in[..., c1_ch:], (h3, w3))

    dc3 = L.relu_backward(dc3, c3)
    dc2_, g["enc3.w"], g["enc3.b"] = L.conv3x3_backward(dc3, c["enc3"])
    dc2 = L.relu_backward(dfeat[2] + dc2_, c2)
    dc1_, g["enc2.w"], g["enc2.b"] = L.conv3x3_backward(dc2, c["enc2"])
    dc1 = L.relu_backward(dc1 + dc1_, c1)
    ds, g["enc1.w"], g["enc1.b"] = L.conv3x3_backward(dc1, c["enc1"])
    ds = L.relu_backward(ds, s)
    _, g["stem.w"], g["stem.b"] = L.conv3x3_backward(ds, c["stem"], need_dx=False)
    return {k: v.astype(params.dtype, copy=False) for k, v in g.items()}


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    epochs: int = 16
    poly_power: float = 0.9
    seed: int = 0
    lambda_seg: float = 1.0
    lambda_ske: float = 1.0
    skel_reduction: str = "mean"
    crop_size: int = CROP_SIZE
    attention: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def softplus(z):
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def downsample_target(t: np.ndarray, h: int, w: int) -> np.ndarray:
    return resize_bilinear(np.asarray(t, dtype=np.float64), w, h)


def losses_and_grads(
    params: NetParams,
    images: np.ndarray,
    states: np.ndarray,
    skel_targets: np.ndarray,
    sample_weights: Sequence[float],
    cfg: TrainConfig,
    attention: bool | None = None,
):
    """Weighted batch loss ``sum_i w_i * (l_seg * L_seg_i + l_ske * L_ske_i)``.

    ``L_seg`` is the per-image mean BCE over non-ignored pixels; ``L_ske`` is
    the soft skeleton loss at C1 scale with ignore regions down-weighted.
    Returns ``(total, per_sample, grads)``; ``per_sample`` holds
    ``(seg_loss, skel_loss, n_valid)`` tuples.
    """
    attention = cfg.attention if attention is None else attention
    out = forward(params, images, attention=attention)
    z = out.logits.astype(np.float64)
    n, h, w = z.shape
    h1, w1 = h // 2, w // 2
    pos = states == POSITIVE
    valid = states != IGNORE
    n_valid = valid.reshape(n, -1).sum(axis=1)
    dz = np.zeros_like(z)
    dskel = np.zeros((n, h1, w1))
    total = 0.0
    per_sample = []
    skel = out.skel.astype(np.float64)
    for i in range(n):
        wi = float(sample_weights[i])
        seg_loss = 0.0
        if n_valid[i] > 0:
            bce = softplus(z[i]) - pos[i] * z[i]
            seg_loss = float(bce[valid[i]].sum() / n_valid[i])
            prob = out.seg[i].astype(np.float64)
            dz[i] = (prob - pos[i]) * valid[i] / n_valid[i] * (wi * cfg.lambda_seg)
        st = skel_targets[i]
        if st.shape != (h1, w1):
            st = downsample_target(st, h1, w1)
        vw = downsample_target(valid[i].astype(np.float64), h1, w1)
        ske_loss, gsk = skeleton_soft_loss(skel[i], st, reduction=cfg.skel_reduction, weights=vw)
        dskel[i] = gsk * (wi * cfg.lambda_ske)
        total += wi * (cfg.lambda_seg * seg_loss + cfg.lambda_ske * ske_loss)
        per_sample.append((seg_loss, ske_loss, int(n_valid[i])))
    grads = backward(params, out, dz, dskel)
    return total, per_sample, grads


def sasn_forward(params: NetParams, img, attention: bool = True) -> SasnOutput:
    """Single-image forward; returns unbatched ``seg`` and ``skel`` maps."""
    x = np.asarray(img)
    if x.ndim != 2:
        raise ValueError("sasn_forward expects a single 2-D image")
    out = forward(params, x, attention=attention)
    return SasnOutput(out.seg[0], out.skel[0], out.logits[0], out.cache, out.gates)


def sasn_backward(
    params: NetParams,
    img,
    seg_target: PixelSupervision,
    skel_target,
    cfg: TrainConfig | None = None,
    attention: bool | None = None,
):
    """Loss and exact gradients for one image."""
    cfg = cfg or TrainConfig()
    states = seg_target.states if isinstance(seg_target, PixelSupervision) else np.asarray(seg_target)
    if not (states != IGNORE).any():
        raise ValueError("every pixel of the segmentation target is ignored")
    st = getattr(skel_target, "map", skel_target)
    loss, _, grads = losses_and_grads(
        params, np.asarray(img)[None], states[None], np.asarray(st)[None], [1.0], cfg, attention
    )
    return loss, grads


def poly_lr(lr0: float, it: int, max_iter: int, power: float = 0.9) -> float:
    frac = min(max(it / max_iter, 0.0), 1.0) if max_iter > 0 else 1.0
    return lr0 * (1.0 - frac) ** power


def sgd_step(params: NetParams, grads: dict, cfg: TrainConfig, it: int, max_iter: int) -> NetParams:
    """Momentum SGD with weight decay and the poly learning-rate schedule (in place)."""
    lr = poly_lr(cfg.learning_rate, it, max_iter, cfg.poly_power)
    for name, w in params.tensors.items():
        gr = grads[name]
        if gr.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        v = params.momentum[name]
        v *= cfg.momentum
        v += gr
        if cfg.weight_decay:
            v += cfg.weight_decay * w
        w -= w.dtype.type(lr) * v
    return params


@dataclass
class TrainItem:
    """A training image with its pixel supervision and soft skeleton target."""

    image: np.ndarray
    states: np.ndarray
    skeleton: np.ndarray

    def __post_init__(self):
        if not (self.image.shape == self.states.shape == self.skeleton.shape):
            raise ValueError("train item layers must share one shape")


class PoolSampler:
    """Seeded sampling without replacement that reshuffles on exhaustion."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self._order: list[int] = []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self._order:
                self._order = list(self.rng.permutation(self.size))
            out.append(int(self._order.pop()))
        return out


def crop_item(item: TrainItem, size: int, rng: np.random.Generator):
    h, w = item.image.shape
    if h < size or w < size:
        raise ValueError(f"train image {h}x{w} is smaller than crop size {size}")
    r = int(rng.integers(0, h - size + 1)) if h > size else 0
    c = int(rng.integers(0, w - size + 1)) if w > size else 0
    sl = np.s_[r : r + size, c : c + size]
    return item.image[sl], item.states[sl], item.skeleton[sl]


@dataclass
class TrainState:
    """Iteration counter and per-pool samplers for one training run."""

    seed: int
    n_labeled: int
    n_pseudo: int
    iteration: int = 0
    labeled: PoolSampler = None
    pseudo: PoolSampler = None

    def __post_init__(self):
        self.labeled = PoolSampler(self.n_labeled, np.random.default_rng([self.seed, 1]))
        self.pseudo = PoolSampler(self.n_pseudo, np.random.default_rng([self.seed, 2]))


def iterations_per_epoch(n_items: int, batch_size: int) -> int:
    return max(1, math.ceil(n_items / batch_size))


def train_epoch(
    params: NetParams,
    labeled: Sequence[TrainItem],
    pseudo: Sequence[TrainItem],
    alpha: int,
    beta: int,
    n_iters: int,
    state: TrainState,
    cfg: TrainConfig,
    max_iter: int,
) -> dict:
    """One epoch of mixed batches: ``alpha`` labeled + ``beta`` pseudo items each.

    Each batch is weighted per the mixed loss: labeled items by ``1/alpha``,
    pseudo items by ``1/beta``. An empty side contributes nothing.
    """
    if alpha and not labeled:
        raise ValueError("batch plan asks for labeled items but none exist")
    if beta and not pseudo:
        raise ValueError("batch plan asks for pseudo items but none exist")
    sums = {"loss": 0.0, "labeled_loss": 0.0, "pseudo_loss": 0.0}
    for _ in range(n_iters):
        imgs, sts, sks, wts = [], [], [], []
        for pool, sampler, k in ((labeled, state.labeled, alpha), (pseudo, state.pseudo, beta)):
            for idx in sampler.take(k):
                im, st, sk = crop_item(pool[idx], cfg.crop_size, sampler.rng)
                imgs.append(im)
                sts.append(st)
                sks.append(sk)
                wts.append(1.0 / k)
        total, per, grads = losses_and_grads(
            params, np.stack(imgs), np.stack(sts), np.stack(sks), wts, cfg
        )
        sgd_step(params, grads, cfg, state.iteration, max_iter)
        state.iteration += 1
        sums["loss"] += total
        seg_terms = [cfg.lambda_seg * s + cfg.lambda_ske * k for s, k, _ in per]
        if alpha:
            sums["labeled_loss"] += float(np.mean(seg_terms[:alpha]))
        if beta:
            sums["pseudo_loss"] += float(np.mean(seg_terms[alpha:]))
        if not np.isfinite(total):
            raise FloatingPointError("training diverged (non-finite loss)")
    return {k: v / n_iters for k, v in sums.items()}


def train_supervised(
    items: Sequence[TrainItem],
    cfg: TrainConfig,
    init: NetParams | None = None,
    arch: Arch | None = None,
    history: list | None = None,
) -> NetParams:
    """Plain supervised training; every batch is all-labeled."""
    if not items:
        raise ValueError("cannot train on an empty dataset")
    params = init.copy() if init is not None else init_params(arch, cfg.seed)
    params.reset_momentum()
    n_iters = iterations_per_epoch(len(items), cfg.batch_size)
    max_iter = n_iters * cfg.epochs
    state = TrainState(cfg.seed, len(items), 0)
    for epoch in range(cfg.epochs):
        stats = train_epoch(params, items, [], cfg.batch_size, 0, n_iters, state, cfg, max_iter)
        log.info("epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, stats["loss"])
        if history is not None:
            history.append({"epoch": epoch, **stats})
    return params


def train_sasn(dataset: Sequence[TrainItem], cfg: TrainConfig, arch: Arch | None = None, history=None) -> NetParams:
    """Train the segmenter on box crops (each item is one 128x128 crop)."""
    return train_supervised(dataset, cfg, arch=arch, history=history)


def predict(params: NetParams, images, batch_size: int = 8, attention: bool = True) -> np.ndarray:
    """Segmentation scores for a stack of equally sized images."""
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    outs = []
    for i in range(0, len(images), batch_size):
        outs.append(forward(params, images[i : i + batch_size], attention=attention).seg)
    return np.concatenate(outs, axis=0)


def save_params(path, params: NetParams) -> None:
    records = [(k, params.tensors[k]) for k in sorted(params.tensors)]
    records += [(f"momentum/{k}", params.momentum[k]) for k in sorted(params.momentum)]
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC + struct.pack("<II", PARAMS_VERSION, len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path) -> NetParams:
    buf = Path(path).read_bytes()
    if buf[:4] != PARAMS_MAGIC:
        raise ValueError(f"{path}: not a SASN parameter file")
    version, count = struct.unpack("<II", buf[4:12])
    if version != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    tensors, momentum = {}, {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", buf[pos : pos + 4])
        name = buf[pos + 4 : pos + 4 + nlen].decode("utf-8")
        pos += 4 + nlen
        (rank,) = struct.unpack("<I", buf[pos : pos + 4])
        dims = struct.unpack(f"<{rank}I", buf[pos + 4 : pos + 4 + 4 * rank])
        pos += 4 + 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
        if name.startswith("momentum/"):
            momentum[name[len("momentum/") :]] = arr
        else:
            tensors[name] = arr
    arch = Arch(
        stem=tensors["stem.w"].shape[3],
        enc=tuple(tensors[f"enc{i}.w"].shape[3] for i in (1, 2, 3)),
        skel=tensors["skel_fuse.w"].shape[3],
        lateral=tensors["lat1.w"].shape[1],
        dec=(tensors["dec2.w"].shape[3], tensors["dec1.w"].shape[3]),
    )
    expected = param_shapes(arch)
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise ValueError(f"{path}: tensor {name} missing or mis-shaped")
    return NetParams(arch, tensors, momentum)
