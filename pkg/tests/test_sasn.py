import numpy as np
import pytest

from sbp import layers as L
from sbp.sasn import (
    Arch,
    NetParams,
    PoolSampler,
    TrainConfig,
    TrainItem,
    forward,
    init_params,
    iterations_per_epoch,
    load_params,
    param_shapes,
    poly_lr,
    predict,
    sasn_backward,
    sasn_forward,
    save_params,
    sgd_step,
    train_sasn,
    zero_params,
)
from sbp.supervision import IGNORE, NEGATIVE, POSITIVE, PixelSupervision

from oracles import rel_err, sasn_gradcheck


def test_forward_shapes_and_range(rng):
    p = init_params(seed=0)
    out = sasn_forward(p, rng.random((128, 128)))
    assert out.seg.shape == (128, 128)
    assert out.skel.shape == (64, 64)
    for a in (out.seg, out.skel):
        assert a.min() >= 0 and a.max() <= 1


def test_forward_rejects_bad_size():
    p = init_params(Arch.tiny(2))
    with pytest.raises(ValueError):
        forward(p, np.zeros((12, 16)))
    with pytest.raises(ValueError):
        sasn_forward(p, np.zeros((2, 16, 16)))


def test_zero_params_give_half():
    out = sasn_forward(zero_params(), np.random.default_rng(0).random((128, 128)))
    assert np.all(out.seg == 0.5)


def test_all_ones_attention_equals_no_attention(rng):
    p = init_params(seed=4)
    for t in p.tensors.values():
        t += rng.normal(0, 0.05, t.shape).astype(t.dtype)
    x = rng.random((2, 64, 64))
    a = forward(p, x, skel_override=np.ones((2, 32, 32)))
    b = forward(p, x, attention=False)
    assert np.abs(a.seg - b.seg).max() < 1e-6


def test_forward_deterministic(rng):
    p = init_params(seed=1)
    x = rng.random((64, 64))
    assert forward(p, x).seg.tobytes() == forward(p, x).seg.tobytes()


def test_channel_gates_in_open_interval(rng):
    p = init_params(seed=2)
    x = rng.random((2, 32, 32)) * 4 - 2
    for g in forward(p, x).gates:
        assert np.all(g > 0) and np.all(g < 1)


def test_attention_monotonicity_probe(rng):
    # nonnegative weights after the encoder make every stage monotone in the map
    p = init_params(seed=3)
    for name, t in p.tensors.items():
        if name.split(".")[0] in {"lat1", "lat2", "lat3", "ca", "dec2", "dec1", "seg_head"}:
            t[...] = np.abs(rng.normal(0, 0.2, t.shape))
    x = rng.random((1, 64, 64))
    region = np.zeros((1, 32, 32))
    region[:, 8:20, 10:24] = 1.0
    full = forward(p, x, skel_override=np.ones((1, 32, 32))).logits
    part = forward(p, x, skel_override=region).logits
    assert np.all(part <= full + 1e-6)


def test_gradients_match_finite_differences(rng):
    for _ in range(3):
        assert sasn_gradcheck(rng) < 1e-3
    assert sasn_gradcheck(rng, attention=False) < 1e-3


def test_layer_primitives_gradcheck(rng):
    x = rng.normal(size=(2, 4, 4, 3))
    w = rng.normal(size=(3, 3, 3, 2))
    b = rng.normal(size=2)
    for stride in (1, 2):
        for wt in (w, rng.normal(size=(3, 3, 3, 5))):
            out, cache = L.conv3x3(x, wt, b[: 1] * 0 + np.zeros(wt.shape[3]), stride)
            gout = rng.normal(size=out.shape)
            dx, dw, _ = L.conv3x3_backward(gout, cache)
            idx = (1, 2, 1, 0)
            h = 1e-6
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            num = ((L.conv3x3(xp, wt, np.zeros(wt.shape[3]), stride)[0] - L.conv3x3(xm, wt, np.zeros(wt.shape[3]), stride)[0]) * gout).sum() / (2 * h)
            assert rel_err(dx[idx], num) < 1e-6
            wp, wm = wt.copy(), wt.copy()
            widx = (2, 0, 1, 1)
            wp[widx] += h
            wm[widx] -= h
            num = ((L.conv3x3(x, wp, np.zeros(wt.shape[3]), stride)[0] - L.conv3x3(x, wm, np.zeros(wt.shape[3]), stride)[0]) * gout).sum() / (2 * h)
            assert rel_err(dw[widx], num) < 1e-6


def test_conv_paths_agree(rng):
    x = rng.normal(size=(2, 8, 8, 6))
    w = rng.normal(size=(3, 3, 6, 4))
    taps, _ = L._conv_taps_fwd(x, w)
    cols, _ = L._conv_cols_fwd(x, w, 1)
    assert np.allclose(taps, cols)


def test_sigmoid_stable():
    z = np.array([-1000.0, 0.0, 1000.0])
    assert np.allclose(L.sigmoid(z), [0.0, 0.5, 1.0])


def test_backward_rejects_all_ignore():
    p = init_params(Arch.tiny(2))
    with pytest.raises(ValueError):
        sasn_backward(p, np.zeros((8, 8)), PixelSupervision.ignore_all(8, 8), np.zeros((4, 4)))


def test_poly_schedule_endpoints():
    assert poly_lr(0.02, 0, 100) == 0.02
    assert poly_lr(0.02, 100, 100) == 0.0
    assert poly_lr(0.02, 50, 100) == pytest.approx(0.02 * 0.5**0.9)


def test_sgd_fixed_point_and_vanilla(rng):
    p = init_params(Arch.tiny(2), seed=0, dtype=np.float64)
    before = {k: v.copy() for k, v in p.tensors.items()}
    zeros = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    sgd_step(p, zeros, TrainConfig(weight_decay=0.0), 0, 10)
    assert all(np.array_equal(before[k], p.tensors[k]) for k in before)
    g = {k: rng.normal(size=v.shape) for k, v in p.tensors.items()}
    sgd_step(p, g, TrainConfig(momentum=0.0, weight_decay=0.0), 0, 10)
    for k in before:
        assert np.allclose(p.tensors[k], before[k] - 0.02 * g[k])


def test_sgd_momentum_and_decay():
    p = init_params(Arch.tiny(2), seed=0, dtype=np.float64)
    w0 = p.tensors["stem.w"].copy()
    g = {k: np.ones_like(v) for k, v in p.tensors.items()}
    cfg = TrainConfig(momentum=0.9, weight_decay=0.5, learning_rate=0.1, poly_power=0.9)
    sgd_step(p, g, cfg, 0, 2)
    v1 = 1 + 0.5 * w0
    w1 = w0 - 0.1 * v1
    assert np.allclose(p.tensors["stem.w"], w1)
    sgd_step(p, g, cfg, 1, 2)
    v2 = 0.9 * v1 + 1 + 0.5 * w1
    assert np.allclose(p.tensors["stem.w"], w1 - 0.1 * 0.5**0.9 * v2)


def test_train_config_validation():
    for bad in ({"learning_rate": 0}, {"momentum": 1.0}, {"weight_decay": -1}, {"batch_size": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def toy_item(seed=0, size=32):
    r = np.random.default_rng(seed)
    img = r.random((size, size)) * 0.2
    mask = np.zeros((size, size), dtype=bool)
    mask[10:20, 4:28] = True
    img[mask] += 0.7
    return TrainItem(img, PixelSupervision.from_mask(mask).states, mask.astype(float))


def test_train_memorizes_one_sample():
    item = toy_item()
    hist = []
    cfg = TrainConfig(epochs=50, batch_size=1, crop_size=32, seed=0)
    train_sasn([item], cfg, arch=Arch.tiny(4), history=hist)
    assert hist[-1]["loss"] < hist[0]["loss"]


def test_train_deterministic():
    items = [toy_item(s) for s in range(3)]
    cfg = TrainConfig(epochs=3, batch_size=2, crop_size=32, seed=7)
    a = train_sasn(items, cfg, arch=Arch.tiny(3))
    b = train_sasn(items, cfg, arch=Arch.tiny(3))
    assert a.tobytes() == b.tobytes()


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        train_sasn([], TrainConfig())


def test_train_item_shapes_checked():
    with pytest.raises(ValueError):
        TrainItem(np.zeros((8, 8)), np.zeros((8, 8), np.uint8), np.zeros((4, 4)))


def test_pool_sampler_covers_pool():
    s = PoolSampler(5, np.random.default_rng(0))
    assert sorted(s.take(5)) == list(range(5))
    assert len(s.take(7)) == 7


def test_iterations_per_epoch():
    assert iterations_per_epoch(17, 8) == 3
    assert iterations_per_epoch(0, 8) == 1


def test_params_round_trip(tmp_path):
    p = init_params(seed=5)
    p.momentum["enc1.w"][...] = 0.25
    save_params(tmp_path / "m.sasn", p)
    q = load_params(tmp_path / "m.sasn")
    assert q.arch == p.arch
    assert q.tobytes() == p.tobytes()
    assert np.all(q.momentum["enc1.w"] == 0.25)
    raw = (tmp_path / "m.sasn").read_bytes()
    assert raw[:4] == b"SASN" and int.from_bytes(raw[4:8], "little") == 1


def test_params_invalid_file(tmp_path):
    (tmp_path / "bad").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad")


def test_param_shapes_follow_arch():
    shapes = param_shapes(Arch())
    assert shapes["stem.w"] == (3, 3, 1, 8)
    assert shapes["enc1.w"] == (3, 3, 8, 16)
    assert shapes["enc3.w"] == (3, 3, 24, 32)
    assert shapes["skel_head.w"] == (8, 1)
    p = init_params()
    assert all(np.all(np.isfinite(t)) for t in p.tensors.values())
    assert set(p.momentum) == set(p.tensors)
    with pytest.raises(ValueError):
        NetParams(Arch(), {"stem.w": np.zeros(3)}, {"stem.w": np.zeros(4)})


def test_predict_matches_forward(rng):
    p = init_params(seed=0)
    x = rng.random((3, 32, 32))
    assert np.allclose(predict(p, x, batch_size=2), forward(p, x).seg, atol=1e-6)
