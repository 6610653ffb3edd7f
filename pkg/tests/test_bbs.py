import numpy as np
import pytest
from scipy import ndimage

from sbp.bbs import (
    central_component,
    crop_text_regions,
    douglas_peucker,
    generate_pseudo_labels,
    instance_crop_items,
    mask_to_polygons,
    simplify_closed,
    _trace_outer,
)
from sbp.evaluation import mask_iou
from sbp.geometry import AxisBox, rasterize_polygon, rasterize_polygons
from sbp.raster import resize_bilinear
from sbp.sasn import init_params
from sbp.synthdata import GenConfig, generate_dataset

from oracles import rect_mask_segmenter


def disk(shape, cy, cx, r):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def test_identity_crop(rng):
    img = rng.random((128, 128))
    (crop, t), = crop_text_regions(img, [AxisBox(0, 0, 128, 128)])
    assert np.array_equal(crop, img)
    assert t.scale == (1.0, 1.0)


def test_empty_boxes():
    assert crop_text_regions(np.zeros((8, 8)), []) == []
    lab = generate_pseudo_labels(np.zeros((8, 8)), [], lambda c: c)
    assert lab.polygons == [] and not lab.mask.any()


def test_crop_round_trip():
    yy, xx = np.mgrid[:64, :96]
    img = 0.5 + 0.4 * np.sin(xx / 9.0) * np.cos(yy / 7.0)
    (crop, _), = crop_text_regions(img, [AxisBox(10, 20, 74, 52)])
    back = resize_bilinear(crop, 64, 32)
    assert np.abs(back - img[20:52, 10:74]).max() < 0.05


def test_zero_area_and_out_of_bounds(caplog):
    img = np.zeros((20, 20))
    with pytest.raises(ValueError, match="box 1"):
        crop_text_regions(img, [AxisBox(0, 0, 5, 5), (3, 3, 3, 9)])
    with pytest.raises(ValueError, match="outside"):
        crop_text_regions(img, [AxisBox(-5, 0, 5, 5)])
    out = crop_text_regions(img, [AxisBox(-1.5, 0, 5, 5)])
    assert len(out) == 1 and out[0][1].source_box.x0 == 0.0
    assert any("clamped" in r.message for r in caplog.records)


def test_trace_is_exact(rng):
    for _ in range(30):
        m = rng.random((12, 14)) < 0.55
        labels, n = ndimage.label(m, np.ones((3, 3)))
        for k in range(1, n + 1):
            comp = labels == k
            filled = ndimage.binary_fill_holes(comp)
            poly = _trace_outer(comp)
            got = rasterize_polygon(poly, 14, 12)
            # the outer contour covers the component with its holes filled
            assert np.array_equal(got & ~filled, np.zeros_like(comp))
            assert np.array_equal(got | comp, got)


def test_empty_mask():
    assert mask_to_polygons(np.zeros((10, 10), dtype=bool)) == []


def test_square():
    m = np.zeros((20, 20), dtype=bool)
    m[5:15, 5:15] = True
    polys = mask_to_polygons(m)
    assert len(polys) == 1
    assert mask_iou(rasterize_polygon(polys[0], 20, 20), m) >= 0.95


def test_two_blobs():
    m = np.zeros((40, 60), dtype=bool)
    m[5:17, 4:24] = True
    m |= disk(m.shape, 25, 42, 10)
    polys = mask_to_polygons(m)
    assert len(polys) == 2
    labels, _ = ndimage.label(m)
    for p in polys:
        r = rasterize_polygon(p, 60, 40)
        k = np.bincount(labels[r]).argmax()
        assert mask_iou(r, labels == k) >= 0.9


def test_min_area_drops_small():
    m = np.zeros((20, 20), dtype=bool)
    m[1:4, 1:4] = True
    m[10:18, 10:18] = True
    assert len(mask_to_polygons(m, min_area=16)) == 1
    assert len(mask_to_polygons(m, min_area=1)) == 2


def test_douglas_peucker_collinear():
    pts = np.array([[0, 0], [1, 0.1], [2, -0.1], [3, 0], [4, 5]], dtype=float)
    out = douglas_peucker(pts, 0.5)
    assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
    assert [1, 0.1] not in out.tolist()
    closed = simplify_closed(np.array([[0, 0], [1, 0], [2, 0], [2, 2], [0, 2]], dtype=float), 0.1)
    assert len(closed) == 4


def test_central_component():
    m = np.zeros((40, 40), dtype=bool)
    m[0:5, 0:30] = True  # big but off-center
    m[18:22, 15:25] = True
    c = central_component(m)
    assert c[20, 20] and not c[0, 0]
    assert not central_component(np.zeros((8, 8), dtype=bool)).any()


def rect_scene():
    img = np.full((96, 128), 0.2)
    polys = [
        np.array([[10.0, 12.0], [60, 12], [60, 30], [10, 30]]),
        np.array([[70.0, 50.0], [118, 50], [118, 70], [70, 70]]),
    ]
    for p in polys:
        img[rasterize_polygon(p, 128, 96)] = 0.9
    return img, polys


def test_oracle_segmenter_recovers_masks():
    img, polys = rect_scene()
    boxes = [AxisBox.from_polygon(p) for p in polys]
    lab = generate_pseudo_labels(img, boxes, rect_mask_segmenter(polys, boxes))
    gt = rasterize_polygons(polys, 128, 96)
    assert mask_iou(lab.mask, gt) >= 0.99
    assert lab.provenance == [0, 1]


def test_oracle_segmenter_on_synthetic_scenes():
    ious = []
    for s in generate_dataset(GenConfig(count=4, seed=11)):
        seg = rect_mask_segmenter(s.polygons, s.boxes)
        lab = generate_pseudo_labels(s.image, s.boxes, seg)
        ious.append(mask_iou(lab.mask, s.text_mask))
    assert min(ious) >= 0.9


def test_constant_segmenter_gives_boxes():
    img, polys = rect_scene()
    boxes = [AxisBox(5, 5, 45, 25), AxisBox(60, 40, 110, 80)]
    lab = generate_pseudo_labels(img, boxes, lambda c: np.full(c.shape, 0.9))
    assert len(lab.polygons) == 2
    for p, b in zip(lab.polygons, boxes):
        assert mask_iou(rasterize_polygon(p, 128, 96), rasterize_polygon(b.as_polygon(), 128, 96)) >= 0.9


def test_polygons_stay_in_boxes_and_mask_is_union(rng):
    img, polys = rect_scene()
    boxes = [AxisBox(5, 5, 45, 25), AxisBox(60, 40, 110, 80)]
    lab = generate_pseudo_labels(img, boxes, lambda c: rng.random(c.shape))
    for p, k in zip(lab.polygons, lab.provenance):
        b = boxes[k].expand(2)
        assert p[:, 0].min() >= b.x0 and p[:, 0].max() <= b.x1
        assert p[:, 1].min() >= b.y0 and p[:, 1].max() <= b.y1
    assert np.array_equal(lab.mask, rasterize_polygons(lab.polygons, 128, 96))


def test_threshold_monotone():
    s = generate_dataset(GenConfig(count=1, seed=2))[0]
    seg = lambda c: c  # bright text, darker background
    areas = [generate_pseudo_labels(s.image, s.boxes, seg, thresh=t).mask.sum() for t in (0.3, 0.5, 0.7, 0.9)]
    assert all(a >= b for a, b in zip(areas, areas[1:]))


def test_model_is_deterministic_and_nan_rejected():
    img, polys = rect_scene()
    boxes = [AxisBox.from_polygon(p) for p in polys]
    p = init_params(seed=0)
    a = generate_pseudo_labels(img, boxes, p)
    b = generate_pseudo_labels(img, boxes, p)
    assert a.mask.tobytes() == b.mask.tobytes()
    p.tensors["stem.w"][0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        generate_pseudo_labels(img, boxes, p)


def test_instance_crop_items():
    samples = generate_dataset(GenConfig(count=2, seed=1))
    items = instance_crop_items(samples)
    assert len(items) == sum(len(s.instances) for s in samples)
    for it in items:
        assert it.image.shape == (128, 128)
        assert (it.states == 255).any()
        assert it.skeleton.max() == 1.0
