import numpy as np
import pytest

from sbp.geometry import polygon_bounds, rasterize_polygon, rasterize_polygons
from sbp.skeleton import soft_skeleton_label
from sbp.synthdata import GenConfig, generate_dataset, generate_sample, split_dataset


@pytest.fixture(scope="module")
def samples():
    return generate_dataset(GenConfig(count=12, seed=3))


def test_count_zero():
    assert generate_dataset(GenConfig(count=0)) == []


def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(curved_fraction=1.5)
    with pytest.raises(ValueError):
        GenConfig(count=-1)
    with pytest.raises(ValueError):
        GenConfig(min_gap=0)


def test_straight_only():
    for s in generate_dataset(GenConfig(count=6, curved_fraction=0.0, seed=1)):
        assert all(t.shape_kind == "straight" for t in s.instances)


def test_curved_fraction_one_yields_curves():
    kinds = [t.shape_kind for s in generate_dataset(GenConfig(count=6, curved_fraction=1.0)) for t in s.instances]
    assert kinds and set(kinds) == {"curved"}


def test_same_seed_same_bytes():
    a = generate_sample(GenConfig(seed=0), 4)
    b = generate_sample(GenConfig(seed=0), 4)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.skeleton.tobytes() == b.skeleton.tobytes()
    assert all(np.array_equal(x.polygon, y.polygon) for x, y in zip(a.instances, b.instances))
    c = generate_sample(GenConfig(seed=1), 4)
    assert a.image.tobytes() != c.image.tobytes()


def test_image_range_and_quantized(samples):
    for s in samples:
        assert s.image.shape == (256, 256)
        assert s.image.min() >= 0 and s.image.max() <= 1
        assert np.array_equal(np.round(s.image * 255) / 255, s.image)


def test_instance_counts(samples):
    for s in samples:
        assert 1 <= len(s.instances) <= 4


def test_masks_are_rasterized_polygons(samples):
    for s in samples:
        for t in s.instances:
            assert np.array_equal(t.mask, rasterize_polygon(t.polygon, 256, 256))


def test_masks_disjoint(samples):
    for s in samples:
        total = sum(t.mask.astype(int) for t in s.instances)
        assert total.max() <= 1


@pytest.mark.parametrize("gap", [3, 10])
def test_min_gap_between_instances(gap):
    from scipy import ndimage

    for s in generate_dataset(GenConfig(count=6, width=128, height=128, max_instances=3, min_gap=gap, seed=5)):
        for i, a in enumerate(s.instances):
            grown = ndimage.binary_dilation(a.mask, iterations=gap)
            for b in s.instances[i + 1 :]:
                assert not (grown & b.mask).any()


def test_axis_box_tight(samples):
    for s in samples:
        for t in s.instances:
            assert t.axis_box.as_list() == pytest.approx(list(polygon_bounds(t.polygon)), abs=1e-9)
            p = t.polygon
            b = t.axis_box
            # shrinking a side by 1 px leaves some vertex outside
            assert (p[:, 0] < b.x0 + 1).any() and (p[:, 0] > b.x1 - 1).any()
            assert (p[:, 1] < b.y0 + 1).any() and (p[:, 1] > b.y1 - 1).any()


def test_stroke_and_cells(samples):
    for s in samples:
        for t in s.instances:
            assert 3 <= len(t.char_cells) <= 10
            union = rasterize_polygons(t.char_cells, 256, 256)
            iou = (union & t.mask).sum() / (union | t.mask).sum()
            assert iou >= 0.8


def test_skeleton_consistent(samples):
    for s in samples:
        ref = soft_skeleton_label([t.mask for t in s.instances]).map.astype(np.float32)
        assert np.array_equal(ref, s.skeleton)


def test_text_brighter_than_background(samples):
    for s in samples:
        m = s.text_mask
        assert s.image[m].mean() > s.image[~m].mean() + 0.2


def test_small_image_config():
    s = generate_sample(GenConfig(width=128, height=128, max_instances=3, seed=2), 0)
    assert s.image.shape == (128, 128)
    assert len(s.instances) >= 1


def test_split_sizes():
    items = list(range(200))
    lab, unl = split_dataset(items, 0.5, seed=0)
    assert len(lab) == 100 and len(unl) == 100
    assert sorted(lab + unl) == items
    lab, unl = split_dataset(list(range(1000)), 0.1, seed=0)
    assert (len(lab), len(unl)) == (100, 900)
    lab, unl = split_dataset(items, 1.0)
    assert len(lab) == 200 and unl == []
    with pytest.raises(ValueError):
        split_dataset(items, 1.1)


def test_split_seeded():
    items = list(range(50))
    assert split_dataset(items, 0.3, 4) == split_dataset(items, 0.3, 4)
    assert split_dataset(items, 0.3, 4) != split_dataset(items, 0.3, 5)
