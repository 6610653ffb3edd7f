import json

import numpy as np
import pytest

from sbp.dataset import DatasetError, load_dataset, pseudo_polygons_of, write_dataset
from sbp.synthdata import GenConfig, generate_dataset


@pytest.fixture
def written(tmp_path):
    samples = generate_dataset(GenConfig(count=3, seed=5))
    pseudo = [([t.polygon for t in s.instances], list(range(len(s.instances)))) for s in samples]
    write_dataset(tmp_path, samples, splits=["labeled", "unlabeled", "labeled"], pseudo=pseudo)
    return tmp_path, samples


def edit_labels(root, fn):
    path = root / "labels.json"
    obj = json.loads(path.read_text())
    fn(obj)
    path.write_text(json.dumps(obj))


def test_round_trip(written, caplog):
    root, samples = written
    manifest, loaded = load_dataset(root)
    assert not caplog.records
    assert [r.split for r in manifest.samples] == ["labeled", "unlabeled", "labeled"]
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.skeleton, b.skeleton)
        for x, y in zip(a.instances, b.instances):
            assert np.array_equal(x.polygon, y.polygon)
            assert np.array_equal(x.mask, y.mask)
            assert x.shape_kind == y.shape_kind
    for rec, s in zip(manifest.samples, samples):
        assert all(np.array_equal(p, t.polygon) for p, t in zip(pseudo_polygons_of(rec), s.instances))


def test_write_is_deterministic(tmp_path):
    samples = generate_dataset(GenConfig(count=2, seed=5))
    write_dataset(tmp_path / "a", samples)
    write_dataset(tmp_path / "b", samples)
    for rel in ["labels.json", "images/0000.pgm", "skeletons/0001.fmap"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_empty_dataset(tmp_path):
    write_dataset(tmp_path, [])
    manifest, samples = load_dataset(tmp_path)
    assert manifest.samples == [] and samples == []


def test_missing_labels(tmp_path):
    with pytest.raises(DatasetError, match="labels.json"):
        load_dataset(tmp_path)


def test_five_element_polygon(written):
    root, _ = written
    edit_labels(root, lambda o: o["samples"][1]["instances"][0].__setitem__("polygon", [0, 0, 1, 0, 1]))
    with pytest.raises(DatasetError, match="sample 1"):
        load_dataset(root)


def test_missing_image(written):
    root, _ = written
    (root / "images" / "0002.pgm").unlink()
    with pytest.raises(DatasetError, match="0002.pgm"):
        load_dataset(root)


def test_bad_split(written):
    root, _ = written
    edit_labels(root, lambda o: o["samples"][0].__setitem__("split", "test"))
    with pytest.raises(DatasetError, match="split"):
        load_dataset(root)


def test_loose_axis_box(written):
    root, _ = written

    def loosen(o):
        box = o["samples"][2]["instances"][0]["axis_box"]
        box[0] -= 1
    edit_labels(root, loosen)
    with pytest.raises(DatasetError, match="sample 2.*axis_box"):
        load_dataset(root)


def test_tampered_skeleton(written):
    root, _ = written
    edit_labels(root, lambda o: o["samples"][0].__setitem__("skeleton", o["samples"][1]["skeleton"]))
    with pytest.raises(DatasetError, match="skeleton"):
        load_dataset(root)


def test_bad_version(written):
    root, _ = written
    edit_labels(root, lambda o: o.__setitem__("version", 2))
    with pytest.raises(DatasetError, match="version"):
        load_dataset(root)


def test_bad_pseudo_polygon(written):
    root, _ = written
    edit_labels(root, lambda o: o["samples"][0].__setitem__("pseudo_polygons", [[1, 2, 3]]))
    with pytest.raises(DatasetError, match="pseudo_polygons"):
        load_dataset(root)
