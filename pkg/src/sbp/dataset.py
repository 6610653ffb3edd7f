"""On-disk dataset layout: ``images/NNNN.pgm``, ``skeletons/NNNN.fmap``, ``labels.json``."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import read_fmap, read_pgm, write_fmap, write_pgm
from .geometry import AxisBox, as_polygon, polygon_bounds, rasterize_polygon
from .skeleton import soft_skeleton_label
from .synthdata import AnnotatedSample, TextInstance

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("labeled", "unlabeled")


class DatasetError(ValueError):
    """Raised for missing files, schema violations and broken invariants."""


@dataclass
class SampleRecord:
    image: str
    split: str = "labeled"
    skeleton: str | None = None
    instances: list[dict] = field(default_factory=list)
    pseudo_polygons: list[list[float]] | None = None
    pseudo_provenance: list[int] | None = None


@dataclass
class DatasetManifest:
    version: int = MANIFEST_VERSION
    samples: list[SampleRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        out = []
        for r in self.samples:
            d = {"image": r.image, "split": r.split}
            if r.skeleton is not None:
                d["skeleton"] = r.skeleton
            d["instances"] = r.instances
            if r.pseudo_polygons is not None:
                d["pseudo_polygons"] = r.pseudo_polygons
                d["pseudo_provenance"] = r.pseudo_provenance or list(range(len(r.pseudo_polygons)))
            out.append(d)
        return {"version": self.version, "samples": out}


def flat(p: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(p, dtype=np.float64).reshape(-1)]


def instance_record(t: TextInstance) -> dict:
    return {
        "polygon": flat(t.polygon),
        "axis_box": t.axis_box.as_list(),
        "char_cells": [flat(c) for c in t.char_cells],
        "shape_kind": t.shape_kind,
    }


def write_json(path, obj) -> None:
    # sorted keys and fixed separators keep the bytes reproducible
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_dataset(out_dir, samples, splits=None, pseudo=None) -> DatasetManifest:
    """Write samples to ``out_dir``. ``splits`` and ``pseudo`` are per-sample lists."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "skeletons").mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest()
    for i, s in enumerate(samples):
        stem = f"{i:04d}"
        write_pgm(out / "images" / f"{stem}.pgm", s.image)
        rec = SampleRecord(image=f"images/{stem}.pgm", split=splits[i] if splits else "labeled")
        if s.skeleton is not None:
            write_fmap(out / "skeletons" / f"{stem}.fmap", s.skeleton)
            rec.skeleton = f"skeletons/{stem}.fmap"
        rec.instances = [instance_record(t) for t in s.instances]
        if pseudo is not None and pseudo[i] is not None:
            polys, prov = pseudo[i]
            rec.pseudo_polygons = [flat(p) for p in polys]
            rec.pseudo_provenance = [int(k) for k in prov]
        manifest.samples.append(rec)
    write_json(out / "labels.json", manifest.to_json())
    return manifest


def _where(i, fld):
    return f"sample {i}: field '{fld}'"


def parse_polygon(values, where: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) < 6 or len(values) % 2:
        n = len(values) if isinstance(values, list) else type(values).__name__
        raise DatasetError(f"{where}: polygon array must have even length >= 6 (got {n})")
    try:
        return as_polygon(values)
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: {exc}") from None


def parse_manifest(obj) -> DatasetManifest:
    if not isinstance(obj, dict) or obj.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"labels.json: expected version {MANIFEST_VERSION}")
    if not isinstance(obj.get("samples"), list):
        raise DatasetError("labels.json: 'samples' must be a list")
    manifest = DatasetManifest()
    for i, d in enumerate(obj["samples"]):
        if not isinstance(d, dict) or not isinstance(d.get("image"), str):
            raise DatasetError(f"{_where(i, 'image')}: missing or not a string")
        split = d.get("split", "labeled")
        if split not in SPLITS:
            raise DatasetError(f"{_where(i, 'split')}: must be one of {SPLITS}, got {split!r}")
        insts = d.get("instances", [])
        if not isinstance(insts, list):
            raise DatasetError(f"{_where(i, 'instances')}: must be a list")
        for j, inst in enumerate(insts):
            parse_polygon(inst.get("polygon"), f"{_where(i, 'instances')}[{j}].polygon")
            for k, c in enumerate(inst.get("char_cells", [])):
                parse_polygon(c, f"{_where(i, 'instances')}[{j}].char_cells[{k}]")
            box = inst.get("axis_box")
            if not isinstance(box, list) or len(box) != 4:
                raise DatasetError(f"{_where(i, 'instances')}[{j}].axis_box: need 4 numbers")
        pseudo = d.get("pseudo_polygons")
        if pseudo is not None:
            if not isinstance(pseudo, list):
                raise DatasetError(f"{_where(i, 'pseudo_polygons')}: must be a list")
            for k, p in enumerate(pseudo):
                parse_polygon(p, f"{_where(i, 'pseudo_polygons')}[{k}]")
        manifest.samples.append(
            SampleRecord(
                image=d["image"],
                split=split,
                skeleton=d.get("skeleton"),
                instances=insts,
                pseudo_polygons=pseudo,
                pseudo_provenance=d.get("pseudo_provenance"),
            )
        )
    return manifest


def _check_instance(i, j, inst, width, height) -> TextInstance:
    where = f"{_where(i, 'instances')}[{j}]"
    poly = parse_polygon(inst["polygon"], where + ".polygon")
    cells = [parse_polygon(c, where + ".char_cells") for c in inst.get("char_cells", [])]
    try:
        box = AxisBox(*[float(v) for v in inst["axis_box"]])
    except ValueError as exc:
        raise DatasetError(f"{where}.axis_box: {exc}") from None
    tight = polygon_bounds(poly)
    if max(abs(a - b) for a, b in zip(tight, box.as_list())) > 1e-6:
        raise DatasetError(f"{where}.axis_box: not the tight bounds of the polygon")
    kind = inst.get("shape_kind", "straight")
    if kind not in ("straight", "curved"):
        raise DatasetError(f"{where}.shape_kind: unknown kind {kind!r}")
    mask = rasterize_polygon(poly, width, height)
    return TextInstance(poly, cells, mask, box, kind)


def load_dataset(path, check_skeleton: bool = True) -> tuple[DatasetManifest, list[AnnotatedSample]]:
    """Load and validate a dataset directory.

    Errors name the sample index and the offending field or file.
    """
    root = Path(path)
    labels = root / "labels.json"
    if not labels.is_file():
        raise DatasetError(f"missing {labels}")
    try:
        obj = json.loads(labels.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{labels}: invalid JSON ({exc})") from None
    manifest = parse_manifest(obj)
    samples = []
    for i, rec in enumerate(manifest.samples):
        img_path = root / rec.image
        if not img_path.is_file():
            raise DatasetError(f"{_where(i, 'image')}: missing file {img_path}")
        img = read_pgm(img_path)
        h, w = img.shape
        insts = [_check_instance(i, j, d, w, h) for j, d in enumerate(rec.instances)]
        occupied = np.zeros((h, w), dtype=bool)
        for j, t in enumerate(insts):
            if (occupied & t.mask).any():
                raise DatasetError(f"{_where(i, 'instances')}[{j}]: overlaps an earlier instance")
            occupied |= t.mask
        skel = None
        if rec.skeleton is not None:
            sk_path = root / rec.skeleton
            if not sk_path.is_file():
                raise DatasetError(f"{_where(i, 'skeleton')}: missing file {sk_path}")
            skel = read_fmap(sk_path)
            if skel.shape != img.shape:
                raise DatasetError(f"{_where(i, 'skeleton')}: shape {skel.shape} != image {img.shape}")
            if check_skeleton and all(t.mask.any() for t in insts):
                ref = soft_skeleton_label([t.mask for t in insts], shape=img.shape).map.astype(np.float32)
                if not np.array_equal(ref, skel):
                    raise DatasetError(f"{_where(i, 'skeleton')}: does not match the instance masks")
        samples.append(AnnotatedSample(img, insts, skel, i))
    return manifest, samples


def pseudo_polygons_of(rec: SampleRecord) -> list[np.ndarray]:
    return [as_polygon(p) for p in (rec.pseudo_polygons or [])]
