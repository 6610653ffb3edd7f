"""Command-line entry point: ``python -m sbp <command> [flags]``.

Commands: gen-data, train-sasn, gen-pseudo, train-detector, dst, eval,
and visualize. Exit codes: 0 on success, 1 on usage errors (including bad
config files), 2 on data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .bbs import BBSConfig, generate_pseudo_labels, instance_crop_items
from .dataset import DatasetError, load_dataset, pseudo_polygons_of, write_dataset, write_json
from .detector import LABEL_SOURCES, DetectorConfig, detector_items, predict_polygons, train_detector
from .dst import DSTConfig, background_filter, config_dict, dst_train
from .evaluation import score_dataset
from .formats import write_pgm
from .geometry import as_polygon, rasterize_polygon
from .sasn import Arch, TrainConfig, load_params, save_params, train_sasn
from .supervision import IGNORE, NEGATIVE, POSITIVE
from .synthdata import GenConfig, generate_dataset, split_dataset

log = logging.getLogger("sbp")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every knob a command can read. Paths are resolved before a run."""

    seed: int = 0
    # data generation
    count: int = 10
    width: int = 256
    height: int = 256
    min_instances: int = 1
    max_instances: int = 4
    curved_fraction: float = 0.5
    texture: float = 0.25
    noise: float = 0.02
    clutter: int = 2
    min_gap: int = 3
    labeled_ratio: float = 1.0
    # training
    epochs: int = 16
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0005
    tau: int = 8
    crop_size: int = 128
    attention: bool = True
    width_mult: int = 8
    # pseudo labels / detector
    thresh: float = 0.5
    window: float = 0.5
    epsilon: float = 2.0
    min_area: float = 16.0
    source: str = "gt"
    # self-training
    sigma: float = 0.1
    psi: int = 32
    multiscale: bool = True
    filtering: bool = True
    dynamic: bool = True
    regen_every: int = 1
    # paths
    out: str = ""
    data: str = ""
    model: str = ""
    pred: str = ""
    gt: str = ""
    layer: str = "labels"

    def gen_config(self) -> GenConfig:
        return GenConfig(
            count=self.count,
            width=self.width,
            height=self.height,
            min_instances=self.min_instances,
            max_instances=self.max_instances,
            curved_fraction=self.curved_fraction,
            texture=self.texture,
            noise=self.noise,
            clutter=self.clutter,
            min_gap=self.min_gap,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.tau,
            epochs=self.epochs,
            seed=self.seed,
            crop_size=self.crop_size,
            attention=self.attention,
        )

    def dst_config(self) -> DSTConfig:
        return DSTConfig(
            train=self.train_config(),
            sigma=self.sigma,
            psi=self.psi,
            thresh=self.thresh,
            multiscale=self.multiscale,
            filtering=self.filtering,
            dynamic=self.dynamic,
            regen_every=self.regen_every,
        )

    def arch(self) -> Arch:
        return Arch.tiny(self.width_mult)


PATH_KEYS = ("out", "data", "model", "pred", "gt")
_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = type(getattr(RunConfig(), key))
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "config") -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise UsageError(f"{source}:{n}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(), str(path)))
    for key in _FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(**values)
    try:
        cfg.gen_config()
        cfg.train_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0.0 <= cfg.labeled_ratio <= 1.0:
        raise UsageError("labeled_ratio must be in [0, 1]")
    for key in PATH_KEYS:
        v = getattr(cfg, key)
        if v:
            setattr(cfg, key, str(Path(v).resolve()))
    return cfg


def _require(cfg: RunConfig, *keys: str):
    missing = [k for k in keys if not getattr(cfg, k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k for k in missing))


def _write_effective(cfg: RunConfig, out: Path, command: str):
    target = out if out.is_dir() else out.parent
    target.mkdir(parents=True, exist_ok=True)
    name = "run_config.txt" if out.is_dir() else out.name + ".config.txt"
    (target / name).write_text(f"# command = {command}\n" + format_config(cfg))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig) -> int:
    _require(cfg, "out")
    samples = generate_dataset(cfg.gen_config())
    labeled, _ = split_dataset(list(range(len(samples))), cfg.labeled_ratio, cfg.seed)
    labeled = set(labeled)
    splits = ["labeled" if i in labeled else "unlabeled" for i in range(len(samples))]
    out = Path(cfg.out)
    write_dataset(out, samples, splits)
    _write_effective(cfg, out, "gen-data")
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def _load(path: str):
    return load_dataset(path)


def cmd_train_sasn(cfg: RunConfig) -> int:
    _require(cfg, "data", "out")
    _, samples = _load(cfg.data)
    items = instance_crop_items(samples, cfg.crop_size)
    if not items:
        raise DatasetError("no text instances to train on")
    hist: list = []
    params = train_sasn(items, cfg.train_config(), arch=cfg.arch(), history=hist)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(out, params)
    write_json(out.with_suffix(".history.json"), hist)
    _write_effective(cfg, out, "train-sasn")
    print(f"trained on {len(items)} crops; final loss {hist[-1]['loss']:.4f}")
    return EXIT_OK


def cmd_gen_pseudo(cfg: RunConfig) -> int:
    _require(cfg, "data", "model", "out")
    manifest, samples = _load(cfg.data)
    model = load_params(cfg.model)
    bcfg = BBSConfig(thresh=cfg.thresh, window=cfg.window, epsilon=cfg.epsilon)
    pseudo = []
    for s in samples:
        lab = generate_pseudo_labels(s.image, s.boxes, model, cfg.thresh, bcfg)
        pseudo.append((lab.polygons, lab.provenance))
    out = Path(cfg.out)
    write_dataset(out, samples, [r.split for r in manifest.samples], pseudo)
    _write_effective(cfg, out, "gen-pseudo")
    print(f"pseudo labels: {sum(len(p) for p, _ in pseudo)} polygons for {len(samples)} images")
    return EXIT_OK


def cmd_train_detector(cfg: RunConfig) -> int:
    _require(cfg, "data", "out")
    if cfg.source not in LABEL_SOURCES:
        raise UsageError(f"--source must be one of {LABEL_SOURCES}")
    manifest, samples = _load(cfg.data)
    pseudo = None
    if cfg.source == "pseudo":
        if any(r.pseudo_polygons is None for r in manifest.samples):
            raise DatasetError("dataset has no pseudo_polygons; run gen-pseudo first")
        pseudo = [pseudo_polygons_of(r) for r in manifest.samples]
    if not samples:
        raise DatasetError("empty dataset")
    items = detector_items(samples, cfg.source, pseudo)
    hist: list = []
    params = train_detector(items, cfg.train_config(), arch=cfg.arch(), history=hist)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(out, params)
    write_json(out.with_suffix(".history.json"), hist)
    _write_effective(cfg, out, "train-detector")
    print(f"trained detector on {len(items)} images ({cfg.source} labels)")
    return EXIT_OK


def cmd_dst(cfg: RunConfig) -> int:
    _require(cfg, "data", "model", "out")
    manifest, samples = _load(cfg.data)
    labeled = [s for s, r in zip(samples, manifest.samples) if r.split == "labeled"]
    unlabeled = [s.image for s, r in zip(samples, manifest.samples) if r.split == "unlabeled"]
    model0 = load_params(cfg.model)
    dcfg = cfg.dst_config()
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_suffix(".log.jsonl")
    log_path.unlink(missing_ok=True)
    params = dst_train(detector_items(labeled, "gt"), unlabeled, model0, dcfg, log_path=log_path)
    save_params(out, params)
    write_json(out.with_suffix(".dst.json"), config_dict(dcfg))
    _write_effective(cfg, out, "dst")
    print(f"self-training done: {len(labeled)} labeled, {len(unlabeled)} unlabeled")
    return EXIT_OK


def _read_polygon_lists(path: str) -> list[list[np.ndarray]]:
    """Per-image polygons from a labels.json / dataset dir or a predictions file."""
    p = Path(path)
    if p.is_dir():
        _, samples = load_dataset(p)
        return [s.polygons for s in samples]
    if not p.is_file():
        raise DatasetError(f"missing file {p}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{p}: invalid JSON ({exc})") from None
    if isinstance(obj, dict) and "samples" in obj:
        _, samples = load_dataset(p.parent)
        return [s.polygons for s in samples]
    if isinstance(obj, dict) and isinstance(obj.get("predictions"), list):
        try:
            return [[as_polygon(q) for q in img] for img in obj["predictions"]]
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"{p}: bad polygon ({exc})") from None
    raise DatasetError(f"{p}: expected a labels.json manifest or a predictions file")


def write_predictions(path: Path, polys) -> None:
    write_json(path, {"predictions": [[[float(v) for v in q.reshape(-1)] for q in img] for img in polys]})


def cmd_eval(cfg: RunConfig) -> int:
    out = Path(cfg.out) if cfg.out else Path("metrics.json").resolve()
    if cfg.model:
        _require(cfg, "data")
        _, samples = _load(cfg.data)
        model = load_params(cfg.model)
        dcfg = DetectorConfig(cfg.thresh, cfg.min_area, cfg.epsilon)
        preds = predict_polygons(model, np.stack([s.image for s in samples]), dcfg) if samples else []
        gts = [s.polygons for s in samples]
        write_predictions(out.with_suffix(".predictions.json"), preds)
    else:
        _require(cfg, "pred", "gt")
        preds = _read_polygon_lists(cfg.pred)
        gts = _read_polygon_lists(cfg.gt)
        if len(preds) != len(gts):
            raise DatasetError(f"prediction/ground-truth image counts differ: {len(preds)} vs {len(gts)}")
    prf = score_dataset(preds, gts)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, prf.to_json())
    print(f"precision {prf.precision:.4f} recall {prf.recall:.4f} fscore {prf.fscore:.4f}")
    return EXIT_OK


def outline(mask: np.ndarray) -> np.ndarray:
    return mask & ~ndimage.binary_erosion(mask)


def cmd_visualize(cfg: RunConfig) -> int:
    _require(cfg, "data", "out")
    if cfg.layer not in ("labels", "pseudo", "supervision"):
        raise UsageError("--layer must be labels, pseudo or supervision")
    manifest, samples = _load(cfg.data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (s, rec) in enumerate(zip(samples, manifest.samples)):
        h, w = s.image.shape
        if cfg.layer == "supervision":
            polys = pseudo_polygons_of(rec) if rec.pseudo_polygons is not None else s.polygons
            pos = np.zeros((h, w), dtype=bool)
            for p in polys:
                pos |= rasterize_polygon(p, w, h)
            states = np.full((h, w), IGNORE, dtype=np.uint8)
            states[background_filter(s.image, cfg.sigma)] = NEGATIVE
            states[pos] = POSITIVE
            write_pgm(out / f"{i:04d}_supervision.pgm", states / 255.0)
            continue
        if cfg.layer == "pseudo":
            if rec.pseudo_polygons is None:
                raise DatasetError(f"sample {i}: field 'pseudo_polygons' missing")
            polys = pseudo_polygons_of(rec)
        else:
            polys = s.polygons
        img = s.image.copy()
        for p in polys:
            img[outline(rasterize_polygon(p, w, h))] = 1.0
        write_pgm(out / f"{i:04d}_{cfg.layer}.pgm", img)
    _write_effective(cfg, out, "visualize")
    print(f"wrote {len(samples)} overlays to {out}")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic dataset"),
    "train-sasn": (cmd_train_sasn, "train the segmenter on instance crops"),
    "gen-pseudo": (cmd_gen_pseudo, "box-supervised pseudo polygons"),
    "train-detector": (cmd_train_detector, "supervised detector on gt/box/pseudo labels"),
    "dst": (cmd_dst, "dynamic self-training from a detector"),
    "eval": (cmd_eval, "precision/recall/F-score"),
    "visualize": (cmd_visualize, "PGM overlays of labels or supervision"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag_type(key):
    kind = type(getattr(RunConfig(), key))
    if kind is bool:
        return lambda s: _convert(key, s)
    return kind


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sbp", description="Weakly supervised text detection toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        for key in _FIELDS:
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=_flag_type(key), default=None)
    return parser


def setup_logging():
    level = os.environ.get("SBP_LOG", "warning").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def run_command(argv) -> int:
    setup_logging()
    parser = make_parser()
    try:
        args = parser.parse_args(list(argv))
        if not args.command:
            raise UsageError("no command given")
        cfg = build_config(args)
        fn, _ = COMMANDS[args.command]
        return fn(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # bad model files, invalid configs that pass parsing, empty inputs
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


__all__ = ["RunConfig", "build_config", "format_config", "main", "parse_config_text", "run_command"]
