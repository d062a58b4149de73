"""Command-line entry point: ``urbanlrp {features,train,eval,explain}``.

Settings come from an optional flat JSON file (``--config``) with command-line
flags taking precedence. Every command stages its outputs in a temporary
directory under ``out`` and only moves them into place once it has finished.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataset as ds
from .dsp import FeatureImage, extract, to_feature_image
from .errors import ConfigurationError, ParameterError, PropagationError, TrainingDiverged
from .evaluation import evaluate, write_confusion_csv, write_metrics_csv
from .formats import read_fmat, write_fmat, write_pgm, write_ppm
from .lrp import RULES, analyze, average_maps, fold_batchnorm, overlay, save_relevance
from .nn import TrainConfig, build_dense_model, build_model, load_model, save_model, train
from .nn.model import CONV_CHANNELS, DENSE_UNITS, DROPOUT_RATE

log = logging.getLogger("urbanlrp")

KINDS = ("mel", "cqt")
ARCHITECTURES = ("full", "reduced", "dense")
REDUCED_CHANNELS = (32, 32, 64)
REDUCED_DENSE = 128
MANIFEST_COLUMNS = ("clip_id", "class", "class_id", "split", "kind", "fmat", "pgm", "status")


@dataclass
class RunConfig:
    dataset: str | None = None
    metadata: str | None = None
    features: str = "mel"
    rule: str = "flat"
    out: str = "out"
    seed: int = 0
    classes: list = field(default_factory=lambda: list(ds.URBANSOUND_CLASSES))
    sample_rate: int = 44100
    duration: float = 4.0
    image_size: int = 220
    feature_params: dict = field(default_factory=dict)
    architecture: str = "full"
    hidden: list = field(default_factory=list)
    dropout: float = DROPOUT_RATE
    max_epochs: int = 80
    patience: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    checkpoint: str | None = None
    alpha: float = 0.6
    workers: int = 4
    sample: str | None = None
    class_name: str | None = None

    def __post_init__(self):
        if self.features not in KINDS:
            raise ConfigurationError(f"feature kind must be one of {KINDS}, got {self.features!r}")
        if self.rule not in RULES:
            raise ConfigurationError(f"rule must be one of {RULES}, got {self.rule!r}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    @property
    def out_dir(self):
        return Path(self.out)

    @property
    def checkpoint_path(self):
        return Path(self.checkpoint) if self.checkpoint else self.out_dir / "model.rmdl"

    def train_config(self, class_weights=None):
        return TrainConfig(self.max_epochs, self.patience, self.batch_size, self.lr, self.beta1, self.beta2,
                           self.eps, self.seed, class_weights)


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        if "class" in values:
            values["class_name"] = values.pop("class")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**values)


@contextmanager
def staged(out_dir):
    """Temporary directory whose contents replace files in ``out_dir`` on success only."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield tmp
        for src in sorted(tmp.rglob("*")):
            if src.is_file():
                dst = out_dir / src.relative_to(tmp)
                dst.parent.mkdir(parents=True, exist_ok=True)
                os.replace(src, dst)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _require(path, what):
    if path is None:
        raise ConfigurationError(f"{what} path is not set")
    if not Path(path).exists():
        raise ConfigurationError(f"{what} not found: {path}")
    return Path(path)


def _index(cfg):
    meta = _require(cfg.metadata, "metadata")
    return ds.load_metadata(meta, tuple(cfg.classes))


def _clip_id(entry):
    return Path(entry.file_path).stem


# --- features -----------------------------------------------------------------

def _feature_image(cfg, wav_path):
    clip = ds.load_wav(wav_path)
    clip = ds.fix_length(ds.resample(clip, cfg.sample_rate), cfg.duration)
    return to_feature_image(extract(clip, cfg.features, **cfg.feature_params), cfg.image_size)


def cmd_features(cfg):
    root = _require(cfg.dataset, "dataset")
    index = _index(cfg)
    split = ds.split_dataset(index, cfg.seed)
    tags = split.tag_of(len(index.entries))

    def work(entry):
        try:
            return _feature_image(cfg, root / entry.file_path), "ok"
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", entry.file_path, exc)
            return None, f"skipped: {type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(cfg.workers) as pool:
        results = list(pool.map(work, index.entries))
    with staged(cfg.out_dir) as tmp:
        (tmp / "features").mkdir()
        rows = []
        for entry, tag, (image, status) in zip(index.entries, tags, results):
            cid = _clip_id(entry)
            fmat = pgm = ""
            if image is not None:
                fmat, pgm = f"features/{cid}.fmat", f"features/{cid}.pgm"
                write_fmat(tmp / fmat, image.gray)
                write_pgm(tmp / pgm, image.gray)
            rows.append((cid, entry.label.name, entry.label.id, tag, cfg.features, fmat, pgm, status))
        with open(tmp / "manifest.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MANIFEST_COLUMNS)
            w.writerows(rows)
    n_ok = sum(r[-1] == "ok" for r in rows)
    log.info("wrote %d feature images, skipped %d", n_ok, len(rows) - n_ok)
    return 0


def read_manifest(cfg):
    path = cfg.out_dir / "manifest.csv"
    if not path.exists():
        log.info("no manifest at %s, extracting features first", path)
        cmd_features(cfg)
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
    kinds = {r["kind"] for r in rows}
    if kinds - {cfg.features}:
        raise ConfigurationError(f"manifest holds {sorted(kinds)} features, config asks for {cfg.features!r}")
    return rows


def _load_images(cfg, rows):
    x = np.empty((len(rows), cfg.image_size, cfg.image_size, 3), dtype=np.float32)
    for i, r in enumerate(rows):
        gray = read_fmat(cfg.out_dir / r["fmat"])
        if gray.shape != (cfg.image_size, cfg.image_size):
            raise ConfigurationError(f"{r['fmat']}: shape {gray.shape} does not match image_size {cfg.image_size}")
        x[i] = gray[:, :, None]
    return x, np.array([int(r["class_id"]) for r in rows], dtype=np.int64)


def _split(cfg, rows, tag):
    sel = [r for r in rows if r["split"] == tag]
    return sel, *_load_images(cfg, sel)


# --- train / eval -------------------------------------------------------------

def make_model(cfg):
    n = len(cfg.classes)
    if cfg.architecture == "dense":
        return build_dense_model((cfg.image_size, cfg.image_size, 3), tuple(cfg.hidden), n, cfg.seed, cfg.dropout)
    channels, dense = (CONV_CHANNELS, DENSE_UNITS) if cfg.architecture == "full" else (REDUCED_CHANNELS, REDUCED_DENSE)
    return build_model(cfg.seed, cfg.image_size, channels, dense, n, cfg.dropout)


def cmd_train(cfg):
    rows = read_manifest(cfg)
    _, x_tr, y_tr = _split(cfg, rows, "train")
    _, x_va, y_va = _split(cfg, rows, "validation")
    counts = np.bincount(y_tr, minlength=len(cfg.classes))
    if np.any(counts == 0):
        raise ConfigurationError(f"training split lacks class(es) {np.flatnonzero(counts == 0).tolist()}")
    weights = len(y_tr) / (len(cfg.classes) * counts)
    model = make_model(cfg)
    report = train(model, x_tr, y_tr, x_va, y_va, cfg.train_config(weights))
    with staged(cfg.out_dir) as tmp:
        save_model(model, tmp / "model.rmdl")
        report.to_csv(tmp / "report.csv")
    if cfg.checkpoint and cfg.checkpoint_path != cfg.out_dir / "model.rmdl":
        cfg.checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(cfg.out_dir / "model.rmdl", cfg.checkpoint_path)
    log.info("best epoch %d, stopped at %d", report.best_epoch, report.stopped_epoch)
    return 0


def cmd_eval(cfg):
    rows = read_manifest(cfg)
    model = load_model(_require(cfg.checkpoint_path, "checkpoint"))
    _, x, y = _split(cfg, rows, "test")
    res = evaluate(model, x, y, len(cfg.classes))
    with staged(cfg.out_dir) as tmp:
        write_confusion_csv(tmp / "confusion.csv", res.confusion, cfg.classes)
        write_confusion_csv(tmp / "confusion_normalized.csv", res.confusion, cfg.classes, normalized=True)
        write_metrics_csv(tmp / "metrics.csv", res, cfg.classes)
    log.info("test accuracy %.4f", res.accuracy)
    return 0


# --- explain ------------------------------------------------------------------

def cmd_explain(cfg):
    if (cfg.sample is None) == (cfg.class_name is None):
        raise ParameterError("give exactly one of --sample or --class")
    rows = read_manifest(cfg)
    net = fold_batchnorm(load_model(_require(cfg.checkpoint_path, "checkpoint")))
    if cfg.sample is not None:
        sel = [r for r in rows if r["clip_id"] == cfg.sample]
        if not sel:
            raise ParameterError(f"unknown sample id {cfg.sample!r}")
        name = cfg.sample
    else:
        if cfg.class_name not in cfg.classes:
            raise ParameterError(f"unknown class {cfg.class_name!r}")
        sel = [r for r in rows if r["class"] == cfg.class_name and r["split"] == "test"]
        if not sel:
            raise ParameterError(f"no test samples for class {cfg.class_name!r}")
        name = f"class-{cfg.class_name}"
    x, y = _load_images(cfg, sel)
    target = int(y[0])

    def work(i):
        return analyze(net, x[i], target, cfg.rule, class_name=cfg.classes[target])

    with ThreadPoolExecutor(cfg.workers) as pool:
        maps = list(pool.map(work, range(len(sel))))
    rmap = maps[0] if cfg.sample is not None else average_maps(maps, target)
    background = FeatureImage(x.mean(axis=0, dtype=np.float64))
    with staged(cfg.out_dir) as tmp:
        base = tmp / "explain" / f"{name}_{cfg.rule}"
        base.parent.mkdir()
        save_relevance(rmap, base.with_suffix(".fmat"))
        write_ppm(base.with_suffix(".ppm"), overlay(rmap, background, cfg.alpha))
    log.info("relevance map for %s over %d sample(s)", name, len(sel))
    return 0


COMMANDS = {"features": cmd_features, "train": cmd_train, "eval": cmd_eval, "explain": cmd_explain}


def build_parser():
    p = argparse.ArgumentParser(prog="urbanlrp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--features", choices=KINDS)
    p.add_argument("--rule", choices=RULES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--class", dest="class_name")
    p.add_argument("--sample")
    p.add_argument("--dataset", help="audio root holding the fold directories")
    p.add_argument("--metadata", help="metadata CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--architecture", choices=ARCHITECTURES)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except TrainingDiverged as exc:
        print(f"urbanlrp: training diverged: {exc}", file=sys.stderr)
        return 3
    except (PropagationError, OSError, ValueError) as exc:
        print(f"urbanlrp: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
