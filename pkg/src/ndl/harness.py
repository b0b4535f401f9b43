"""Experiment runner for the four continual-learning conditions.

Conditions:

``CL``      continued layerwise training on the new class only
``CL+IR``   continued layerwise training on the new class plus replay
``NDL``     neurogenesis rounds with no replay (stable set = new class)
``NDL+IR``  full neurogenesis rounds with intrinsic replay

Configuration precedence, lowest to highest: built-in defaults, the YAML
config file, ``NDL_OUTPUT_DIR`` (output directory only), command-line flags.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import numkernel
from .autoencoder import StackedAutoencoder, TrainConfig, mean_re_by_level, pretrain_stack
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import (
    LabeledDataset,
    downsample_dataset,
    filter_classes,
    load_bundled_mnist5k,
    load_idx_dataset,
    split_holdout,
)
from .errors import ConfigError
from .metrics import FLAT_COLUMNS, dump_record, flat_rows
from .neurogenesis import GrowthReport, NeurogenesisConfig, calibrate_thresholds, run_ndl
from .replay import (
    ReplayStore,
    assemble_stable_train,
    fit_class_stats,
    refresh_store,
    replay_snapshots,
)

log = logging.getLogger(__name__)

CONDITIONS = ("CL", "NDL", "CL+IR", "NDL+IR")
OUTPUT_DIR_ENV = "NDL_OUTPUT_DIR"


@dataclass
class DatasetConfig:
    images: str | None = None
    labels: str | None = None
    # "mnist5k" selects the MNIST subset bundled with mlxtend instead of IDX files
    bundled: str | None = None
    max_per_class: int | None = None
    holdout_fraction: float = 0.1
    downsample: list[int] | None = None


@dataclass
class NeurogenesisSettings:
    threshold_percentile: float = 95.0
    thresholds: list[float] | None = None
    max_nodes: list[int] | None = None
    max_outliers: int = 0
    max_outlier_fraction: float | None = None
    nodes_per_step: int = 5
    plasticity_epochs: int = 10
    stability_epochs: int = 5
    decoder_lr_divisor: float = 100.0
    propagation_stability_divisor: float | None = None
    propagation_mode: str = "full"
    propagation_data: str = "new"
    learning_rate: float | None = None
    plasticity_new_decoder_full_lr: bool = True
    stability_updates_old_encoder: bool = False


@dataclass
class ReplaySettings:
    per_class_count: int | None = None
    ridge: float | None = None


@dataclass
class ExperimentConfig:
    condition: str = "NDL+IR"
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    initial_classes: list[int] = field(default_factory=lambda: [1, 7])
    order: list[int] = field(default_factory=lambda: [0, 2, 3, 4, 5, 6, 8, 9])
    architecture: list[int] = field(default_factory=lambda: [200, 100, 75, 20])
    # growth.jsonl of an NDL run; CL conditions then start at its final widths
    growth_report: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    # epochs per level for CL updates; defaults to train.epochs
    cl_epochs: int | None = None
    neurogenesis: NeurogenesisSettings = field(default_factory=NeurogenesisSettings)
    replay: ReplaySettings = field(default_factory=ReplaySettings)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ConfigError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if not self.architecture or any(w < 1 for w in self.architecture):
            raise ConfigError("architecture needs at least one positive width")
        if set(self.initial_classes) & set(self.order):
            raise ConfigError("order repeats an initial class")
        if len(set(self.order)) != len(self.order):
            raise ConfigError("order lists a class twice")
        if self.is_ndl:
            if self.neurogenesis.max_nodes is None:
                raise ConfigError(f"{self.condition} needs neurogenesis.max_nodes")
            if len(self.neurogenesis.max_nodes) != len(self.architecture):
                raise ConfigError("neurogenesis.max_nodes needs one entry per level")
            th = self.neurogenesis.thresholds
            if th is not None and len(th) != len(self.architecture):
                raise ConfigError("neurogenesis.thresholds needs one entry per level")
        ds = self.dataset
        if ds.bundled is None and (ds.images is None or ds.labels is None):
            raise ConfigError("dataset needs images and labels paths, or bundled: mnist5k")

    @property
    def is_ndl(self) -> bool:
        return self.condition.startswith("NDL")

    @property
    def uses_replay(self) -> bool:
        return self.condition.endswith("+IR")

    @property
    def classes(self) -> list[int]:
        return list(self.initial_classes) + list(self.order)

    def neurogenesis_config(self, thresholds: list[float]) -> NeurogenesisConfig:
        ng = self.neurogenesis
        return NeurogenesisConfig(
            thresholds=thresholds,
            max_nodes=ng.max_nodes,
            max_outliers=ng.max_outliers,
            max_outlier_fraction=ng.max_outlier_fraction,
            learning_rate=ng.learning_rate or self.train.learning_rate,
            nodes_per_step=ng.nodes_per_step,
            plasticity_epochs=ng.plasticity_epochs,
            stability_epochs=ng.stability_epochs,
            decoder_lr_divisor=ng.decoder_lr_divisor,
            propagation_stability_divisor=ng.propagation_stability_divisor,
            propagation_mode=ng.propagation_mode,
            propagation_data=ng.propagation_data,
            minibatch_size=self.train.minibatch_size,
            noise_fraction=self.train.noise_fraction,
            plasticity_new_decoder_full_lr=ng.plasticity_new_decoder_full_lr,
            stability_updates_old_encoder=ng.stability_updates_old_encoder,
            per_class_count=self.replay.per_class_count,
            ridge=self.replay.ridge,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "neurogenesis": NeurogenesisSettings,
    "replay": ReplaySettings,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in data.items():
        if cls is ExperimentConfig and key in _NESTED:
            value = _build(_NESTED[key], value or {}, key)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from exc


def _apply_override(data: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key.path=value")
    node = data
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r} descends into a non-mapping")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path=None, overrides=(), data: dict | None = None) -> ExperimentConfig:
    """Build a config from a YAML file (or dict), env, and ``key.path=value`` overrides."""
    merged: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                merged = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if data:
        merged = _deep_merge(merged, data)
    if os.environ.get(OUTPUT_DIR_ENV):
        merged["output_dir"] = os.environ[OUTPUT_DIR_ENV]
    for assignment in overrides:
        _apply_override(merged, assignment)
    return _build(ExperimentConfig, merged, "")


def _deep_merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class Splits:
    train: LabeledDataset
    test: LabeledDataset


def load_data(cfg: ExperimentConfig) -> Splits:
    ds_cfg = cfg.dataset
    if ds_cfg.bundled is not None:
        if ds_cfg.bundled != "mnist5k":
            raise ConfigError(f"unknown bundled dataset {ds_cfg.bundled!r}")
        ds = load_bundled_mnist5k()
    else:
        ds = load_idx_dataset(ds_cfg.images, ds_cfg.labels)
    if ds_cfg.downsample is not None:
        ds = downsample_dataset(ds, *ds_cfg.downsample)
    ds = filter_classes(ds, cfg.classes)
    missing = sorted(set(cfg.classes) - set(ds.classes))
    if missing:
        raise FileNotFoundError(f"dataset has no samples for class(es) {missing}")
    if ds_cfg.max_per_class is not None:
        keep = np.concatenate([
            np.flatnonzero(ds.labels == c)[: ds_cfg.max_per_class] for c in ds.classes
        ])
        keep.sort()
        ds = LabeledDataset(ds.images[keep], ds.labels[keep], ds.height, ds.width)
    train, test = split_holdout(ds, ds_cfg.holdout_fraction)
    return Splits(train, test)


def final_widths_from_growth(path, depth: int) -> list[int] | None:
    widths: dict[int, tuple[int, int]] = {}
    try:
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    level, rnd = rec["level"], rec["round"]
                    if level not in widths or rnd >= widths[level][0]:
                        widths[level] = (rnd, rec["width_after"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot use growth report {path}: {exc}") from exc
    if not widths:
        return None
    if sorted(widths) != list(range(1, depth + 1)):
        raise ConfigError(f"growth report {path} does not describe a {depth}-level network")
    return [widths[level][1] for level in range(1, depth + 1)]


@dataclass
class RunState:
    ae: StackedAutoencoder
    store: ReplayStore
    rng: np.random.Generator
    condition: str
    seed: int
    thresholds: list[float] | None = None
    round: int = 0
    seen: list[int] = field(default_factory=list)

    def extra(self) -> dict:
        return {
            "condition": self.condition,
            "seed": self.seed,
            "thresholds": self.thresholds,
            "round": self.round,
            "seen": self.seen,
            "rng_state": numkernel.rng_state(self.rng),
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.ae, self.store, self.extra())

    @classmethod
    def load(cls, path) -> "RunState":
        ae, store, extra = load_checkpoint(path)
        try:
            return cls(
                ae=ae,
                store=store,
                rng=numkernel.rng_from_state(extra["rng_state"]),
                condition=extra["condition"],
                seed=extra["seed"],
                thresholds=extra["thresholds"],
                round=extra["round"],
                seen=list(extra["seen"]),
            )
        except KeyError as exc:
            raise ConfigError(f"checkpoint {path} lacks harness state ({exc})") from exc


def initial_widths(cfg: ExperimentConfig) -> list[int]:
    widths = list(cfg.architecture)
    if cfg.growth_report and not cfg.is_ndl:
        grown = final_widths_from_growth(cfg.growth_report, len(widths))
        if grown is not None:
            widths = grown
    return widths


def pretrain(cfg: ExperimentConfig, splits: Splits) -> RunState:
    rng = numkernel.make_rng(cfg.seed)
    widths = initial_widths(cfg)
    ae = StackedAutoencoder.random([splits.train.images.shape[1]] + widths, rng)
    initial = filter_classes(splits.train, cfg.initial_classes)
    pretrain_stack(ae, initial.images, cfg.train, rng)
    store = ReplayStore(ae.code_width)
    if cfg.uses_replay:
        for label in cfg.initial_classes:
            store = store.with_class(fit_class_stats(ae, initial.of_class(label), label, cfg.replay.ridge))
    thresholds = None
    if cfg.is_ndl:
        thresholds = cfg.neurogenesis.thresholds or calibrate_thresholds(
            ae, initial.images, cfg.neurogenesis.threshold_percentile
        )
    return RunState(ae, store, rng, cfg.condition, cfg.seed, thresholds, 0, list(cfg.initial_classes))


def learn_class(state: RunState, cfg: ExperimentConfig, splits: Splits, label: int) -> GrowthReport | None:
    """Apply one round of the state's condition for ``label``; returns the growth report for NDL runs."""
    data = splits.train.of_class(label)
    if len(data) == 0:
        raise FileNotFoundError(f"no training samples for class {label}")
    state.round += 1
    report = None
    if state.condition == "CL":
        pretrain_stack(state.ae, data, _cl_train(cfg), state.rng)
    elif state.condition == "CL+IR":
        snapshots = replay_snapshots(state.store, state.ae, cfg.replay.per_class_count, state.rng)
        stable = assemble_stable_train(data, snapshots, state.rng)
        pretrain_stack(state.ae, stable, _cl_train(cfg), state.rng)
        store = refresh_store(state.store, state.ae, snapshots, cfg.replay.ridge)
        state.store = store.with_class(fit_class_stats(state.ae, data, label, cfg.replay.ridge))
    else:
        ng = cfg.neurogenesis_config(state.thresholds)
        store = state.store if state.condition == "NDL+IR" else ReplayStore(state.ae.code_width)
        state.ae, store, report = run_ndl(state.ae, data, label, store, ng, state.rng, state.round)
        state.store = store if state.condition == "NDL+IR" else ReplayStore(state.ae.code_width)
    state.seen.append(int(label))
    return report


def _cl_train(cfg: ExperimentConfig) -> TrainConfig:
    if cfg.cl_epochs is None:
        return cfg.train
    return dataclasses.replace(cfg.train, epochs=cfg.cl_epochs)


def evaluate(state: RunState, cfg: ExperimentConfig, splits: Splits) -> dict:
    """Metrics record: held-out mean RE per class (seen or not) at every level."""
    mean_re = {
        str(label): mean_re_by_level(state.ae, splits.test.of_class(label))
        for label in cfg.classes
        if len(splits.test.of_class(label))
    }
    return {
        "condition": state.condition,
        "seed": state.seed,
        "round": state.round,
        "class_learned": state.seen[-1] if state.round > 0 else None,
        "classes_seen": list(state.seen),
        "widths": state.ae.widths,
        "mean_re": mean_re,
    }


class RunOutput:
    """The files a run writes under its output directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.metrics = self.root / "metrics.jsonl"
        self.table = self.root / "metrics.csv"
        self.growth = self.root / "growth.jsonl"
        self.timings = self.root / "timings.csv"
        self.checkpoints = self.root / "checkpoints"

    def checkpoint(self, round_index: int) -> Path:
        return self.checkpoints / f"round{round_index:03d}.npz"

    def start(self, cfg: ExperimentConfig) -> None:
        self.checkpoints.mkdir(parents=True, exist_ok=True)
        self.metrics.write_text("")
        self.growth.write_text("")
        with open(self.table, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(FLAT_COLUMNS)
        with open(self.timings, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(["round", "class_learned", "seconds"])
        with open(self.root / "config.resolved.yaml", "w") as fh:
            yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)

    def append(self, record: dict, report: GrowthReport | None, seconds: float) -> None:
        if not self.metrics.exists():
            raise ConfigError(f"{self.root} has no metrics.jsonl; run pretrain first")
        with open(self.metrics, "a") as fh:
            fh.write(dump_record(record) + "\n")
        with open(self.table, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(flat_rows(record))
        if report is not None:
            with open(self.growth, "a") as fh:
                for rec in report.to_records():
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(self.timings, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([record["round"], record["class_learned"], f"{seconds:.3f}"])


def start_run(cfg: ExperimentConfig, splits: Splits | None = None) -> tuple[RunState, Splits, RunOutput]:
    """Pretrain on the initial classes and write round 0 (metrics + checkpoint)."""
    splits = splits or load_data(cfg)
    out = RunOutput(cfg.output_dir)
    out.start(cfg)
    t0 = time.perf_counter()
    state = pretrain(cfg, splits)
    out.append(evaluate(state, cfg, splits), None, time.perf_counter() - t0)
    state.save(out.checkpoint(0))
    return state, splits, out


def next_class(state: RunState, cfg: ExperimentConfig) -> int | None:
    for label in cfg.order:
        if label not in state.seen:
            return label
    return None


def continue_run(state: RunState, cfg: ExperimentConfig, splits: Splits, out: RunOutput, label: int) -> GrowthReport | None:
    """Learn one class, then append its metrics and write its checkpoint."""
    if label in state.seen:
        raise ConfigError(f"class {label} was already learned in this run")
    t0 = time.perf_counter()
    last_checkpoint = out.checkpoint(state.round)
    try:
        report = learn_class(state, cfg, splits, label)
    except ArithmeticError:
        marker = out.root / "aborted.json"
        marker.write_text(json.dumps({"class": label, "last_checkpoint": str(last_checkpoint)}))
        log.error("numeric failure while learning class %s; see %s", label, marker)
        raise
    out.append(evaluate(state, cfg, splits), report, time.perf_counter() - t0)
    state.save(out.checkpoint(state.round))
    return report


def run_experiment(cfg: ExperimentConfig, splits: Splits | None = None) -> RunOutput:
    """Full protocol: pretrain, then one round per class in ``cfg.order``."""
    state, splits, out = start_run(cfg, splits)
    log.info("%s seed %d: pretrained widths %s", cfg.condition, cfg.seed, state.ae.widths)
    for label in cfg.order:
        report = continue_run(state, cfg, splits, out, label)
        log.info("%s: learned %d, widths %s%s", cfg.condition, label, state.ae.widths,
                 f", +{report.nodes_added}" if report else "")
    return out
