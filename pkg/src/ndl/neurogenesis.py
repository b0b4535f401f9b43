"""Neurogenesis: grow levels whose reconstruction fails on a new class.

Each round walks levels 1..N. At a level, samples of the new class whose
global RE exceeds the level threshold are outliers; while there are too
many, nodes are added and trained in two phases:

* plasticity, on the outliers: new encoder rows at the full rate, old
  encoder rows frozen, old decoder columns at ``lr / decoder_lr_divisor``;
* stability, on the stable training set (new class plus replay), with the
  whole level at ``lr / decoder_lr_divisor`` and old encoder rows frozen.

When a level grows, the next level is retrained on the new class and then
on the stable set, and is itself forced to grow by one step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autoencoder import (
    LrMask,
    StackedAutoencoder,
    TrainConfig,
    encode_to_level,
    grow_level,
    reconstruction_error,
    train_level,
    train_shl,
)
from .errors import ConfigError
from .replay import (
    ReplayStore,
    assemble_stable_train,
    fit_class_stats,
    refresh_store,
    replay_snapshots,
)

log = logging.getLogger(__name__)


@dataclass
class NeurogenesisConfig:
    thresholds: list[float]
    max_nodes: list[int]
    max_outliers: int = 0
    # Alternative to max_outliers: allowed outliers as a share of the new class.
    max_outlier_fraction: float | None = None
    learning_rate: float = 0.1
    nodes_per_step: int = 5
    plasticity_epochs: int = 10
    stability_epochs: int = 5
    decoder_lr_divisor: float = 100.0
    # divisor for the stable-set pass when retraining the level above a grown one
    propagation_stability_divisor: float | None = None
    # "full": every weight of the next level moves at the full rate on the new
    # class; "new_connections": only weights attached to the new nodes do
    propagation_mode: str = "full"
    # train the next level's plasticity pass on "new" class data or the "stable" set
    propagation_data: str = "new"
    minibatch_size: int = 20
    noise_fraction: float = 0.1
    plasticity_new_decoder_full_lr: bool = True
    stability_updates_old_encoder: bool = False
    per_class_count: int | None = None
    ridge: float | None = None

    def __post_init__(self):
        self.thresholds = [float(t) for t in self.thresholds]
        self.max_nodes = [int(m) for m in self.max_nodes]
        if len(self.thresholds) != len(self.max_nodes):
            raise ConfigError("thresholds and max_nodes need one entry per level")
        if any(not t > 0 for t in self.thresholds):
            raise ConfigError("thresholds must be positive")
        if any(m < 0 for m in self.max_nodes):
            raise ConfigError("max_nodes must be non-negative")
        if self.max_outliers < 0:
            raise ConfigError("max_outliers must be non-negative")
        if self.max_outlier_fraction is not None and not 0 <= self.max_outlier_fraction <= 1:
            raise ConfigError("max_outlier_fraction must lie in [0, 1]")
        if self.nodes_per_step < 1:
            raise ConfigError("nodes_per_step must be at least 1")
        if self.decoder_lr_divisor < 1:
            raise ConfigError("decoder_lr_divisor must be at least 1")
        if self.propagation_stability_divisor is not None and self.propagation_stability_divisor < 1:
            raise ConfigError("propagation_stability_divisor must be at least 1")
        if self.propagation_mode not in ("full", "new_connections"):
            raise ConfigError(f"unknown propagation_mode {self.propagation_mode!r}")
        if self.propagation_data not in ("new", "stable"):
            raise ConfigError(f"unknown propagation_data {self.propagation_data!r}")

    def outlier_limit(self, n_samples: int) -> int:
        if self.max_outlier_fraction is not None:
            return int(math.floor(self.max_outlier_fraction * n_samples))
        return self.max_outliers

    def propagation_divisor(self) -> float:
        if self.propagation_stability_divisor is None:
            return self.decoder_lr_divisor
        return self.propagation_stability_divisor

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=0,
            minibatch_size=self.minibatch_size,
            noise_fraction=self.noise_fraction,
        )

    def plasticity_mask(self) -> LrMask:
        damp = 1.0 / self.decoder_lr_divisor
        return LrMask(
            encoder_old=0.0,
            encoder_new=1.0,
            encoder_bias_old=0.0,
            encoder_bias_new=1.0,
            decoder_old=damp,
            decoder_new=1.0 if self.plasticity_new_decoder_full_lr else damp,
            decoder_bias=damp,
        )

    def propagation_mask(self) -> LrMask:
        if self.propagation_mode == "full":
            return LrMask()
        damp = 1.0 / self.decoder_lr_divisor
        return LrMask(
            encoder_old=0.0,
            encoder_bias_old=0.0,
            decoder_old=damp,
            decoder_bias=damp,
        )

    def stability_mask(self) -> LrMask:
        damp = 1.0 / self.decoder_lr_divisor
        mask = LrMask.uniform(damp)
        if not self.stability_updates_old_encoder:
            mask.encoder_old = 0.0
            mask.encoder_bias_old = 0.0
        return mask


def calibrate_thresholds(
    ae: StackedAutoencoder, data, percentile: float = 95.0
) -> list[float]:
    """Per-level RE percentile over previously seen data."""
    return [
        float(np.percentile(reconstruction_error(ae, data, L), percentile))
        for L in range(1, ae.depth + 1)
    ]


def detect_outliers(ae: StackedAutoencoder, data, L: int, threshold: float) -> np.ndarray:
    """Row indices whose level-L global RE is strictly above ``threshold``."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(reconstruction_error(ae, data, L) > threshold)


@dataclass
class LevelReport:
    level: int
    width_before: int
    width_after: int
    nodes_added: int = 0
    iterations: int = 0
    forced: bool = False
    outliers_before: int = 0
    outliers_after: int = 0
    outlier_history: list[int] = field(default_factory=list)
    mean_re_before: dict[int, float] = field(default_factory=dict)
    mean_re_after: dict[int, float] = field(default_factory=dict)


@dataclass
class GrowthReport:
    class_label: int | None = None
    round_index: int | None = None
    levels: list[LevelReport] = field(default_factory=list)

    @property
    def nodes_added(self) -> list[int]:
        return [lv.nodes_added for lv in self.levels]

    @property
    def total_added(self) -> int:
        return sum(self.nodes_added)

    def to_records(self) -> list[dict]:
        """One flat record per level, ready for JSON lines."""
        records = []
        for lv in self.levels:
            rec = {"round": self.round_index, "class": self.class_label}
            rec.update(asdict(lv))
            rec["mean_re_before"] = {str(k): v for k, v in lv.mean_re_before.items()}
            rec["mean_re_after"] = {str(k): v for k, v in lv.mean_re_after.items()}
            records.append(rec)
        return records


def _class_means(ae, eval_sets: dict[int, np.ndarray], L: int) -> dict[int, float]:
    return {
        label: float(np.mean(reconstruction_error(ae, rows, L)))
        for label, rows in eval_sets.items()
        if len(rows)
    }


def neurogenesis_level(
    ae: StackedAutoencoder,
    new_data,
    stable_train,
    L: int,
    cfg: NeurogenesisConfig,
    rng: np.random.Generator,
    force: bool = False,
    eval_sets: dict[int, np.ndarray] | None = None,
) -> tuple[StackedAutoencoder, LevelReport]:
    """Grow and train level L until its outliers are few enough or the budget runs out.

    ``force`` runs one growth step before the outlier test (used when the
    level below grew). Every node added in this call counts as new for the
    plasticity mask; rows that existed before the call are never updated.
    """
    new_data = np.asarray(new_data, dtype=np.float64)
    stable_train = np.asarray(stable_train, dtype=np.float64)
    enc, dec = ae.level(L)
    report = LevelReport(level=L, width_before=enc.out_dim, width_after=enc.out_dim)
    if new_data.shape[0] == 0:
        log.warning("level %d: no new data, nothing to do", L)
        return ae, report
    eval_sets = eval_sets or {}
    report.mean_re_before = _class_means(ae, eval_sets, L)

    threshold = cfg.thresholds[L - 1]
    limit = cfg.outlier_limit(new_data.shape[0])
    budget = cfg.max_nodes[L - 1]
    boundary = enc.out_dim
    tc = cfg.train_config()
    plastic, stable = cfg.plasticity_mask(), cfg.stability_mask()

    outliers = detect_outliers(ae, new_data, L, threshold)
    report.outliers_before = len(outliers)
    report.outlier_history.append(len(outliers))
    report.forced = force and budget > 0

    while (len(outliers) > limit or (report.forced and report.iterations == 0)) and (
        report.nodes_added < budget
    ):
        k = min(cfg.nodes_per_step, budget - report.nodes_added)
        grow_level(ae, L, k, rng)
        # a forced step with no outliers still needs data for its new nodes
        plastic_rows = new_data[outliers] if len(outliers) else new_data
        train_shl(
            enc, dec, encode_to_level(ae, plastic_rows, L - 1, allow_zero=True),
            tc, rng, plastic, boundary, epochs=cfg.plasticity_epochs,
        )
        train_shl(
            enc, dec, encode_to_level(ae, stable_train, L - 1, allow_zero=True),
            tc, rng, stable, boundary, epochs=cfg.stability_epochs,
        )
        report.nodes_added += k
        report.iterations += 1
        outliers = detect_outliers(ae, new_data, L, threshold)
        report.outlier_history.append(len(outliers))
        log.debug("level %d: +%d nodes, %d outliers", L, k, len(outliers))

    report.outliers_after = len(outliers)
    report.width_after = enc.out_dim
    report.mean_re_after = _class_means(ae, eval_sets, L)
    return ae, report


def propagate_to_next_level(
    ae: StackedAutoencoder,
    L: int,
    new_data,
    stable_train,
    cfg: NeurogenesisConfig,
    rng: np.random.Generator,
    new_input_boundary: int | None = None,
) -> StackedAutoencoder:
    """Retrain level L+1 after level L grew: on the new class, then on the stable set.

    ``new_input_boundary`` is level L's width before it grew; it marks which
    fan-in columns of level L+1 are new for the ``new_connections`` mode.
    """
    if L >= ae.depth:
        raise ValueError("the top level has no next level to propagate to")
    tc = cfg.train_config()
    plastic_rows = new_data if cfg.propagation_data == "new" else stable_train
    train_level(
        ae, L + 1, plastic_rows, tc, rng, cfg.propagation_mask(),
        epochs=cfg.plasticity_epochs, new_input_boundary=new_input_boundary,
    )
    train_level(
        ae, L + 1, stable_train, tc, rng,
        LrMask.uniform(1.0 / cfg.propagation_divisor()), epochs=cfg.stability_epochs,
    )
    return ae


def run_ndl(
    ae: StackedAutoencoder,
    new_class_data,
    label: int,
    store: ReplayStore,
    cfg: NeurogenesisConfig,
    rng: np.random.Generator,
    round_index: int | None = None,
) -> tuple[StackedAutoencoder, ReplayStore, GrowthReport]:
    """One full neurogenesis round for a new class.

    Replay snapshots of the old classes are drawn once, before any growth,
    and reused for the stable set and for refitting the store afterwards.
    The returned store covers the old classes plus ``label``.
    """
    if len(cfg.thresholds) != ae.depth:
        raise ConfigError(f"config has {len(cfg.thresholds)} levels, model has {ae.depth}")
    new_class_data = np.asarray(new_class_data, dtype=np.float64)
    store.check_model(ae)
    snapshots = replay_snapshots(store, ae, cfg.per_class_count, rng)
    stable_train = assemble_stable_train(new_class_data, snapshots, rng)
    eval_sets = {int(label): new_class_data, **snapshots}

    report = GrowthReport(class_label=int(label), round_index=round_index)
    grew_below = False
    for L in range(1, ae.depth + 1):
        ae, level_report = neurogenesis_level(
            ae, new_class_data, stable_train, L, cfg, rng, force=grew_below, eval_sets=eval_sets
        )
        report.levels.append(level_report)
        grew_below = level_report.nodes_added > 0
        if grew_below and L < ae.depth:
            propagate_to_next_level(
                ae, L, new_class_data, stable_train, cfg, rng, level_report.width_before
            )

    new_store = refresh_store(store, ae, snapshots, cfg.ridge)
    if new_class_data.shape[0]:
        new_store = new_store.with_class(fit_class_stats(ae, new_class_data, label, cfg.ridge))
    return ae, new_store, report
