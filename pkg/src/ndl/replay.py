"""Intrinsic replay from class-conditional Gaussians over top-level codes.

For each class we keep the mean and Cholesky factor of the covariance of its
top-level codes. Pseudo-samples are drawn in code space and decoded through
the full decoder. The latent draws are not clamped; decoded pixels are.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numkernel
from .autoencoder import StackedAutoencoder, decode_from_level, encode_to_level
from .errors import EmptyInputError, FactorizationError, StaleStatsError, StatsError

log = logging.getLogger(__name__)

RIDGE_RETRIES = 3
RIDGE_GROWTH = 10.0
MAX_REPLAY_PER_CLASS = 1000


@dataclass
class ClassStats:
    class_label: int
    mean: np.ndarray
    chol: np.ndarray
    sample_count: int

    @property
    def code_width(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ReplayStore:
    """Immutable map from class label to :class:`ClassStats`."""

    model_code_width: int
    stats: dict[int, ClassStats] = field(default_factory=dict)

    def __post_init__(self):
        for label, st in self.stats.items():
            if st.code_width != self.model_code_width:
                raise StaleStatsError(
                    f"class {label} has code width {st.code_width}, store expects {self.model_code_width}"
                )

    @property
    def labels(self) -> list[int]:
        return sorted(self.stats)

    def __len__(self) -> int:
        return len(self.stats)

    def __contains__(self, label) -> bool:
        return label in self.stats

    def with_class(self, stats: ClassStats) -> "ReplayStore":
        merged = dict(self.stats)
        merged[stats.class_label] = stats
        return ReplayStore(self.model_code_width, merged)

    def check_model(self, ae: StackedAutoencoder) -> None:
        if self.stats and self.model_code_width != ae.code_width:
            raise StaleStatsError(
                f"replay store built for code width {self.model_code_width}, "
                f"model now has {ae.code_width}; refresh the store first"
            )


def fit_class_stats(
    ae: StackedAutoencoder, class_data, label: int, ridge: float | None = None
) -> ClassStats:
    """Fit the Gaussian of a class's top-level codes.

    ``ridge=None`` uses :func:`numkernel.default_ridge`. On factorization
    failure the ridge is multiplied by 10, up to three times.
    """
    data = np.asarray(class_data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptyInputError(f"class {label} has no samples")
    codes = encode_to_level(ae, data, ae.depth)
    mean, cov = numkernel.mean_and_covariance(codes)
    current = numkernel.default_ridge(cov) if ridge is None else float(ridge)
    for attempt in range(RIDGE_RETRIES + 1):
        try:
            chol = numkernel.cholesky(cov, current)
            break
        except FactorizationError:
            if attempt == RIDGE_RETRIES:
                raise StatsError(f"could not factor covariance of class {label}") from None
            current = current * RIDGE_GROWTH if current > 0 else numkernel.RIDGE_SCALE
            log.info("class %s: raising ridge to %g", label, current)
    return ClassStats(int(label), mean, chol, data.shape[0])


def generate_replay(
    ae: StackedAutoencoder, stats: ClassStats, count: int, rng: np.random.Generator
) -> np.ndarray:
    if stats.code_width != ae.code_width:
        raise StaleStatsError(
            f"class {stats.class_label} stats have width {stats.code_width}, "
            f"model code width is {ae.code_width}"
        )
    if count == 0:
        return np.zeros((0, ae.input_dim))
    latent = numkernel.sample_gaussians(rng, stats.mean, stats.chol, count)
    return np.clip(decode_from_level(ae, latent, ae.depth), 0.0, 1.0)


def replay_count(stats: ClassStats, per_class_count: int | None) -> int:
    if per_class_count is None:
        return min(MAX_REPLAY_PER_CLASS, stats.sample_count)
    return per_class_count


def replay_snapshots(
    store: ReplayStore,
    ae: StackedAutoencoder,
    per_class_count: int | None,
    rng: np.random.Generator,
) -> dict[int, np.ndarray]:
    """Pixel-space pseudo-samples for every stored class, in label order."""
    store.check_model(ae)
    return {
        label: generate_replay(ae, store.stats[label], replay_count(store.stats[label], per_class_count), rng)
        for label in store.labels
    }


def assemble_stable_train(
    new_class_data, snapshots: dict[int, np.ndarray], rng: np.random.Generator
) -> np.ndarray:
    parts = [np.asarray(new_class_data, dtype=np.float64)]
    parts += [snapshots[label] for label in sorted(snapshots)]
    rows = np.vstack(parts)
    return rows[rng.permutation(rows.shape[0])]


def build_stable_train(
    new_class_data,
    store: ReplayStore,
    ae: StackedAutoencoder,
    per_class_count: int | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """New-class rows plus replayed rows for every old class, shuffled."""
    snapshots = replay_snapshots(store, ae, per_class_count, rng)
    return assemble_stable_train(new_class_data, snapshots, rng)


def refresh_store(
    store: ReplayStore,
    ae: StackedAutoencoder,
    snapshots: dict[int, np.ndarray],
    ridge: float | None = None,
) -> ReplayStore:
    """Refit every stored class from its pixel snapshot under the current model.

    ``sample_count`` keeps the original class size so replay volumes stay
    stable across rounds. Classes with an empty or missing snapshot are
    dropped with a warning.
    """
    refreshed = ReplayStore(ae.code_width)
    for label in store.labels:
        snap = snapshots.get(label)
        if snap is None or len(snap) == 0:
            log.warning("no replay snapshot for class %s; dropping it from the store", label)
            continue
        st = fit_class_stats(ae, snap, label, ridge)
        st.sample_count = store.stats[label].sample_count
        refreshed = refreshed.with_class(st)
    return refreshed
