"""Dense linear algebra, statistics and sampling primitives.

Matrices and vectors are plain ``float64`` numpy arrays. Randomness always
flows through a caller-owned :class:`numpy.random.Generator` built on PCG64;
standard normals come from numpy's ziggurat sampler, so a seed fully
determines every stream on a given numpy build.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInputError, FactorizationError, ShapeError, SymmetryError

SYMMETRY_TOL = 1e-9
RIDGE_SCALE = 1e-6


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bitgen = np.random.PCG64()
    bitgen.state = state
    return np.random.Generator(bitgen)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def mean_and_covariance(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and the (n - 1)-denominator sample covariance.

    A single row yields a zero covariance rather than an error. The
    covariance is symmetrized so that ``cov == cov.T`` holds exactly.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"samples must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n == 0:
        raise EmptyInputError("mean_and_covariance needs at least one sample")
    mean = x.mean(axis=0)
    if n == 1:
        return mean, np.zeros((d, d))
    centered = x - mean
    cov = (centered.T @ centered) / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def default_ridge(a: np.ndarray) -> float:
    """``1e-6 * trace(a) / n``; falls back to ``1e-6`` for a zero-trace matrix."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return 0.0
    scale = float(np.trace(a)) / n
    return RIDGE_SCALE * scale if scale > 0 else RIDGE_SCALE


def cholesky(a: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a + ridge * I``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got shape {a.shape}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0):
        raise SymmetryError(f"matrix is not symmetric (max |a - a.T| = {asym:.3g})")
    shifted = a + ridge * np.eye(a.shape[0])
    try:
        lower = np.linalg.cholesky(shifted)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"matrix is not positive definite with ridge={ridge:g}") from exc
    if not np.all(np.isfinite(lower)) or np.any(np.diag(lower) <= 0):
        raise FactorizationError(f"degenerate factor with ridge={ridge:g}")
    return lower


def _check_gaussian_shapes(mean: np.ndarray, chol: np.ndarray) -> None:
    if mean.ndim != 1:
        raise ShapeError(f"mean must be 1-D, got shape {mean.shape}")
    if chol.shape != (mean.shape[0], mean.shape[0]):
        raise ShapeError(f"chol shape {chol.shape} does not match mean length {mean.shape[0]}")


def sample_gaussian(rng: np.random.Generator, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """One draw of ``mean + chol @ z`` with ``z ~ N(0, I)``."""
    mean = np.asarray(mean, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    _check_gaussian_shapes(mean, chol)
    z = rng.standard_normal(mean.shape[0])
    return mean + chol @ z


def sample_gaussians(
    rng: np.random.Generator, mean: np.ndarray, chol: np.ndarray, count: int
) -> np.ndarray:
    """``count`` draws stacked as rows; same law as :func:`sample_gaussian`."""
    mean = np.asarray(mean, dtype=np.float64)
    chol = np.asarray(chol, dtype=np.float64)
    _check_gaussian_shapes(mean, chol)
    z = rng.standard_normal((count, mean.shape[0]))
    return mean + z @ chol.T
