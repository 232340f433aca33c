"""Monte Carlo estimates of multivariate-normal sign-region probabilities.

A sign region fixes which coordinates must be strictly positive and requires
the rest to be nonpositive (a drawn coordinate exactly at 0 counts as
nonpositive).  All 2^p sign regions partition R^p, so a single classification
pass over common draws yields every region probability at once, with the
estimates summing to one exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _rng
from ._linalg import as_matrix, as_vector, symmetrize
from .exceptions import CovarianceError, ShapeError

__all__ = ["OrthantQuery", "region_probability", "all_pattern_probabilities",
           "pattern_counts"]

_BATCH = 1 << 15
_MAX_DIM = 20


@dataclass(frozen=True)
class OrthantQuery:
    """A single sign-region probability query.

    Attributes
    ----------
    mean, covariance
        Parameters of the normal law (covariance PSD; singular allowed).
    positive_set : tuple of int
        0-based coordinates required > 0; the complement is required <= 0.
    draws : int
        Monte Carlo sample size (>= 1000).
    seed : int
        Stream seed; estimates are a pure function of (query, seed).
    """

    mean: np.ndarray
    covariance: np.ndarray
    positive_set: tuple[int, ...]
    draws: int = 100_000
    seed: int = 0

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = as_matrix(self.covariance, "covariance")
        p = mean.shape[0]
        if cov.shape != (p, p):
            raise ShapeError(f"covariance must be {p}x{p}, got {cov.shape}")
        pos = tuple(sorted(int(i) for i in self.positive_set))
        if any(i < 0 or i >= p for i in pos) or len(set(pos)) != len(pos):
            raise ShapeError("positive_set indices out of range or duplicated")
        if self.draws < 1000:
            raise ShapeError("draws must be at least 1000")
        if p > _MAX_DIM:
            raise ShapeError(f"dimension capped at {_MAX_DIM}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "positive_set", pos)


def _factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, or eigen factor for PSD-singular covariances."""
    cov = symmetrize(cov)
    scale = max(1.0, float(np.abs(cov).max()))
    if not np.allclose(cov, cov.T, atol=1e-10 * scale):
        raise CovarianceError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        if np.min(vals) < -1e-10 * max(scale, float(vals.max(initial=0.0))):
            raise CovarianceError("covariance has a negative eigenvalue")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def pattern_counts(mean, covariance, draws: int, seed: int) -> dict[int, int]:
    """Classify common normal draws by sign pattern.

    Returns a dict mapping bitmask (bit j set = coordinate j > 0) to draw
    count.  Batches are split on fixed index boundaries with one stream per
    batch, so the counts do not depend on how batches are scheduled.
    """
    mean = as_vector(mean, "mean")
    factor = _factor(as_matrix(covariance, "covariance"))
    p = mean.shape[0]
    weights = (1 << np.arange(p)).astype(np.int64)
    counts = np.zeros(1 << p, dtype=np.int64)
    for index, start, stop in _rng.batch_ranges(draws, _BATCH):
        gen = _rng.stream(seed, _rng.DOMAIN_ORTHANT, index)
        z = gen.standard_normal((stop - start, p))
        x = mean + z @ factor.T
        masks = (x > 0.0) @ weights
        counts += np.bincount(masks, minlength=1 << p)
    return {int(mask): int(n) for mask, n in enumerate(counts) if n > 0}


def _mask_of(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def _binomial_se(p_hat: float, n: int) -> float:
    return float(np.sqrt(p_hat * (1.0 - p_hat) / n))


def region_probability(q: OrthantQuery) -> tuple[float, float]:
    """Estimate P(coordinates in positive_set > 0, the rest <= 0).

    Returns
    -------
    (estimate, std_error)
        Monte Carlo estimate with its binomial standard error.
    """
    counts = pattern_counts(q.mean, q.covariance, q.draws, q.seed)
    hits = counts.get(_mask_of(q.positive_set), 0)
    p_hat = hits / q.draws
    return p_hat, _binomial_se(p_hat, q.draws)


def all_pattern_probabilities(mean, covariance,
                              patterns: Sequence[Iterable[int]],
                              draws: int, seed: int) -> list[tuple[float, float]]:
    """Estimate many sign-region probabilities from one set of common draws.

    ``patterns`` is a sequence of positive-coordinate index sets.  When it
    enumerates all 2^p sign patterns the estimates sum to exactly one, since
    each draw lands in exactly one region (the largest entry absorbs the
    float-division rounding residual, well below one part in 1e12).
    """
    counts = pattern_counts(mean, covariance, draws, seed)
    masks = [_mask_of(pattern) for pattern in patterns]
    probs = [counts.get(mask, 0) / draws for mask in masks]
    p = np.asarray(mean).shape[0]
    if sorted(masks) == list(range(1 << p)):
        top = int(np.argmax(probs))
        for _ in range(5):
            residual = 1.0 - math.fsum(probs)
            if residual == 0.0:
                break
            probs[top] += residual
    return [(p_hat, _binomial_se(p_hat, draws)) for p_hat in probs]
