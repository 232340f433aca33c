"""Sign-region Monte Carlo probabilities."""

import math

import numpy as np
import pytest

from icse_kit import CovarianceError, OrthantQuery, ShapeError
from icse_kit.orthant import all_pattern_probabilities, region_probability

DRAWS = 100_000


def _within(value, target, se, k=3.0):
    return abs(value - target) <= k * se


def test_independent_quadrant():
    q = OrthantQuery(mean=np.zeros(2), covariance=np.eye(2),
                     positive_set=(0, 1), draws=DRAWS, seed=101)
    est, se = region_probability(q)
    assert _within(est, 0.25, se)


def test_correlated_quadrant_arcsine_oracle():
    rho = 0.5
    cov = np.array([[1.0, rho], [rho, 1.0]])
    q = OrthantQuery(mean=np.zeros(2), covariance=cov,
                     positive_set=(0, 1), draws=DRAWS, seed=102)
    est, se = region_probability(q)
    oracle = 0.25 + math.asin(rho) / (2.0 * math.pi)
    assert _within(est, oracle, se)


def test_far_mean_degenerate():
    q = OrthantQuery(mean=np.array([10.0, -10.0]), covariance=np.eye(2),
                     positive_set=(0,), draws=10_000, seed=103)
    est, se = region_probability(q)
    assert est == pytest.approx(1.0, abs=1e-3)


def test_one_dimensional_symmetry():
    probs = all_pattern_probabilities(np.zeros(1), np.eye(1), [(), (0,)],
                                      draws=DRAWS, seed=104)
    for est, se in probs:
        assert _within(est, 0.5, se)
    assert probs[0][0] + probs[1][0] == 1.0


def test_all_patterns_sum_to_one_exactly():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((3, 3))
    cov = a @ a.T + 0.5 * np.eye(3)
    patterns = [tuple(i for i in range(3) if (mask >> i) & 1) for mask in range(8)]
    probs = all_pattern_probabilities(rng.standard_normal(3), cov, patterns,
                                      draws=20_000, seed=105)
    assert math.fsum(p for p, _ in probs) == 1.0


def test_monotone_in_mean_with_common_draws():
    cov = np.array([[1.0, 0.3], [0.3, 1.0]])
    patterns = [(0,), (0, 1)]
    lows = all_pattern_probabilities(np.array([-0.2, 0.1]), cov, patterns,
                                     draws=20_000, seed=106)
    highs = all_pattern_probabilities(np.array([0.4, 0.1]), cov, patterns,
                                      draws=20_000, seed=106)
    # Raising mean coordinate 0 cannot lose draws from patterns containing 0.
    for (lo, _), (hi, _) in zip(lows, highs):
        assert hi >= lo


def test_reflection_symmetry_up_to_mc_error():
    mean = np.array([0.3, -0.2, 0.6])
    rng = np.random.default_rng(8)
    a = rng.standard_normal((3, 3))
    cov = a @ a.T + np.eye(3)
    q1 = OrthantQuery(mean=mean, covariance=cov, positive_set=(0, 2),
                      draws=DRAWS, seed=107)
    q2 = OrthantQuery(mean=-mean, covariance=cov, positive_set=(1,),
                      draws=DRAWS, seed=107)
    e1, s1 = region_probability(q1)
    e2, s2 = region_probability(q2)
    # Boundary has measure zero, so the two regions are reflections.
    assert abs(e1 - e2) <= 4.0 * math.hypot(s1, s2) + 1e-6


def test_deterministic_given_seed():
    q = OrthantQuery(mean=np.zeros(2), covariance=np.eye(2),
                     positive_set=(1,), draws=50_000, seed=999)
    assert region_probability(q) == region_probability(q)


def test_singular_covariance_eigen_fallback():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank one
    q = OrthantQuery(mean=np.zeros(2), covariance=cov, positive_set=(0, 1),
                     draws=20_000, seed=108)
    est, se = region_probability(q)
    assert _within(est, 0.5, se)  # comonotone coordinates share their sign


def test_negative_definite_covariance_rejected():
    q = OrthantQuery(mean=np.zeros(2),
                     covariance=np.array([[1.0, 2.0], [2.0, 1.0]]),
                     positive_set=(0,), draws=2_000, seed=109)
    with pytest.raises(CovarianceError):
        region_probability(q)


def test_query_validation():
    with pytest.raises(ShapeError):
        OrthantQuery(mean=np.zeros(2), covariance=np.eye(2),
                     positive_set=(0,), draws=10, seed=1)
    with pytest.raises(ShapeError):
        OrthantQuery(mean=np.zeros(2), covariance=np.eye(2),
                     positive_set=(5,), draws=2_000, seed=1)
