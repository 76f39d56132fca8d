"""Inequality checkers and empirical measurement helpers."""

import math

import numpy as np
import pytest

from hbe.diagnostics import (
    InequalityCheck,
    check_holder_corollary,
    check_monotone_holder,
    check_two_sided_holder,
    empirical_collision_rate,
    empirical_moments,
)
from hbe.hbe_core import BallCarvingSpec, EuclideanSpec
from hbe.lsh import collision_prob_euclidean


def test_inequality_check_tolerance():
    assert InequalityCheck.of(1.0, 1.0).holds
    assert InequalityCheck.of(1.0 + 1e-12, 1.0).holds
    assert not InequalityCheck.of(1.0 + 1e-6, 1.0).holds


def test_monotone_holder_equality_constant_vector():
    # constant vectors meet the bound with equality
    for n in (1, 5, 20):
        for beta in (0.5, 0.8, 1.0):
            chk = check_monotone_holder(np.full(n, 0.37), beta)
            assert chk.holds
            assert chk.slack == pytest.approx(0.0, abs=1e-9 * max(1.0, chk.rhs))


def test_monotone_holder_random_sweep(rng):
    for _ in range(500):
        n = int(rng.integers(1, 40))
        x = np.sort(rng.random(n) * 0.99 + 0.01)[::-1]
        beta = float(rng.uniform(0.5, 1.0))
        assert check_monotone_holder(x, beta).holds


def test_monotone_holder_rejects_unsorted():
    with pytest.raises(ValueError):
        check_monotone_holder(np.array([0.1, 0.9]), 0.5)


def test_two_sided_holder_single_entry_equality(rng):
    # n = 1: lhs = A x^2, rhs = (v|x|)(w|x|) |A|/(v w) = |A| x^2
    A = np.array([[2.5]])
    chk = check_two_sided_holder(A, [1.3], [0.7], [0], [0], [0.9])
    assert chk.holds
    assert chk.lhs == pytest.approx(2.5 * 0.81, rel=1e-12)
    assert chk.slack == pytest.approx(0.0, abs=1e-9)


def test_two_sided_holder_random_sweep(rng):
    for _ in range(300):
        n = int(rng.integers(1, 15))
        A = rng.standard_normal((n, n))
        v = rng.random(n) + 0.1
        w = rng.random(n) + 0.1
        S = np.arange(n)[rng.random(n) < 0.8]
        Sp = np.arange(n)[rng.random(n) < 0.8]
        if len(S) == 0 or len(Sp) == 0:
            continue
        assert check_two_sided_holder(A, v, w, S, Sp, rng.standard_normal(n)).holds


def test_holder_corollary_random_sweep(rng):
    for _ in range(500):
        n = int(rng.integers(1, 40))
        x = rng.standard_normal(n)
        q = float(rng.uniform(0.2, 2.0))
        first, second = check_holder_corollary(x, float(rng.random()), q + 1.0, q)
        assert first.holds and second.holds


def test_holder_corollary_equality_cases():
    first, second = check_holder_corollary(np.array([0.7]), 0.5, 2.0, 2.0)
    assert first.slack == pytest.approx(0.0, abs=1e-9)
    assert second.slack == pytest.approx(0.0, abs=1e-9)


def test_empirical_moments_matches_coin(rng):
    mu = 0.3
    rep = empirical_moments(lambda k: (rng.random(k) < mu).astype(float), 50_000)
    assert rep.mean == pytest.approx(mu, abs=4 * rep.mean_se)
    assert rep.second_moment == pytest.approx(mu, abs=4 * rep.second_moment_se)
    true_rel = (mu - mu**2) / mu**2
    assert rep.relative_variance == pytest.approx(
        true_rel, abs=4 * rep.relative_variance_se
    )


def test_empirical_moments_se_shrinks(rng):
    ses = []
    for trials in (5_000, 20_000):
        rep = empirical_moments(lambda k: rng.random(k), trials)
        ses.append(rep.mean_se)
    ratio = ses[0] / ses[1]
    assert 1.2 <= ratio <= 2.8  # ~2 expected for 4x the trials


def test_collision_rate_identical_points(rng):
    spec = EuclideanSpec(w=1.0, D=2)
    rate, se = empirical_collision_rate(spec, np.zeros(3), np.zeros(3), 500, rng)
    assert rate == 1.0


def test_collision_rate_matches_closed_form(rng):
    spec = EuclideanSpec(w=1.0, D=1)
    x = np.zeros(2)
    y = np.array([1.0, 0.0])
    rate, se = empirical_collision_rate(spec, x, y, 100_000, rng)
    assert rate == pytest.approx(collision_prob_euclidean(1.0), abs=4 * se)


def test_collision_rate_ball_two_points(rng):
    from hbe.ballcarving import collision_prob_ball_exact

    spec = BallCarvingSpec(t=12, w=1.0, D=1)
    x = np.zeros(12)
    y = np.zeros(12)
    y[0] = 0.95
    rate, se = empirical_collision_rate(spec, x, y, 2_000, rng)
    exact = collision_prob_ball_exact(12, 0.95)
    assert rate == pytest.approx(exact, abs=max(4 * se, 0.03))
