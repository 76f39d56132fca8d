"""Ball-carving LSH: geometry helpers, exact collision probability, and
the bracketing formulas."""

import math

import numpy as np
import pytest

from hbe.ballcarving import (
    BallCarvingHash,
    EMPTY_BUCKET,
    cap_ratio,
    collision_prob_ball_bounds,
    collision_prob_ball_exact,
    eval_ball_carving,
    lens_over_union,
    sample_ball_carving,
    unit_ball_volume,
)


def test_unit_ball_volume_known_values():
    assert unit_ball_volume(1) == pytest.approx(2.0, rel=1e-12)
    assert unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-12)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0, rel=1e-12)


def test_cap_ratio_edges_and_monte_carlo(rng):
    t = 6
    assert cap_ratio(0.0, t) == pytest.approx(0.5, rel=1e-12)
    assert cap_ratio(1.0, t) == pytest.approx(0.0, abs=1e-12)
    # Monte Carlo oracle: fraction of uniform ball points with first
    # coordinate above alpha
    alpha = 0.3
    z = rng.standard_normal((200_000, t))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radius = rng.random(200_000) ** (1.0 / t)
    first = z[:, 0] * radius
    mc = float(np.mean(first > alpha))
    se = math.sqrt(mc * (1 - mc) / 200_000)
    assert cap_ratio(alpha, t) == pytest.approx(mc, abs=4 * se)


def test_lens_over_union_is_cap_over_complement():
    i = float(cap_ratio(0.4, 9))
    assert lens_over_union(0.4, 9) == pytest.approx(i / (1.0 - i), rel=1e-12)


def test_collision_prob_exact_edges():
    assert collision_prob_ball_exact(12, 0.0) == 1.0
    # monotone non-increasing in c
    cs = np.linspace(0.05, 2.0, 25)
    ps = [collision_prob_ball_exact(12, float(c)) for c in cs]
    assert all(0.0 <= p <= 1.0 for p in ps)
    assert all(a >= b - 1e-12 for a, b in zip(ps, ps[1:]))


def test_conditional_collision_matches_lens_over_union(rng):
    """At fixed projected separation the two-point carving frequency is
    the lens/union ratio that the quadrature integrates over."""
    t, c, trials = 12, 0.8, 3000
    P = np.zeros((2, t))
    hits = 0
    for _ in range(trials):
        h = sample_ball_carving(t, 1.0, 1, t, 2, rng)
        # identity-like projected geometry: place the points directly at
        # projected separation c by drawing a fresh random direction
        u = rng.standard_normal(t)
        u /= np.linalg.norm(u)
        Q = np.stack([np.zeros(t), c * u])
        h.projections = np.eye(t)[None, :, :]
        h.fit(Q)
        hits += int(np.all(h.keys[0] == h.keys[1]))
    rate = hits / trials
    se = math.sqrt(max(rate * (1 - rate), 1.0 / trials) / trials)
    # conditional probability at fixed projected separation c is
    # lens/union at alpha = c/2
    expected = float(lens_over_union(c / 2.0, t))
    assert rate == pytest.approx(expected, abs=4 * se)


def test_bounds_bracket_exact():
    t = 16
    lo_c = math.sqrt(16.0 / (t + 7))
    for c in np.linspace(lo_c, 1.0, 12):
        bound = collision_prob_ball_bounds(t, float(c))
        exact = collision_prob_ball_exact(t, float(c))
        assert bound.lower <= exact * (1 + 1e-9)
        assert exact <= bound.upper * (1 + 1e-9)


def test_bounds_domain():
    with pytest.raises(ValueError):
        collision_prob_ball_bounds(8, 0.95)
    with pytest.raises(ValueError):
        collision_prob_ball_bounds(16, 1.5)
    with pytest.raises(ValueError):
        collision_prob_ball_bounds(16, 0.1)


def test_fit_covers_every_point(rng):
    h = sample_ball_carving(4, 2.0, 2, 5, 30, rng)
    pts = rng.standard_normal((30, 5))
    h.fit(pts)
    assert h.keys.shape == (30, 2)
    assert np.all(h.keys >= 0)
    # stored assignment is what eval reports for dataset points
    for i in (0, 17, 29):
        assert eval_ball_carving(h, pts[i], i) == tuple(h.keys[i])


def test_novel_query_deterministic(rng):
    h = sample_ball_carving(4, 2.0, 2, 5, 20, rng)
    pts = rng.standard_normal((20, 5))
    h.fit(pts)
    x = rng.standard_normal(5)
    k1 = eval_ball_carving(h, x, -1)
    k2 = eval_ball_carving(h, x, -1)
    assert k1 == k2


def test_distant_query_gets_empty_bucket(rng):
    h = sample_ball_carving(4, 1.0, 2, 5, 20, rng)
    pts = 0.1 * rng.standard_normal((20, 5))
    h.fit(pts)
    x = np.full(5, 100.0)
    key = eval_ball_carving(h, x, -1)
    assert all(k == EMPTY_BUCKET for k in key)


def test_unfitted_hash_rejected(rng):
    h = sample_ball_carving(4, 1.0, 1, 3, 5, rng)
    with pytest.raises(RuntimeError):
        eval_ball_carving(h, np.zeros(3), -1)
