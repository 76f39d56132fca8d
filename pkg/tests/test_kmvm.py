"""Dyadic weight partition and kernel-matrix-vector multiplication."""

import math

import numpy as np
import pytest

from hbe.hbe_core import TableCursor, build_index, make_exponential_hbe
from hbe.kernels import KernelSpec, PointSet, eval_kernel_many, point_set_from_coords
from hbe.kmvm import (
    WeightedClass,
    kmvm,
    kmvm_signed,
    partition_by_weight,
    weighted_hbe_sample,
)


def dense_oracle(P, kernel, z):
    y = np.empty(P.n)
    for i, x in enumerate(P.coords):
        y[i] = float(eval_kernel_many(kernel, x, P.coords) @ z)
    return y


def test_partition_is_exact(rng):
    n = 200
    z = rng.random(n)
    z /= z.sum()
    part = partition_by_weight(z, n, eps=0.5, tau=0.01)
    assert part.tau_prime == pytest.approx(0.005)
    assert part.L == math.ceil(math.log2(n / 0.005))
    seen = np.concatenate(part.classes)
    assert sorted(seen) == list(range(n))
    for l in range(1, part.L + 1):
        for i in part.classes[l]:
            assert 2.0**-l <= z[i] < 2.0 ** (-l + 1)
    for i in part.classes[0]:
        assert z[i] < part.tau_prime / n
    assert part.masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_partition_uniform_vector_single_class():
    n = 128
    z = np.full(n, 1.0 / n)
    part = partition_by_weight(z, n, eps=0.5, tau=0.1)
    l = int(math.log2(n))
    assert len(part.classes[l]) == n
    assert part.masses[l] == pytest.approx(1.0)


def test_partition_rejects_bad_input():
    with pytest.raises(ValueError):
        partition_by_weight(np.array([0.5, -0.5, 1.0]), 3, 0.5, 0.1)
    with pytest.raises(ValueError):
        partition_by_weight(np.array([0.5, 0.2]), 2, 0.5, 0.1)


def test_weighted_sample_unbiased(rng):
    """Empirical mean of the weighted HBE sample over fresh tables
    matches the class density (1/Z_l) sum z_i k(x, y_i)."""
    coords = 0.4 * rng.standard_normal((40, 3))
    P = point_set_from_coords(coords)
    kernel = KernelSpec("exponential", 1.0)
    scheme = make_exponential_hbe(max(P.R, 1.0), 0.5)
    # weights inside one dyadic level: [2^-6, 2^-5)
    z = (2.0**-6) * (1.0 + rng.random(40))
    mass = float(z.sum())
    index = build_index(P, kernel, scheme, N=600, master_seed=9, materialize=False)
    wclass = WeightedClass(level=6, ids=np.arange(40), z=z, mass=mass, index=index)
    x = 0.2 * np.ones(3)
    target = float(eval_kernel_many(kernel, x, coords) @ z) / mass
    cursor = TableCursor(N=600, offset=0)
    samples = np.array(
        [weighted_hbe_sample(wclass, cursor, x, rng) for _ in range(600)]
    )
    se = float(np.std(samples) / math.sqrt(len(samples)))
    assert float(np.mean(samples)) == pytest.approx(target, abs=4 * se)


def test_weighted_class_sandwich_validated(rng):
    index = object.__new__(object)  # never touched by the validator
    with pytest.raises(ValueError):
        WeightedClass(
            level=3, ids=np.arange(4), z=np.full(4, 0.5), mass=2.0, index=index
        )


def test_kmvm_exact_path_matches_oracle(rng):
    n = 150
    coords = 0.5 * rng.standard_normal((n, 4))
    P = point_set_from_coords(coords)
    kernel = KernelSpec("exponential", 1.0)
    z = rng.random(n) ** 3
    z /= z.sum()
    eps, tau = 0.3, 0.02
    y_hat = kmvm(P, kernel, z, eps, tau, 0.1, crossover=n)
    y = dense_oracle(P, kernel, z)
    # brute-force classes: only truncation of discarded mass remains
    assert np.all(np.abs(y_hat - y) <= 3 * eps * tau + 1e-12)


def test_kmvm_deterministic(rng):
    n = 60
    coords = 0.4 * rng.standard_normal((n, 3))
    P = point_set_from_coords(coords)
    kernel = KernelSpec("exponential", 1.0)
    z = rng.random(n)
    z /= z.sum()
    a = kmvm(P, kernel, z, 0.5, 0.05, 0.2, master_seed=3, crossover=n)
    b = kmvm(P, kernel, z, 0.5, 0.05, 0.2, master_seed=3, crossover=n)
    np.testing.assert_array_equal(a, b)


def test_kmvm_signed_negation_and_bound(rng):
    n = 120
    coords = 0.5 * rng.standard_normal((n, 3))
    P = point_set_from_coords(coords)
    kernel = KernelSpec("exponential", 1.0)
    z = rng.standard_normal(n)
    eps, tau = 0.3, 0.02
    y_pos = kmvm_signed(P, kernel, z, eps, tau, 0.1, crossover=n)
    y_neg = kmvm_signed(P, kernel, -z, eps, tau, 0.1, crossover=n)
    np.testing.assert_allclose(y_neg, -y_pos, rtol=1e-12, atol=1e-12)
    y = dense_oracle(P, kernel, z)
    mass = np.abs(z).sum()
    assert np.all(np.abs(y_pos - y) <= eps * (6 * tau * mass) + eps * np.abs(y) + 1e-9)


def test_class_estimates_hbe_path(rng):
    """The hashing path for one dyadic class: per-query two-phase
    estimates of the class density within the requested accuracy."""
    from hbe.estimation import tables_required
    from hbe.kmvm import _class_estimates_hbe

    n = 64
    coords = 0.05 * rng.standard_normal((n, 3))
    P = point_set_from_coords(coords)
    kernel = KernelSpec("exponential", 1.0)
    scheme = make_exponential_hbe(max(P.R, 1.0), 1.0)
    z = np.full(n, 1.0 / n)
    eps, tau_prime, chi = 0.6, 0.45, 0.45
    N = tables_required(eps, tau_prime, chi, scheme.v_fn)
    index = build_index(P, kernel, scheme, N=N, master_seed=5)
    wclass = WeightedClass(
        level=6, ids=np.arange(n), z=z, mass=1.0, index=index
    )
    X = coords[:3]
    est = _class_estimates_hbe(wclass, X, eps, tau_prime, chi, seed_base=0)
    for qi in range(3):
        target = float(eval_kernel_many(kernel, X[qi], coords) @ z)
        assert abs(est[qi] - target) <= eps * target
