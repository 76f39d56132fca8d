"""Shared fixtures: small synthetic datasets and seeded generators."""

import numpy as np
import pytest

from hbe.kernels import KernelSpec, PointSet, point_set_from_coords

# verdict lines recorded by the acceptance tests; echoed after the run so
# they survive output capture
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def blob_small(rng):
    """Tight Gaussian blob, n=60, d=4."""
    coords = 0.3 * rng.standard_normal((60, 4))
    return point_set_from_coords(coords)


@pytest.fixture
def blob_medium(rng):
    """Gaussian blob, n=400, d=6."""
    coords = 0.4 * rng.standard_normal((400, 6))
    return point_set_from_coords(coords)


@pytest.fixture
def exp_kernel():
    return KernelSpec("exponential", 1.0)


@pytest.fixture
def gauss_kernel():
    return KernelSpec("gaussian", 1.0)


def two_cluster(n: int, d: int, mu: float, kernel: KernelSpec, rng):
    """Worst-case instance: a query at the origin, n*mu/2 points on top of
    it, and the rest at the distance where the kernel weight is mu/2.

    Returns (PointSet, query, exact mu)."""
    from hbe.kernels import kde_exact

    k_near = max(1, int(round(n * mu / 2.0)))
    if kernel.kind == "gaussian":
        r = float(np.sqrt(np.log(2.0 / mu)))
    elif kernel.kind == "exponential":
        r = float(np.log(2.0 / mu))
    else:
        raise ValueError("two_cluster supports gaussian/exponential only")
    direction = np.zeros(d)
    direction[0] = 1.0
    coords = np.zeros((n, d))
    coords[k_near:] = r * direction
    P = PointSet(coords=coords, R=2.0 * r)
    x = np.zeros(d)
    return P, x, kde_exact(P, kernel, x)
