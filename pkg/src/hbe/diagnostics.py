"""Numeric verifiers for the variance-analysis inequalities plus
empirical moment and collision-rate measurement helpers.

Every checker evaluates both sides of an inequality in double precision
with compensated summation and reports an InequalityCheck; `holds` uses
a 1e-9 relative tolerance so genuine violations are distinguishable
from rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import ballcarving
from .hbe_core import BallCarvingSpec, EuclideanSpec

_TOL = 1e-9


@dataclass(frozen=True)
class InequalityCheck:
    """One evaluated inequality lhs <= rhs."""

    lhs: float
    rhs: float
    holds: bool
    slack: float

    @classmethod
    def of(cls, lhs: float, rhs: float) -> "InequalityCheck":
        return cls(
            lhs=lhs,
            rhs=rhs,
            holds=lhs <= rhs + _TOL * max(1.0, abs(rhs)),
            slack=rhs - lhs,
        )


def check_monotone_holder(x, beta: float) -> InequalityCheck:
    """For |x_1| >= ... >= |x_n| > 0 and beta in [1/2, 1]:

        sum_i |x_i|^((2-beta)/beta) (i + sum_{j>i} |x_j|/|x_i|)
            <= n^beta (sum_i |x_i|^(1/beta))^(2-beta)

    with equality at constant vectors."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    if not (0.5 <= beta <= 1.0):
        raise ValueError("beta must be in [1/2, 1]")
    if np.any(np.diff(x) > 1e-12) or np.any(x == 0.0):
        raise ValueError("x must be sorted by |x| descending with no zeros")
    n = len(x)
    suffix = np.concatenate([np.cumsum(x[::-1])[::-1][1:], [0.0]])
    ranks = np.arange(1, n + 1, dtype=np.float64)
    lhs = math.fsum(x ** ((2.0 - beta) / beta) * (ranks + suffix / x))
    rhs = n**beta * math.fsum(x ** (1.0 / beta)) ** (2.0 - beta)
    return InequalityCheck.of(lhs, rhs)


def check_two_sided_holder(A, v, w, S, Sp, x) -> InequalityCheck:
    """sum_{i in S, j in S'} A_ij x_i x_j <= ||x||_{v,1} ||x||_{w,1}
    * max_{i in S, j in S'} |A_ij| / (v_i w_j), where the weighted norms
    run over S and S' respectively."""
    A = np.asarray(A, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    S = np.asarray(S, dtype=np.int64)
    Sp = np.asarray(Sp, dtype=np.int64)
    if np.any(v <= 0) or np.any(w <= 0):
        raise ValueError("v and w must be strictly positive")
    sub = A[np.ix_(S, Sp)]
    lhs = math.fsum((sub * np.outer(x[S], x[Sp])).ravel())
    norm_v = math.fsum(v[S] * np.abs(x[S]))
    norm_w = math.fsum(w[Sp] * np.abs(x[Sp]))
    ratio = float(np.max(np.abs(sub) / np.outer(v[S], w[Sp]))) if len(S) and len(Sp) else 0.0
    return InequalityCheck.of(lhs, norm_v * norm_w * ratio)


def check_holder_corollary(
    x, beta: float, p: float, q: float
) -> tuple[InequalityCheck, InequalityCheck]:
    """||x||_beta^beta <= ||x||_1^beta n^(1-beta) for beta in [0,1], and
    ||x||_p^p <= ||x||_q^q ||x||_inf^(p-q) for p >= q > 0."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must be in [0, 1]")
    if not (p >= q > 0.0):
        raise ValueError("need p >= q > 0")
    n = len(x)
    first = InequalityCheck.of(
        math.fsum(x**beta), math.fsum(x) ** beta * n ** (1.0 - beta)
    )
    x_inf = float(np.max(x, initial=0.0))
    second = InequalityCheck.of(
        math.fsum(x**p), math.fsum(x**q) * x_inf ** (p - q)
    )
    return first, second


@dataclass(frozen=True)
class MomentReport:
    """Sample moments with jackknife standard errors."""

    mean: float
    second_moment: float
    relative_variance: float
    mean_se: float
    second_moment_se: float
    relative_variance_se: float
    trials: int


def empirical_moments(sampler, trials: int) -> MomentReport:
    """First and second sample moments of `sampler(trials)` draws, with
    leave-one-out jackknife standard errors for every reported figure."""
    if trials < 2:
        raise ValueError("need at least 2 trials")
    z = np.asarray(sampler(trials), dtype=np.float64)
    s1, s2 = float(np.sum(z)), float(np.sum(z * z))
    n = trials
    mean = s1 / n
    m2 = s2 / n
    var = max(m2 - mean**2, 0.0)
    rel = var / mean**2 if mean != 0.0 else 0.0
    # leave-one-out replicates, vectorized
    mean_i = (s1 - z) / (n - 1)
    m2_i = (s2 - z * z) / (n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_i = np.where(
            mean_i != 0.0, np.maximum(m2_i - mean_i**2, 0.0) / mean_i**2, 0.0
        )

    def jack_se(theta: float, theta_i: NDArray[np.float64]) -> float:
        return float(np.sqrt((n - 1) / n * np.sum((theta_i - np.mean(theta_i)) ** 2)))

    return MomentReport(
        mean=mean,
        second_moment=m2,
        relative_variance=rel,
        mean_se=jack_se(mean, mean_i),
        second_moment_se=jack_se(m2, m2_i),
        relative_variance_se=jack_se(rel, rel_i),
        trials=n,
    )


def empirical_collision_rate(
    hash_spec, x, y, trials: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Fraction of freshly sampled hash functions mapping x and y to the
    same bucket, with its binomial standard error."""
    if trials < 1:
        raise ValueError("need at least one trial")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = x.shape[0]
    hits = 0
    if isinstance(hash_spec, EuclideanSpec):
        w, D = hash_spec.w, hash_spec.D
        chunk = max(1, min(trials, 200_000 // max(D, 1)))
        done = 0
        while done < trials:
            k = min(chunk, trials - done)
            g = rng.standard_normal((k * D, d))
            b = rng.uniform(0.0, w, size=k * D)
            kx = np.ceil((g @ x + b) / w)
            ky = np.ceil((g @ y + b) / w)
            hits += int(np.sum(np.all((kx == ky).reshape(k, D), axis=1)))
            done += k
    elif isinstance(hash_spec, BallCarvingSpec):
        P = np.stack([x, y])
        for _ in range(trials):
            h = ballcarving.sample_ball_carving(
                hash_spec.t, hash_spec.w, hash_spec.D, d, 2, rng
            )
            h.fit(P)
            hits += int(np.all(h.keys[0] == h.keys[1]))
    else:
        raise TypeError(f"unsupported hash spec {type(hash_spec).__name__}")
    rate = hits / trials
    se = math.sqrt(max(rate * (1.0 - rate), 1.0 / trials) / trials)
    return rate, se
