"""Euclidean line-partition LSH and collision-probability calculators.

The hash family concatenates D copies of h(x) = ceil((g.x + b)/w) with
g ~ N(0, I_d) and b ~ U[0, w].  For two points at normalized distance
c = ||x-y||/w one copy collides with probability

    p1(c) = 1 - 2*Phi(1/c) - sqrt(2/pi) * c * (1 - exp(-1/(2 c^2)))

where Phi is the standard normal upper-tail CCDF.  Exponential bounds,
an alternating series for the c > 1 regime, and chi-square tail bounds
used by the ball-carving analysis live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

_SQRT_2_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class CollisionBound:
    """Bracket [lower, upper] for a collision probability."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.lower <= self.upper):
            raise ValueError("need 0 <= lower <= upper")

    def contains(self, p: float, margin: float = 0.0) -> bool:
        return self.lower * (1.0 - margin) <= p <= self.upper * (1.0 + margin)


@dataclass(frozen=True)
class EuclideanHash:
    """D concatenated line partitions of width w in dimension d."""

    w: float
    g: NDArray[np.float64]  # (D, d) Gaussian directions
    b: NDArray[np.float64]  # (D,) offsets in [0, w]

    @property
    def D(self) -> int:
        return self.g.shape[0]

    @property
    def d(self) -> int:
        return self.g.shape[1]


def sample_euclidean(
    w: float, D: int, d: int, rng: np.random.Generator
) -> EuclideanHash:
    """Draw one hash function with D independent (g, b) pairs."""
    if w <= 0 or D < 1 or d < 1:
        raise ValueError("need w > 0, D >= 1, d >= 1")
    g = rng.standard_normal((D, d))
    b = rng.uniform(0.0, w, size=D)
    return EuclideanHash(w=w, g=g, b=b)


def eval_euclidean(h: EuclideanHash, x) -> tuple[int, ...]:
    """Bucket key of a single point: D ceilinged projections."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (h.d,):
        raise ValueError("dimension mismatch")
    key = np.ceil((h.g @ x + h.b) / h.w).astype(np.int64)
    return tuple(int(k) for k in key)


def eval_euclidean_batch(h: EuclideanHash, X) -> NDArray[np.int64]:
    """Bucket keys for the rows of X, shape (n, D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != h.d:
        raise ValueError("dimension mismatch")
    return np.ceil((X @ h.g.T + h.b) / h.w).astype(np.int64)


def _ccdf(z):
    """Standard normal upper-tail CCDF to <= 1e-12 relative error."""
    from scipy.special import erfc

    return 0.5 * erfc(np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def collision_prob_euclidean(c):
    """Exact single-copy collision probability p1(c); p1(0) = 1.

    Accepts a scalar or an array of normalized distances c >= 0.
    Values below 1e-8 use the first-order form 1 - sqrt(2/pi)*c to
    avoid cancellation.
    """
    scalar = np.ndim(c) == 0
    c_arr = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if np.any(c_arr < 0):
        raise ValueError("normalized distance must be nonnegative")
    out = np.empty_like(c_arr)
    tiny = c_arr < 1e-8
    out[tiny] = 1.0 - _SQRT_2_PI * c_arr[tiny]
    big = ~tiny
    cb = c_arr[big]
    out[big] = (
        1.0
        - 2.0 * _ccdf(1.0 / cb)
        - _SQRT_2_PI * cb * (1.0 - np.exp(-0.5 / cb**2))
    )
    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if scalar else out


def collision_prob_euclidean_bounds(c: float, delta: float) -> CollisionBound:
    """Exponential sandwich for p1(c), valid for delta <= 1/2 and
    c <= min(delta, 1/sqrt(2 ln(1/delta)))."""
    if not (0.0 < delta <= 0.5):
        raise ValueError("delta must be in (0, 1/2]")
    c_max = min(delta, 1.0 / math.sqrt(2.0 * math.log(1.0 / delta)))
    if not (0.0 <= c <= c_max):
        raise ValueError(
            f"c={c} outside validity region [0, {c_max:.6g}] for delta={delta}"
        )
    lower = math.exp(-_SQRT_2_PI * (1.0 + delta) * c)
    upper = math.exp(-_SQRT_2_PI * (1.0 - delta**3) * c)
    return CollisionBound(lower=lower, upper=upper)


def collision_prob_euclidean_series(c: float, k_max: int) -> float:
    """Alternating-series partial sum for p1(c) in the c > 1 regime.

    Includes terms k = 0..k_max; the truncation error is bounded by the
    first neglected term.
    """
    if c <= 1.0:
        raise ValueError("series form requires c > 1")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    total = 0.0
    for k in range(k_max + 1):
        term = c ** -(2 * k + 1) / (
            2.0**k * math.factorial(k) * (2 * k + 2) * (2 * k + 1)
        )
        total += term if k % 2 == 0 else -term
    return _SQRT_2_PI * total


def chi_square_tail(t: int, a: float, side: str) -> float:
    """Exponential tail bound for a sum of t chi-square(1) variables.

    side="below" bounds P[sum <= a*t] for a < 1; side="above" bounds
    P[sum > a*t] for a > 1.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if side == "below":
        if not 0.0 < a < 1.0:
            raise ValueError("side='below' requires 0 < a < 1")
        exponent = (a + math.log(1.0 / a) - 1.0) * t / 2.0
    elif side == "above":
        if a <= 1.0:
            raise ValueError("side='above' requires a > 1")
        exponent = (a - math.log(a) - 1.0) * t / 2.0
    else:
        raise ValueError("side must be 'below' or 'above'")
    return math.exp(-exponent)
