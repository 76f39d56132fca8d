"""Ball-carving LSH: random projection to t dimensions, then a sequence
of random balls of radius w that carve the projected space.

One hash copy projects to t dimensions (Gaussian matrix scaled by
1/sqrt(t), so projected squared distances are (chi2_t/t) * r^2) and then
assigns every point to the first ball, in arrival order, of a unit-rate
Poisson process of centers that contains it.  Two points collide in one
copy iff the first center covering either of them covers both, which
happens with probability |B(x) n B(y)| / |B(x) u B(y)| conditional on
the projection.  Averaging over the chi-square projection law gives the
closed-form single-copy collision probability computed by
``collision_prob_ball_exact`` via quadrature; a full hash concatenates D
independent copies.

The center process is simulated exactly: centers restricted to the
union of balls around the projected data are sampled by thinning a
dominating process on the disjointified balls, and at query time the
competing first arrival in B(query) minus the data region is simulated
on demand.  A query whose first covering center holds no data points
lands in an empty bucket.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ._accel import njit
from .lsh import CollisionBound

EMPTY_BUCKET = -1


def unit_ball_volume(t: int) -> float:
    """Volume of the unit ball in t dimensions."""
    return math.pi ** (t / 2.0) / math.gamma(t / 2.0 + 1.0)


def cap_ratio(alpha, t: int):
    """Fraction of a t-ball's volume in the cap at relative distance alpha.

    alpha = (distance of the cutting plane from the center) / radius.
    """
    from scipy.special import betainc

    a = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)
    return 0.5 * betainc((t + 1) / 2.0, 0.5, 1.0 - a * a)


def lens_over_union(alpha, t: int):
    """Collision probability of two projected points at separation
    2*alpha*w conditioned on the projection: |lens| / |union|."""
    i = cap_ratio(alpha, t)
    return i / (1.0 - i)


def collision_prob_ball_exact(t: int, c: float) -> float:
    """Single-copy collision probability p_t(c) for two points at
    distance c*w, averaging the lens/union ratio over the chi-square
    projection law.  Exact up to quadrature error (~1e-10)."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if c == 0.0:
        return 1.0
    from scipy import integrate
    from scipy.stats import chi2

    # alpha = 0.5*sqrt(x/t)*c reaches 1 at x = 4t/c^2
    x_hi = min(4.0 * t / (c * c), chi2.isf(1e-14, t))

    def integrand(x):
        alpha = 0.5 * np.sqrt(x / t) * c
        return chi2.pdf(x, t) * lens_over_union(alpha, t)

    val, _ = integrate.quad(integrand, 0.0, x_hi, limit=200, epsabs=1e-12, epsrel=1e-10)
    return float(min(val, 1.0))


def collision_prob_ball_bounds(t: int, c: float) -> CollisionBound:
    """Bracketing formulas for p_t(c), valid for t >= 12 and
    16/(t+7) <= c^2 <= 1."""
    if t < 12:
        raise ValueError("bounds require t >= 12")
    if not (16.0 / (t + 7) * (1.0 - 1e-12) <= c * c <= 1.0 + 1e-12):
        raise ValueError(
            f"c^2={c*c:.6g} outside validity region [{16.0/(t+7):.6g}, 1]"
        )
    st = math.sqrt(t)
    main = math.exp(-(t - 1) / 8.0 * c * c)
    lower = (
        (1.0 / (4.0 * st * c))
        * (1.0 - 2.0 * math.exp(-9.0 * t / 100.0))
        * math.exp(-(t - 1) / 8.0 * c**4 / (2.0 - c * c))
        * main
    )
    upper = (
        (3.0 / (st * c))
        * (1.0 + (st * c / 3.0) * math.exp(-9.0 * t / 64.0))
        * math.exp((t - 1) / 64.0 * c**4)
        * main
    )
    return CollisionBound(lower=max(lower, 0.0), upper=upper)


@njit(cache=True)
def _carve_copy(Q, w, v_ball, max_centers, seed):
    """Carve one projected point set.

    Simulates the unit-rate Poisson center process restricted to the
    union of balls of radius w around the rows of Q by thinning a
    dominating process on the disjointified balls.  Returns the accepted
    centers (in arrival order), their arrival times, and for each point
    the index of its first covering center (-1 if none within the cap).
    """
    np.random.seed(seed)
    n, t = Q.shape
    centers = np.empty((max_centers, t))
    times = np.empty(max_centers)
    assign = np.full(n, -1, dtype=np.int64)
    n_centers = 0
    n_assigned = 0
    time = 0.0
    lam = n * v_ball
    w2 = w * w
    z = np.empty(t)
    while n_assigned < n and n_centers < max_centers:
        time += np.random.exponential(1.0 / lam)
        i = np.random.randint(0, n)
        # uniform point in the ball around Q[i]
        norm2 = 0.0
        for k in range(t):
            z[k] = np.random.standard_normal()
            norm2 += z[k] * z[k]
        radius = w * np.random.random() ** (1.0 / t)
        scale = radius / np.sqrt(norm2)
        for k in range(t):
            z[k] = Q[i, k] + z[k] * scale
        # thinning: accept with probability 1/#(balls containing z)
        m = 0
        for j in range(n):
            d2 = 0.0
            for k in range(t):
                diff = z[k] - Q[j, k]
                d2 += diff * diff
            if d2 <= w2:
                m += 1
        if np.random.random() * m > 1.0:
            continue
        idx = n_centers
        for k in range(t):
            centers[idx, k] = z[k]
        times[idx] = time
        n_centers += 1
        for j in range(n):
            if assign[j] >= 0:
                continue
            d2 = 0.0
            for k in range(t):
                diff = z[k] - Q[j, k]
                d2 += diff * diff
            if d2 <= w2:
                assign[j] = idx
                n_assigned += 1
    return centers[:n_centers], times[:n_centers], assign


@njit(cache=True)
def _query_copy(Q, centers, times, qx, w, v_ball, seed):
    """Bucket of a novel point for one fitted copy.

    Finds the first stored center covering qx and simulates the
    competing first arrival of the center process on B(qx, w) minus the
    data region.  Returns the center index, or -1 for an empty bucket.
    """
    np.random.seed(seed)
    n, t = Q.shape
    w2 = w * w
    first = -1
    t1 = np.inf
    for idx in range(centers.shape[0]):
        d2 = 0.0
        for k in range(t):
            diff = qx[k] - centers[idx, k]
            d2 += diff * diff
        if d2 <= w2:
            first = idx
            t1 = times[idx]
            break
    if first < 0:
        return -1
    # competing arrivals on B(qx, w) \ union of data balls
    time = 0.0
    z = np.empty(t)
    while True:
        time += np.random.exponential(1.0 / v_ball)
        if time >= t1:
            return first
        norm2 = 0.0
        for k in range(t):
            z[k] = np.random.standard_normal()
            norm2 += z[k] * z[k]
        radius = w * np.random.random() ** (1.0 / t)
        scale = radius / np.sqrt(norm2)
        for k in range(t):
            z[k] = qx[k] + z[k] * scale
        outside = True
        for j in range(n):
            d2 = 0.0
            for k in range(t):
                diff = z[k] - Q[j, k]
                d2 += diff * diff
            if d2 <= w2:
                outside = False
                break
        if outside:
            return -1


@dataclass
class BallCarvingHash:
    """D concatenated carving copies; fit() carves a point set."""

    t: int
    w: float
    D: int
    projections: NDArray[np.float64]  # (D, d, t), scaled by 1/sqrt(t)
    seed: int
    max_centers: int = 1_000_000
    # fitted state
    Q: list = field(default_factory=list)  # per copy (n, t) projected points
    centers: list = field(default_factory=list)
    times: list = field(default_factory=list)
    keys: NDArray[np.int64] | None = None  # (n, D) per-point center indices

    @property
    def d(self) -> int:
        return self.projections.shape[1]

    @property
    def v_ball(self) -> float:
        return unit_ball_volume(self.t) * self.w**self.t

    def fit(self, points: NDArray[np.float64]) -> None:
        """Carve the dataset; assigns every point a center per copy."""
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        self.Q, self.centers, self.times = [], [], []
        keys = np.empty((n, self.D), dtype=np.int64)
        for cpy in range(self.D):
            Q = np.ascontiguousarray(points @ self.projections[cpy])
            centers, times, assign = _carve_copy(
                Q, self.w, self.v_ball, self.max_centers,
                (self.seed + 0x9E3779B9 * (cpy + 1)) & 0x7FFFFFFF,
            )
            # cap exhausted before full coverage: singleton buckets
            uncovered = assign < 0
            if np.any(uncovered):
                assign = assign.copy()
                assign[uncovered] = centers.shape[0] + np.flatnonzero(uncovered)
            self.Q.append(Q)
            self.centers.append(centers)
            self.times.append(times)
            keys[:, cpy] = assign
        self.keys = keys

    def eval_query(self, x: NDArray[np.float64], query_seed: int) -> NDArray[np.int64]:
        """Per-copy bucket of a novel point (-1 marks an empty bucket)."""
        if self.keys is None:
            raise RuntimeError("hash not fitted; call fit() first")
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(self.D, dtype=np.int64)
        for cpy in range(self.D):
            qx = x @ self.projections[cpy]
            out[cpy] = _query_copy(
                self.Q[cpy], self.centers[cpy], self.times[cpy], qx,
                self.w, self.v_ball,
                (query_seed + 0x85EBCA6B * (cpy + 1)) & 0x7FFFFFFF,
            )
        return out


def sample_ball_carving(
    t: int,
    w: float,
    D: int,
    d: int,
    n_hint: int,
    rng: np.random.Generator,
    max_centers: int = 1_000_000,
) -> BallCarvingHash:
    """Draw one unfitted carving hash: D Gaussian projections scaled by
    1/sqrt(t).  n_hint sizes nothing directly but is kept so callers can
    sanity-check the center cap against the expected n*log(n) usage."""
    if t < 2 or w <= 0 or D < 1:
        raise ValueError("need t >= 2, w > 0, D >= 1")
    expected = int(4 * max(n_hint, 1) * (math.log(max(n_hint, 2)) + 1.0))
    if expected > max_centers:
        raise ValueError(
            f"center cap {max_centers} too small for t={t}, n_hint={n_hint}"
        )
    proj = rng.standard_normal((D, d, t)) / math.sqrt(t)
    seed = int(rng.integers(0, 2**31 - 1))
    return BallCarvingHash(t=t, w=w, D=D, projections=proj, seed=seed,
                           max_centers=max_centers)


def eval_ball_carving(h: BallCarvingHash, x, point_id: int) -> tuple[int, ...]:
    """Bucket key of a point.

    For a fitted dataset point (point_id in range) this is its stored
    assignment; for a novel point (point_id < 0 or out of range) the
    competing-arrival simulation runs, seeded from the coordinates so
    the result is a deterministic function of (hash, point)."""
    if h.keys is None:
        raise RuntimeError("hash not fitted; call fit() first")
    if 0 <= point_id < h.keys.shape[0]:
        return tuple(int(k) for k in h.keys[point_id])
    x = np.asarray(x, dtype=np.float64)
    digest = (zlib.crc32(x.tobytes()) ^ h.seed) & 0x7FFFFFFF
    return tuple(int(k) for k in h.eval_query(x, digest))
