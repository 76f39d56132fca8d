"""Hash-table indexes serving unbiased HBE samples, plus variance
bounds and the kernel-specific scale-free constructions.

One HBE sample for query x against one table: hash x, and if the bucket
is empty return 0, otherwise pick a uniform resident y and return

    Z = (k(x, y) / p(||x - y||)) * |bucket| / n

where p is the analytic collision probability of the table's hash
family.  Z is unbiased for the KDE whenever p(r) > 0 wherever k(r) > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from . import ballcarving
from ._seeds import derive_rng
from .kernels import KernelSpec, PointSet, kernel_of_distance
from .lsh import (
    EuclideanHash,
    collision_prob_euclidean,
    eval_euclidean_batch,
    sample_euclidean,
)

SQRT_E = math.sqrt(math.e)


class TableBudgetError(RuntimeError):
    """All N tables of a query session were consumed."""


@dataclass(frozen=True)
class EuclideanSpec:
    """Parameters of the concatenated line-partition family."""

    w: float
    D: int


@dataclass(frozen=True)
class BallCarvingSpec:
    """Parameters of the concatenated ball-carving family."""

    t: int
    w: float
    D: int


@dataclass(frozen=True)
class VarianceBound:
    """Bound on E[Z^2]; relative = value / mu^2 is the V(mu) form."""

    value: float
    relative: float


# ---------------------------------------------------------------------------
# variance bounds


def second_moment_upper_bound(weights, probs, n: int) -> float:
    """Second-moment bound (1/n^2) sum_i (w_i^2/p_i)(i + sum_{j>i} p_j/p_i)
    for a bucket built from independent collisions with probabilities
    probs (sorted non-increasing, matching weight order)."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if w.shape != p.shape or w.ndim != 1:
        raise ValueError("weights and probs must be equal-length vectors")
    if np.any(np.diff(p) > 1e-12):
        raise ValueError("probs must be sorted non-increasing")
    if np.any((p <= 0) | (p > 1)) or np.any((w < 0) | (w > 1)):
        raise ValueError("need probs in (0,1] and weights in [0,1]")
    k = w.shape[0]
    # suffix sums of p for the sum_{j>i} p_j term
    suffix = np.concatenate([np.cumsum(p[::-1])[::-1][1:], [0.0]])
    ranks = np.arange(1, k + 1, dtype=np.float64)
    terms = (w * w / p) * (ranks + suffix / p)
    return float(np.sum(terms) / (n * n))


def two_point_variance_bound(
    weights, probs, mu: float
) -> tuple[VarianceBound, tuple[int, int]]:
    """Bound 4 * max_{ij} f_i A_ij f_j with f_i = min(1, mu/w_i) and
    A_ij = (w_i^2/p_i) for j <= i, (w_i^2/p_i^2) p_j for j > i.
    Returns the bound and the maximizing index pair."""
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if np.any(np.diff(p) > 1e-12):
        raise ValueError("probs must be sorted non-increasing")
    if np.any((p <= 0) | (p > 1)) or np.any((w <= 0) | (w > 1)):
        raise ValueError("need probs and weights in (0,1]")
    f = np.minimum(1.0, mu / w)
    k = w.shape[0]
    lower = np.tril(np.ones((k, k)))
    a = (w * w / p)[:, None] * lower + ((w * w / (p * p))[:, None] * p[None, :]) * (
        1.0 - lower
    )
    vals = f[:, None] * a * f[None, :]
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    value = 4.0 * float(vals[i, j])
    return VarianceBound(value=value, relative=value / mu**2), (int(i), int(j))


def scale_free_variance_bound(
    beta: float, M: float, mu: float, tau_loc: float = 1.0, gamma_loc: float = 1.0
) -> VarianceBound:
    """Localized variance bound for a (beta, M)-scale free HBE:
    E[Z^2] <= mu^2 M^3 (2 tau^beta + gamma^(2-beta) + tau^(2beta-1) gamma^beta) mu^(-beta).
    With tau_loc = gamma_loc = 1 this is mu^2 * 4 M^3 mu^(-beta)."""
    if not (0.5 <= beta <= 1.0):
        raise ValueError("beta must be in [1/2, 1]")
    if M < 1.0 or not (0.0 < mu <= 1.0):
        raise ValueError("need M >= 1 and mu in (0, 1]")
    if not (mu <= tau_loc <= 1.0) or not (0.0 <= gamma_loc <= 1.0):
        raise ValueError("need tau_loc in [mu, 1] and gamma_loc in [0, 1]")
    bracket = 2.0 * tau_loc**beta
    if gamma_loc > 0.0:
        bracket += gamma_loc ** (2.0 - beta) + tau_loc ** (2.0 * beta - 1.0) * gamma_loc**beta
    value = mu**2 * M**3 * bracket * mu ** (-beta)
    return VarianceBound(value=value, relative=value / mu**2)


def variance_profile(
    P: PointSet, kernel: KernelSpec, p_fn, queries: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-query certified relative second-moment bounds.

    For each query row the second-moment lemma is evaluated against the
    exact weight/collision profile of the dataset, giving a pair
    (mu, E[Z^2] bound / mu^2).  Results are sorted by mu."""
    from .kernels import eval_kernel_many

    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    mus = np.empty(queries.shape[0])
    rels = np.empty(queries.shape[0])
    for qi, x in enumerate(queries):
        dists = np.linalg.norm(P.coords - x, axis=1)
        order = np.argsort(dists)  # p_fn is non-increasing in distance
        w = eval_kernel_many(kernel, x, P.coords)[order]
        p = np.asarray(p_fn(dists[order]), dtype=np.float64)
        mu = float(np.mean(w))
        bound = second_moment_upper_bound(w, p, P.n)
        mus[qi] = mu
        rels[qi] = bound / mu**2
    order = np.argsort(mus)
    return mus[order], rels[order]


def monotone_variance_envelope(
    mus: NDArray[np.float64], rels: NDArray[np.float64], safety: float = 1.05
):
    """Smallest function above (mus, rels) that is a valid V(mu):
    non-increasing with mu^2 V(mu) non-decreasing.  Between grid points
    min(V at the next-lower mu, mu^2-scaled value at the next-higher mu)
    applies, which keeps both monotonicity properties; outside the grid
    the edge values extend as mu^{-1} (left) and constant (right)."""
    mus = np.asarray(mus, dtype=np.float64)
    v = np.maximum(np.asarray(rels, dtype=np.float64) * safety, 1.0)
    for _ in range(4):
        v = np.maximum.accumulate(v[::-1])[::-1]  # non-increasing in mu
        s = np.maximum.accumulate(mus**2 * v)  # mu^2 V non-decreasing
        v2 = s / mus**2
        if np.all(v2 <= v * (1 + 1e-12)):
            v = v2
            break
        v = np.maximum(v, v2)
    lo, hi = mus[0], mus[-1]
    v_lo, v_hi = float(v[0]), float(v[-1])
    s_grid = mus**2 * v

    def v_fn(mu: float) -> float:
        mu = min(max(float(mu), 1e-300), 1.0)
        if mu <= lo:
            return v_lo * lo / mu  # RS-style 1/mu growth, stays valid
        if mu >= hi:
            return v_hi
        k = int(np.searchsorted(mus, mu, side="right")) - 1
        return float(min(v[k], s_grid[k + 1] / mu**2))

    return v_fn


# ---------------------------------------------------------------------------
# scale-free constructions


@dataclass(frozen=True)
class HbeScheme:
    """A hash family plus its analytic collision probability, scale-free
    certificate (beta, M) and default relative-variance bound."""

    hash_spec: EuclideanSpec | BallCarvingSpec
    p_fn: Callable[[np.ndarray], np.ndarray]
    beta: float
    M: float
    v_fn: Callable[[float], float]
    complexity: float  # per-sample hash evaluation cost (concatenations)


def _euclid_p_fn(w: float, D: int) -> Callable:
    def p_fn(r):
        c = np.asarray(r, dtype=np.float64) / w
        p1 = collision_prob_euclidean(c)
        return np.asarray(p1) ** D if np.ndim(r) else float(p1) ** D

    return p_fn


def _clamped_power_v(coef: float, beta: float) -> Callable[[float], float]:
    def v_fn(mu: float) -> float:
        mu = min(max(mu, 1e-300), 1.0)
        return max(1.0, min(coef * mu ** (-beta), 1.0 / mu))

    return v_fn


def make_exponential_hbe(R: float, beta: float) -> HbeScheme:
    """Scale-free HBE for the unit-bandwidth exponential kernel e^{-r}:
    D = ceil(sqrt(2 pi) R)^2, w = D / (beta sqrt(pi/2)), giving
    e^{-beta r}/sqrt(e) <= p_fn(r) <= sqrt(e) e^{-beta r} on [0, R]."""
    if R <= 0 or not (0.0 < beta <= 1.0):
        raise ValueError("need R > 0 and beta in (0, 1]")
    D = math.ceil(math.sqrt(2.0 * math.pi) * R) ** 2
    w = D / (beta * math.sqrt(math.pi / 2.0))
    return HbeScheme(
        hash_spec=EuclideanSpec(w=w, D=D),
        p_fn=_euclid_p_fn(w, D),
        beta=beta,
        M=SQRT_E,
        v_fn=_clamped_power_v(4.0 * SQRT_E**3, beta),
        complexity=float(D),
    )


def make_student_hbe(p: int, q: int) -> HbeScheme:
    """(q/p, 3^q)-scale free HBE for the kernel 1/(1 + r^p):
    w = sqrt(2 pi) and q concatenations."""
    if not (isinstance(p, int) and isinstance(q, int)) or q < 1 or p < q:
        raise ValueError("need integers p >= q >= 1")
    w = math.sqrt(2.0 * math.pi)
    M = 3.0**q
    return HbeScheme(
        hash_spec=EuclideanSpec(w=w, D=q),
        p_fn=_euclid_p_fn(w, q),
        beta=q / p,
        M=M,
        v_fn=_clamped_power_v(4.0 * M**3, q / p),
        complexity=float(q),
    )


def make_gaussian_euclid_hbe(R: float, t: float) -> HbeScheme:
    """HBE for the unit-bandwidth Gaussian kernel from line partitions:
    D = 3 ceil(tR)^2, w = (D/t) sqrt(2/pi), with
    e^{-rt}/sqrt(e) <= p_fn(r) <= sqrt(e) e^{-rt} and relative variance
    V(mu) = 4 e^{3/2} mu^{-(gamma^2 - gamma + 1)}, gamma = t/sqrt(ln(1/mu)),
    clamped at 1/mu."""
    if not (1.0 <= t <= R):
        raise ValueError("need 1 <= t <= R")
    D = 3 * math.ceil(t * R) ** 2
    w = (D / t) * math.sqrt(2.0 / math.pi)

    def v_fn(mu: float) -> float:
        mu = min(max(mu, 1e-300), 1.0 - 1e-12)
        big_l = math.log(1.0 / mu)
        exponent = t * t - t * math.sqrt(big_l) + big_l
        v = 4.0 * math.exp(1.5) * math.exp(exponent)
        return max(1.0, min(v, 1.0 / mu))

    return HbeScheme(
        hash_spec=EuclideanSpec(w=w, D=D),
        p_fn=_euclid_p_fn(w, D),
        beta=float("nan"),  # not scale free in the (beta, M) sense
        M=SQRT_E,
        v_fn=v_fn,
        complexity=float(D),
    )


def make_gaussian_ball_hbe(
    R: float, beta: float, n: int, r_grid_size: int = 256
) -> HbeScheme:
    """Scale-free HBE for the unit-bandwidth Gaussian kernel e^{-r^2}
    via ball carving: t = max(ceil(R^{4/3}), 12), D = ceil(8 sqrt(t) R^2/(t-1)),
    w = sqrt((t-1) D / (8 beta)).

    p_fn is the exact single-copy collision probability (quadrature,
    tabulated on an r-grid) raised to the D-th power.  The distortion M
    against e^{-beta r^2} is measured on the grid and reported; the
    theory gives only M = e^{O(D log t)}."""
    if R <= 0 or not (0.0 < beta <= 1.0):
        raise ValueError("need R > 0 and beta in (0, 1]")
    t = max(math.ceil(R ** (4.0 / 3.0)), 12)
    D = math.ceil(8.0 * math.sqrt(t) * R * R / (t - 1))
    w = math.sqrt((t - 1) * D / (8.0 * beta))
    assert w >= t**0.25 * R * (1.0 - 1e-9)

    r_grid = np.linspace(0.0, 1.5 * R, r_grid_size)
    log_p1 = np.array(
        [math.log(ballcarving.collision_prob_ball_exact(t, r / w)) for r in r_grid[1:]]
    )

    def p_fn(r):
        scalar = np.ndim(r) == 0
        r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
        # log p_t is smooth and concave-ish in r; interpolate, extrapolate
        # linearly beyond the grid
        lp = np.interp(r_arr, r_grid[1:], log_p1)
        beyond = r_arr > r_grid[-1]
        if np.any(beyond):
            slope = (log_p1[-1] - log_p1[-2]) / (r_grid[-1] - r_grid[-2])
            lp[beyond] = log_p1[-1] + slope * (r_arr[beyond] - r_grid[-1])
        out = np.exp(D * lp)
        out[r_arr == 0.0] = 1.0
        return float(out[0]) if scalar else out

    # measured distortion against the ideal e^{-beta r^2} on [0, R]
    rs = r_grid[(r_grid > 0) & (r_grid <= R)]
    ratio = p_fn(rs) / np.exp(-beta * rs**2)
    M = float(max(np.max(ratio), np.max(1.0 / ratio)))
    return HbeScheme(
        hash_spec=BallCarvingSpec(t=t, w=w, D=D),
        p_fn=p_fn,
        beta=beta,
        M=M,
        v_fn=_clamped_power_v(4.0 * M**3, beta),
        complexity=float(D * t),
    )


# ---------------------------------------------------------------------------
# index


_FP_MULT = np.uint64(0x9E3779B97F4A7C15)


def _fingerprint_keys(keys: NDArray[np.int64]) -> NDArray[np.uint64]:
    """Mix an (n, D) integer key matrix into 64-bit fingerprints."""
    acc = np.zeros(keys.shape[0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(keys.shape[1]):
            acc ^= (keys[:, j].astype(np.uint64) + np.uint64(j + 1)) * _FP_MULT
            acc ^= acc >> np.uint64(29)
            acc *= np.uint64(0xBF58476D1CE4E5B9)
    return acc


@dataclass
class _Table:
    """One materialized hash table: point ids grouped by bucket."""

    fps: NDArray[np.uint64]  # sorted unique bucket fingerprints
    starts: NDArray[np.int64]  # bucket start offsets into ids
    ids: NDArray[np.int32]  # point ids grouped by bucket, sorted in bucket
    hash_obj: object | None = None  # retained for ball carving query eval

    def lookup(self, fp: np.uint64) -> tuple[int, int]:
        pos = int(np.searchsorted(self.fps, fp))
        if pos == len(self.fps) or self.fps[pos] != fp:
            return 0, 0
        return int(self.starts[pos]), int(self.starts[pos + 1])


def _group_by_fingerprint(fps: NDArray[np.uint64]) -> _Table:
    order = np.argsort(fps, kind="stable")
    sorted_fps = fps[order]
    boundaries = np.flatnonzero(np.diff(sorted_fps)) + 1
    starts = np.concatenate([[0], boundaries, [len(fps)]])
    return _Table(
        fps=sorted_fps[starts[:-1]],
        starts=starts.astype(np.int64),
        ids=order.astype(np.int32),
    )


@dataclass
class HbeIndex:
    """N hash tables over a point set plus the analytic collision
    probability; serves i.i.d. HBE samples per (query, table)."""

    points: PointSet
    kernel: KernelSpec
    scheme: HbeScheme
    N: int
    master_seed: int
    tables: list | None  # materialized _Table list, or None when lazy

    @property
    def n(self) -> int:
        return self.points.n

    def _make_euclidean(self, i: int) -> EuclideanHash:
        spec = self.scheme.hash_spec
        rng = derive_rng(self.master_seed, "table", i)
        return sample_euclidean(spec.w, spec.D, self.points.d, rng)

    def _build_table(self, i: int) -> _Table:
        spec = self.scheme.hash_spec
        if isinstance(spec, EuclideanSpec):
            h = self._make_euclidean(i)
            keys = eval_euclidean_batch(h, self.points.coords)
            table = _group_by_fingerprint(_fingerprint_keys(keys))
            table.hash_obj = h
            return table
        rng = derive_rng(self.master_seed, "table", i)
        h = ballcarving.sample_ball_carving(
            spec.t, spec.w, spec.D, self.points.d, self.points.n, rng
        )
        h.fit(self.points.coords)
        table = _group_by_fingerprint(_fingerprint_keys(h.keys))
        table.hash_obj = h
        return table

    def table(self, i: int) -> _Table:
        if not 0 <= i < self.N:
            raise IndexError("table index out of range")
        if self.tables is not None:
            t = self.tables[i]
            if t.hash_obj is None:  # deserialized table: regrow the hash
                spec = self.scheme.hash_spec
                if isinstance(spec, EuclideanSpec):
                    t.hash_obj = self._make_euclidean(i)
                else:
                    t.hash_obj = self._build_table(i).hash_obj
            return t
        return self._build_table(i)

    def query_bucket(self, table: _Table, x: NDArray[np.float64]) -> tuple[int, int]:
        """(start, end) slice of the query's bucket in table.ids."""
        spec = self.scheme.hash_spec
        if isinstance(spec, EuclideanSpec):
            keys = eval_euclidean_batch(table.hash_obj, x[None, :])
            fp = _fingerprint_keys(keys)[0]
        else:
            h: ballcarving.BallCarvingHash = table.hash_obj
            key = np.asarray(
                ballcarving.eval_ball_carving(h, x, -1), dtype=np.int64
            )
            if np.any(key == ballcarving.EMPTY_BUCKET):
                return 0, 0
            fp = _fingerprint_keys(key[None, :])[0]
        return table.lookup(fp)

    def sample_from_table(
        self, table: _Table, x: NDArray[np.float64], rng: np.random.Generator
    ) -> float:
        start, end = self.query_bucket(table, x)
        if end == start:
            return 0.0
        pick = int(rng.integers(start, end))
        y = self.points.coords[table.ids[pick]]
        r = float(np.linalg.norm(x - y))
        k = kernel_of_distance(self.kernel, r)
        p = self.scheme.p_fn(r)
        return (k / p) * (end - start) / self.n

    def sample_from_table_batch(
        self, table: _Table, X: NDArray[np.float64], u: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """One HBE sample per row of X from a single table.

        u supplies one uniform [0,1) variate per query for the resident
        pick, so callers control the randomness stream per query."""
        spec = self.scheme.hash_spec
        q = X.shape[0]
        if isinstance(spec, EuclideanSpec):
            fps = _fingerprint_keys(eval_euclidean_batch(table.hash_obj, X))
            pos = np.searchsorted(table.fps, fps)
            pos = np.minimum(pos, len(table.fps) - 1)
            hit = table.fps[pos] == fps
            starts = table.starts[pos]
            sizes = table.starts[pos + 1] - starts
            sizes = np.where(hit, sizes, 0)
        else:
            starts = np.zeros(q, dtype=np.int64)
            sizes = np.zeros(q, dtype=np.int64)
            for i in range(q):
                s, e = self.query_bucket(table, X[i])
                starts[i], sizes[i] = s, e - s
        out = np.zeros(q)
        nz = np.flatnonzero(sizes > 0)
        if nz.size == 0:
            return out
        picks = starts[nz] + np.floor(u[nz] * sizes[nz]).astype(np.int64)
        ys = self.points.coords[table.ids[picks]]
        r = np.sqrt(np.sum((X[nz] - ys) ** 2, axis=1))
        k = kernel_of_distance(self.kernel, r)
        p = self.scheme.p_fn(r)
        out[nz] = (np.atleast_1d(k) / p) * sizes[nz] / self.n
        return out


@dataclass
class TableCursor:
    """Cyclic cursor over a query session's table budget."""

    N: int
    offset: int
    used: int = 0

    def next(self) -> int:
        if self.used >= self.N:
            raise TableBudgetError(
                f"all {self.N} tables consumed in this query session"
            )
        i = (self.offset + self.used) % self.N
        self.used += 1
        return i


def build_index(
    P: PointSet,
    kernel: KernelSpec,
    scheme: HbeScheme,
    N: int,
    master_seed: int,
    materialize: bool = True,
) -> HbeIndex:
    """Build N tables from independent per-table streams derived from
    master_seed.  With materialize=False tables are regenerated from
    their seeds on demand (identical contents, no storage)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    index = HbeIndex(
        points=P, kernel=kernel, scheme=scheme, N=N, master_seed=master_seed,
        tables=None,
    )
    if materialize:
        index.tables = [index._build_table(i) for i in range(N)]
    return index


def hbe_sample(
    index: HbeIndex, cursor: TableCursor, x, rng: np.random.Generator
) -> float:
    """One HBE sample from the next unused table of the session."""
    x = np.asarray(x, dtype=np.float64)
    table = index.table(cursor.next())
    return index.sample_from_table(table, x, rng)
