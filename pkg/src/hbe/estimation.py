"""Estimation drivers: Median-of-Means, shared-sample Adaptive Mean
Relaxation, the two-phase KDE query protocol, and RS/RFF baselines.

MoM turns a relative-variance bound V into an (eps, delta) estimate with
m = ceil(6 V / eps^2) samples per block and L = ceil(9 ln(1/delta))
blocks.  AMR finds an unknown mean mu to within a constant factor by
descending a geometric grid mu_i = (1-gamma)^i and accepting the first
level whose MoM estimate is consistent; the shared-sample variant keeps
L running sums and only tops them up as levels get cheaper to test.
Logs are natural throughout.

query_kde chains both: a constant-factor AMR stage at alpha = 1 with
failure budget chi/2 (returning 0 below the tau threshold), then a
single MoM pass at accuracy eps using V(mu_tilde / 2).  Every sample
consumes one fresh hash table via a cyclic per-query cursor; tables are
never reused within a query session.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from ._seeds import derive_rng
from .hbe_core import HbeIndex, TableBudgetError, TableCursor
from .kernels import KernelSpec, PointSet, eval_kernel_many

TABLE_BUDGET_FACTOR = 1.0  # C_N in the index-size precondition


class SampleBudgetError(RuntimeError):
    """Sample or table budget exhausted; carries progress so far."""

    def __init__(self, message: str, samples_used: int, partial=None):
        super().__init__(message)
        self.samples_used = samples_used
        self.partial = partial


@dataclass
class EstimatorHandle:
    """A source of i.i.d. nonnegative samples with a variance bound.

    Attributes:
        sampler: draws k i.i.d. samples as an array of shape (k,).
        v_fn: relative-variance bound, non-increasing with mu^2 V(mu)
            non-decreasing (checked on a log grid at construction).
        sample_budget: optional cap on total draws.
    """

    sampler: Callable[[int], NDArray[np.float64]]
    v_fn: Callable[[float], float]
    sample_budget: int | None = None
    drawn: int = 0

    def __post_init__(self) -> None:
        mus = np.logspace(-6, 0, 25)
        vs = np.array([self.v_fn(m) for m in mus])
        if np.any(vs < 0):
            raise ValueError("V(mu) must be nonnegative")
        if np.any(np.diff(vs) > 1e-9 * vs[:-1]):
            raise ValueError("V(mu) must be non-increasing in mu")
        second = mus**2 * vs
        if np.any(np.diff(second) < -1e-9 * second[1:]):
            raise ValueError("mu^2 V(mu) must be non-decreasing in mu")

    def draw(self, k: int) -> NDArray[np.float64]:
        if self.sample_budget is not None and self.drawn + k > self.sample_budget:
            raise SampleBudgetError(
                f"sample budget {self.sample_budget} exhausted", self.drawn
            )
        out = np.asarray(self.sampler(k), dtype=np.float64)
        self.drawn += k
        return out


@dataclass(frozen=True)
class EstimateReport:
    """Outcome of an adaptive estimation run."""

    value: float
    below_threshold: bool
    samples_used: int
    relaxation_steps: int
    mu_final: float

    def __post_init__(self) -> None:
        if self.below_threshold and self.value != 0.0:
            raise ValueError("below_threshold reports must carry value 0")


def mom_counts(eps: float, delta: float, V: float) -> tuple[int, int]:
    """Block size m = ceil(6 V / eps^2) and block count L = ceil(9 ln(1/delta))."""
    if not (0.0 < eps < 1.0 and 0.0 < delta < 1.0) or V < 0.0:
        raise ValueError("need eps, delta in (0,1) and V >= 0")
    m = max(1, math.ceil(6.0 * V / eps**2))
    L = max(1, math.ceil(9.0 * math.log(1.0 / delta)))
    return m, L


class _MomMachine:
    """Streaming median-of-means over a sample stream."""

    def __init__(self, m: int, L: int):
        self.m, self.L = m, L
        self.sums = np.zeros(L)
        self.count = 0
        self.value: float | None = None

    @property
    def need(self) -> int:
        return self.m * self.L - self.count

    def offer(self, z: NDArray[np.float64]) -> int:
        """Consume up to `need` samples; returns how many were taken."""
        if self.value is not None:
            return 0
        take = min(self.need, len(z))
        if take:
            idx = (self.count + np.arange(take)) % self.L
            self.sums += np.bincount(idx, weights=z[:take], minlength=self.L)
            self.count += take
        if self.need == 0:
            self.value = float(np.median(self.sums / self.m))
        return take


def median_of_means(handle: EstimatorHandle, V: float, eps: float, delta: float) -> float:
    """Median of L means of m samples each, drawn from the handle."""
    m, L = mom_counts(eps, delta, V)
    machine = _MomMachine(m, L)
    while machine.value is None:
        machine.offer(handle.draw(min(machine.need, 1 << 16)))
    return machine.value


@dataclass(frozen=True)
class _AmrParams:
    alpha: float
    tau: float
    chi: float
    eps: float
    c: float
    gamma: float
    delta: float
    L: int
    loop_cutoff: float
    out_cutoff: float


def _amr_params(alpha: float, tau: float, chi: float) -> _AmrParams:
    if not (0.0 < alpha <= 1.0 and 0.0 < tau < 1.0 and 0.0 < chi < 1.0):
        raise ValueError("need alpha in (0,1], tau in (0,1), chi in (0,1)")
    eps = 2.0 * alpha / 7.0
    c = eps / 2.0
    gamma = eps / 7.0
    delta = (2.0 * alpha / (49.0 * math.log(1.0 / tau))) * chi
    L = max(1, math.ceil(9.0 * math.log(1.0 / delta)))
    loop_cutoff = math.log(tau / (1.0 - (c + eps))) / math.log(1.0 - gamma)
    out_cutoff = 49.0 * math.log(1.0 / tau) / (2.0 * alpha)
    return _AmrParams(alpha, tau, chi, eps, c, gamma, delta, L, loop_cutoff, out_cutoff)


class _AmrMachine:
    """Shared-sample adaptive mean relaxation over a sample stream.

    L running sums are shared across levels; level i extends each block
    to m(eps/3, V(mu_i)) samples and compares the median of block means
    against mu_i = (1 - gamma)^i.
    """

    def __init__(self, params: _AmrParams, v_fn: Callable[[float], float]):
        self.p = params
        self.v_fn = v_fn
        self.sums = np.zeros(params.L)
        self.count = 0
        self.level = 0
        self.m = self._m_at(0)
        self.done = False
        self.value = 0.0
        self.below_threshold = False
        self.accepted_level: int | None = None

    def _m_at(self, i: int) -> int:
        mu_i = (1.0 - self.p.gamma) ** i
        return max(1, math.ceil(54.0 * self.v_fn(mu_i) / self.p.eps**2))

    @property
    def need(self) -> int:
        return 0 if self.done else self.m * self.p.L - self.count

    @property
    def mu_level(self) -> float:
        return (1.0 - self.p.gamma) ** self.level

    def _evaluate(self) -> None:
        z_i = float(np.median(self.sums / self.m))
        mu_i = self.mu_level
        if abs(z_i - mu_i) <= self.p.c * mu_i:
            self.done = True
            self.accepted_level = self.level
            if self.level <= self.p.out_cutoff:
                self.value = z_i
            else:
                self.value, self.below_threshold = 0.0, True
            return
        self.level += 1
        if self.level > self.p.loop_cutoff:
            self.done = True
            self.value, self.below_threshold = 0.0, True
            return
        self.m = self._m_at(self.level)

    def offer(self, z: NDArray[np.float64]) -> int:
        consumed = 0
        while not self.done:
            take = min(self.need, len(z) - consumed)
            if take:
                idx = (self.count + np.arange(take)) % self.p.L
                self.sums += np.bincount(
                    idx, weights=z[consumed : consumed + take], minlength=self.p.L
                )
                self.count += take
                consumed += take
            if self.need > 0:
                break  # stream exhausted for now
            self._evaluate()
        return consumed


def amr(handle: EstimatorHandle, alpha: float, tau: float, chi: float) -> EstimateReport:
    """Constant-factor estimate of the sampler's mean.

    If mu >= tau the output is within alpha*mu of mu with probability
    >= 1 - chi; if mu < tau the output is 0 with probability >= 1 - chi
    (for chi <= 1/ln(1/tau)).

    Caveat: the relaxation loop stops once the candidate mean drops
    below tau/(1 - (c + eps)) ~ 1.75*tau, so for means in the narrow
    band [tau, ~1.8*tau) acceptance can be cut off and the output is 0;
    the two-sided guarantee effectively needs mu >= 2*tau or mu < tau."""
    params = _amr_params(alpha, tau, chi)
    machine = _AmrMachine(params, handle.v_fn)
    used = 0
    while not machine.done:
        chunk = handle.draw(min(machine.need, 1 << 16))
        used += machine.offer(chunk)
    return EstimateReport(
        value=machine.value,
        below_threshold=machine.below_threshold,
        samples_used=used,
        relaxation_steps=machine.level + (machine.accepted_level is not None),
        mu_final=machine.mu_level,
    )


# ---------------------------------------------------------------------------
# two-phase KDE query


class _QuerySession:
    """Per-query state machine chaining AMR (alpha=1, chi/2) into one
    MoM pass at accuracy eps with V(mu_tilde / 2)."""

    def __init__(self, eps: float, tau: float, chi: float, v_fn):
        self.eps, self.tau, self.chi, self.v_fn = eps, tau, chi, v_fn
        self.phase1 = _AmrMachine(_amr_params(1.0, tau, chi / 2.0), v_fn)
        self.phase2: _MomMachine | None = None
        self.samples_used = 0
        self.finished = False
        self.report: EstimateReport | None = None

    @property
    def need(self) -> int:
        if self.finished:
            return 0
        if self.phase2 is not None:
            return self.phase2.need
        return self.phase1.need

    def _finish(self, value: float, below: bool) -> None:
        self.finished = True
        self.report = EstimateReport(
            value=value,
            below_threshold=below,
            samples_used=self.samples_used,
            relaxation_steps=self.phase1.level
            + (self.phase1.accepted_level is not None),
            mu_final=self.phase1.mu_level,
        )

    def offer(self, z: NDArray[np.float64]) -> int:
        consumed = 0
        while not self.finished and consumed < len(z):
            if self.phase2 is None:
                consumed += self.phase1.offer(z[consumed:])
                if not self.phase1.done:
                    break
                if self.phase1.below_threshold or self.phase1.value <= 0.0:
                    self.samples_used += consumed
                    self._finish(0.0, True)
                    break
                mu_under = self.phase1.value / 2.0
                m, L = mom_counts(self.eps, self.chi / 2.0, self.v_fn(mu_under))
                self.phase2 = _MomMachine(m, L)
            else:
                consumed += self.phase2.offer(z[consumed:])
                if self.phase2.value is not None:
                    self.samples_used += consumed
                    self._finish(self.phase2.value, False)
                    break
        if not self.finished:
            self.samples_used += consumed
        return consumed


def nominal_tables_required(
    eps: float, tau: float, chi: float, v_fn, budget_factor: float = TABLE_BUDGET_FACTOR
) -> int:
    """Index-size precondition N >= C_N * ceil(ln(2/chi) * (54/(eps/3)^2) * V(tau))."""
    return math.ceil(
        budget_factor * math.log(2.0 / chi) * (54.0 / (eps / 3.0) ** 2) * v_fn(tau)
    )


def tables_required(eps: float, tau: float, chi: float, v_fn) -> int:
    """Exact worst-case table consumption of one query session.

    Walks the AMR schedule: the costliest path accepts at some level i
    (or exhausts the loop) and then runs phase 2 sized by the smallest
    mean consistent with acceptance at i."""
    p1 = _amr_params(1.0, tau, chi / 2.0)
    last = int(math.floor(p1.loop_cutoff)) + 1
    m_last = max(1, math.ceil(54.0 * v_fn((1.0 - p1.gamma) ** last) / p1.eps**2))
    worst = p1.L * m_last  # no-acceptance path
    for i in range(last):
        mu_i = (1.0 - p1.gamma) ** i
        m_i = max(1, math.ceil(54.0 * v_fn(mu_i) / p1.eps**2))
        z_min = (1.0 - p1.c) * mu_i  # smallest accepted value at level i
        m2, l2 = mom_counts(eps, chi / 2.0, v_fn(z_min / 2.0))
        worst = max(worst, p1.L * m_i + m2 * l2)
    return worst


def _session_rng(index: HbeIndex, query_index: int) -> np.random.Generator:
    return derive_rng(index.master_seed, "query", query_index)


def query_kde(
    index: HbeIndex,
    x,
    eps: float,
    tau: float,
    chi: float,
    query_index: int = 0,
    budget_factor: float = TABLE_BUDGET_FACTOR,
) -> EstimateReport:
    """Answer one KDE query to relative accuracy eps above threshold tau.

    Guarantee (failure probability <= chi): if KDE(x) >= 2*tau the value
    is within eps*KDE(x); if KDE(x) < tau either the value is within
    eps*KDE(x) or the query reports below_threshold with value 0.  In
    the band [tau, ~1.8*tau) the relaxation stage's stopping rule can
    report below_threshold (see amr).
    """
    required = nominal_tables_required(eps, tau, chi, index.scheme.v_fn, budget_factor)
    if index.N < required:
        raise ValueError(
            f"index has N={index.N} tables but the precondition needs {required}"
        )
    x = np.asarray(x, dtype=np.float64)
    rng = _session_rng(index, query_index)
    cursor = TableCursor(N=index.N, offset=int(rng.integers(index.N)))
    session = _QuerySession(eps, tau, chi, index.scheme.v_fn)
    try:
        while not session.finished:
            k = min(session.need, 4096)
            z = np.empty(k)
            for j in range(k):
                table = index.table(cursor.next())
                z[j] = index.sample_from_table(table, x, rng)
            session.offer(z)
    except TableBudgetError as e:
        raise SampleBudgetError(
            f"table budget exhausted mid-query: {e}", session.samples_used,
            partial=session,
        ) from e
    return session.report


def query_kde_batch(
    index: HbeIndex,
    X,
    eps: float,
    tau: float,
    chi: float,
    query_index_offset: int = 0,
    block: int = 256,
    budget_factor: float = TABLE_BUDGET_FACTOR,
) -> list[EstimateReport]:
    """Answer many queries in one table-major sweep.

    All sessions consume tables in the same global order (offset 0),
    each drawing its own residents; a table is built once per block and
    serves every still-active query, so the sweep touches each of the N
    tables at most once regardless of the number of queries.
    """
    X = np.asarray(X, dtype=np.float64)
    required = nominal_tables_required(eps, tau, chi, index.scheme.v_fn, budget_factor)
    if index.N < required:
        raise ValueError(
            f"index has N={index.N} tables but the precondition needs {required}"
        )
    q = X.shape[0]
    rngs = [_session_rng(index, query_index_offset + i) for i in range(q)]
    sessions = [_QuerySession(eps, tau, chi, index.scheme.v_fn) for _ in range(q)]
    active = list(range(q))
    g = 0
    while active and g < index.N:
        hi = min(g + block, index.N)
        ids = np.array(active)
        zs = np.empty((hi - g, len(ids)))
        u = np.stack([rngs[i].random(hi - g) for i in ids], axis=1)
        for row, t_idx in enumerate(range(g, hi)):
            table = index.table(t_idx)
            zs[row] = index.sample_from_table_batch(table, X[ids], u[row])
        for col, i in enumerate(ids):
            sessions[i].offer(zs[:, col])
        active = [i for i in active if not sessions[i].finished]
        g = hi
    if active:
        raise SampleBudgetError(
            f"table budget exhausted for {len(active)} of {q} queries",
            sum(s.samples_used for s in sessions),
            partial=sessions,
        )
    return [s.report for s in sessions]


# ---------------------------------------------------------------------------
# baselines


def rs_sample(P: PointSet, kernel: KernelSpec, x, rng: np.random.Generator) -> float:
    """Random sampling baseline: kernel weight of one uniform point.

    Unbiased with E[Z^2] <= mu, i.e. V(mu) = 1/mu."""
    i = int(rng.integers(P.n))
    return float(
        eval_kernel_many(kernel, np.asarray(x, dtype=np.float64), P.coords[i])[0]
    )


def rff_sample(P: PointSet, x, rng: np.random.Generator) -> float:
    """Random Fourier features draw for the unit-bandwidth Gaussian
    kernel: Z = (2/n) sum_y cos(w.x + b) cos(w.y + b) with
    w ~ N(0, 2 I_d), b ~ U[0, 2 pi].  Unbiased but signed, with second
    moment independent of mu in the worst case."""
    x = np.asarray(x, dtype=np.float64)
    w = math.sqrt(2.0) * rng.standard_normal(P.d)
    b = rng.uniform(0.0, 2.0 * math.pi)
    return float(2.0 * math.cos(w @ x + b) * np.mean(np.cos(P.coords @ w + b)))
