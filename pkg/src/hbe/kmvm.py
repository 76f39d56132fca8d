"""Kernel-matrix-vector multiplication y = Kz via dyadic weight classes.

For a nonnegative z with unit l1 mass, indices are partitioned by which
dyadic interval [2^-l, 2^-l+1) their weight falls in; classes carrying
mass Z_l >= tau'/L (tau' = eps*tau) each get their own weighted-HBE
estimate per query, and y_i is recovered as sum_l Z_l * est_l(x_i).
Discarded classes and the sub-threshold class S_0 cost at most 3*eps*tau
additive error per coordinate; kept classes contribute relative error
eps, giving |y_hat_i - y_i| <= 3*eps*tau + eps*|y_i|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ._seeds import derive_rng
from .estimation import _QuerySession, tables_required
from .hbe_core import (
    HbeIndex,
    HbeScheme,
    TableCursor,
    build_index,
    make_exponential_hbe,
    make_gaussian_euclid_hbe,
    make_student_hbe,
)
from .kernels import (
    EXPONENTIAL,
    GAUSSIAN,
    KernelSpec,
    PointSet,
    eval_kernel_many,
    kernel_of_distance,
    normalize_bandwidth,
)


@dataclass(frozen=True)
class WeightPartition:
    """Dyadic partition of a nonnegative unit-mass weight vector.

    classes[l] holds the indices with z_i in [2^-l, 2^-l+1) for
    l = 1..L; classes[0] is S_0, the indices with z_i < tau'/n."""

    classes: list
    masses: NDArray[np.float64]
    L: int
    tau_prime: float

    def __post_init__(self) -> None:
        if len(self.classes) != self.L + 1:
            raise ValueError("need exactly L+1 classes")
        object.__setattr__(self, "masses", np.asarray(self.masses, dtype=np.float64))


def partition_by_weight(z, n: int, eps: float, tau: float) -> WeightPartition:
    """Split z into S_0 and the dyadic classes l = 1..L = ceil(log2(n/tau'))."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (n,):
        raise ValueError("z must have length n")
    if np.any(z < 0):
        raise ValueError("negative entries: use kmvm_signed for signed vectors")
    if abs(z.sum() - 1.0) > 1e-9:
        raise ValueError("z must be normalized to unit l1 mass")
    tau_prime = eps * tau
    L = max(1, math.ceil(math.log2(n / tau_prime)))
    # exact dyadic level from the binary exponent: z in [2^(e-1), 2^e)
    _, exps = np.frexp(z)
    levels = np.clip(1 - exps, 1, L)
    levels[z < tau_prime / n] = 0
    classes = [np.flatnonzero(levels == l) for l in range(L + 1)]
    masses = np.array([float(z[c].sum()) for c in classes])
    return WeightPartition(classes=classes, masses=masses, L=L, tau_prime=tau_prime)


@dataclass
class WeightedClass:
    """One dyadic class with its own index over the class members only."""

    level: int
    ids: NDArray[np.int64]  # global point ids
    z: NDArray[np.float64]  # weights of the members, original scale
    mass: float
    index: HbeIndex

    def __post_init__(self) -> None:
        if self.level >= 1:
            lo, hi = 2.0 ** (-self.level), 2.0 ** (-self.level + 1)
            if not (len(self.ids) * lo <= self.mass <= len(self.ids) * hi * (1 + 1e-12)):
                raise ValueError("class mass outside its dyadic sandwich")


def weighted_hbe_sample(
    wclass: WeightedClass, cursor: TableCursor, x, rng: np.random.Generator
) -> float:
    """One unbiased sample of KDE^z(x) = (1/Z_l) sum_y z_y k(x, y) over
    the class: Z = (z_I / Z_l) * (k(x, y_I) / p) * |H(x)|.

    The dyadic sandwich makes z_i/Z_l <= 2/|S_l|, so the second moment
    is at most 4x the plain HBE bound on the same class."""
    x = np.asarray(x, dtype=np.float64)
    index = wclass.index
    table = index.table(cursor.next())
    start, end = index.query_bucket(table, x)
    if end == start:
        return 0.0
    pick = int(rng.integers(start, end))
    local = int(table.ids[pick])
    y = index.points.coords[local]
    r = float(np.linalg.norm(x - y))
    k = kernel_of_distance(index.kernel, r)
    p = index.scheme.p_fn(r)
    return (wclass.z[local] / wclass.mass) * (k / p) * (end - start)


def _default_scheme(kernel: KernelSpec, R: float) -> HbeScheme:
    if kernel.kind == EXPONENTIAL:
        return make_exponential_hbe(max(R, 1.0), 0.5)
    if kernel.kind == GAUSSIAN:
        return make_gaussian_euclid_hbe(max(R, 1.0), 1.0)
    q = max(1, kernel.p_exponent // 2)
    return make_student_hbe(kernel.p_exponent, q)


def _class_estimates_hbe(
    wclass: WeightedClass, X, eps, tau_prime, chi, seed_base
) -> NDArray[np.float64]:
    """Per-query (eps, tau', chi) estimates of the class density via the
    two-phase protocol driven by weighted samples."""
    index = wclass.index
    out = np.empty(X.shape[0])
    for qi, x in enumerate(X):
        rng = derive_rng(index.master_seed, "kmvm", seed_base + qi)
        cursor = TableCursor(N=index.N, offset=int(rng.integers(index.N)))
        session = _QuerySession(eps, tau_prime, chi, index.scheme.v_fn)
        while not session.finished:
            k = min(session.need, 4096)
            z = np.array(
                [weighted_hbe_sample(wclass, cursor, x, rng) for _ in range(k)]
            )
            session.offer(z)
        out[qi] = session.report.value
    return out


def kmvm(
    P: PointSet,
    kernel: KernelSpec,
    z,
    eps: float,
    tau: float,
    chi_total: float,
    master_seed: int = 0,
    crossover: int = 64,
    scheme: HbeScheme | None = None,
) -> NDArray[np.float64]:
    """Approximate y = Kz for nonnegative normalized z.

    Per coordinate, |y_hat_i - y_i| <= 3*eps*tau + eps*|y_i| with total
    failure probability chi_total.  Classes smaller than `crossover` are
    evaluated exactly by brute force instead of building an index; pass
    crossover=0 to force the HBE path everywhere, or crossover >= n to
    make the result exact up to the discarded-mass truncation.
    """
    P, kernel = normalize_bandwidth(P, kernel)
    z = np.asarray(z, dtype=np.float64)
    part = partition_by_weight(z, P.n, eps, tau)
    keep_cut = part.tau_prime / part.L
    y_hat = np.zeros(P.n)
    X = P.coords
    for l in range(1, part.L + 1):
        ids = part.classes[l]
        mass = part.masses[l]
        if len(ids) == 0 or mass < keep_cut:
            continue
        sub = PointSet(coords=P.coords[ids], R=P.R)
        if len(ids) <= crossover:
            # exact per-query class density
            for qi in range(P.n):
                w = eval_kernel_many(kernel, X[qi], sub.coords)
                y_hat[qi] += float(np.dot(w, z[ids]))
            continue
        sch = scheme if scheme is not None else _default_scheme(kernel, P.R)
        chi_q = chi_total / (P.n * part.L)
        need = tables_required(eps, part.tau_prime, chi_q, sch.v_fn)
        index = build_index(
            sub, kernel, sch, N=need, master_seed=master_seed + 7919 * l,
            materialize=len(ids) * need <= 10_000_000,
        )
        wclass = WeightedClass(
            level=l, ids=ids, z=z[ids].copy(), mass=mass, index=index
        )
        est = _class_estimates_hbe(
            wclass, X, eps, part.tau_prime, chi_q, seed_base=l * P.n
        )
        y_hat += mass * est
    return y_hat


def kmvm_signed(
    P: PointSet,
    kernel: KernelSpec,
    z,
    eps: float,
    tau: float,
    chi_total: float,
    master_seed: int = 0,
    crossover: int = 64,
    scheme: HbeScheme | None = None,
) -> NDArray[np.float64]:
    """Signed variant: run kmvm on the normalized positive and negative
    parts and recombine, giving ||y_hat - Kz||_p <= eps(6 tau n^{1/p}
    + ||y_+||_p + ||y_-||_p)."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    out = np.zeros(P.n)
    for sign in (1.0, -1.0):
        part = np.maximum(sign * z, 0.0)
        scale = float(part.sum())
        if scale == 0.0:
            continue
        out += sign * scale * kmvm(
            P, kernel, part / scale, eps, tau, chi_total,
            master_seed=master_seed, crossover=crossover, scheme=scheme,
        )
    return out
