"""Radial kernels, exact brute-force KDE, and bandwidth normalization.

All kernels are radial with values in [0, 1]:

- gaussian:    k(x, y) = exp(-||x-y||^2 / sigma^2)
- exponential: k(x, y) = exp(-||x-y|| / sigma)
- student:     k(x, y) = 1 / (1 + (||x-y|| / sigma)^p)

``kde_exact`` is the ground-truth oracle every estimator is tested
against.  ``normalize_bandwidth`` rescales coordinates by 1/sigma so
downstream hash-parameter formulas can assume sigma = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from ._accel import njit

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
TSTUDENT = "student"

_KINDS = (GAUSSIAN, EXPONENTIAL, TSTUDENT)


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel plus its bandwidth.

    Attributes:
        kind: one of "gaussian", "exponential", "student".
        bandwidth: length-scale sigma > 0.
        p_exponent: positive integer exponent, t-Student only.
    """

    kind: str
    bandwidth: float = 1.0
    p_exponent: int = 2

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (self.bandwidth > 0.0 and np.isfinite(self.bandwidth)):
            raise ValueError("bandwidth must be positive and finite")
        if self.kind == TSTUDENT and (
            int(self.p_exponent) != self.p_exponent or self.p_exponent < 1
        ):
            raise ValueError("p_exponent must be a positive integer")


@dataclass(frozen=True)
class PointSet:
    """An n x d matrix of coordinates with a diameter upper bound R."""

    coords: NDArray[np.float64]
    R: float

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] < 1:
            raise ValueError("coords must be a nonempty 2-d array")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        if not (self.R >= 0.0 and np.isfinite(self.R)):
            raise ValueError("R must be a finite nonnegative real")
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    def validate_diameter(self) -> None:
        """Check R against the true max pairwise distance (O(n^2))."""
        diam = 0.0
        x = self.coords
        for i in range(x.shape[0]):
            diam = max(diam, float(np.max(np.linalg.norm(x - x[i], axis=1))))
        if self.R < diam * (1.0 - 1e-12):
            raise ValueError(f"R={self.R} below true diameter {diam}")


def point_set_from_coords(coords: NDArray[np.float64]) -> PointSet:
    """Build a PointSet with R = 2 * max distance to the centroid."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[None, :]
    center = coords.mean(axis=0)
    r = float(np.max(np.linalg.norm(coords - center, axis=1), initial=0.0))
    return PointSet(coords=coords, R=2.0 * r)


@njit(cache=True)
def _weights_from_dists(dists, kind_code, sigma, p_exponent):
    out = np.empty(dists.shape[0])
    for i in range(dists.shape[0]):
        r = dists[i] / sigma
        if kind_code == 0:
            out[i] = np.exp(-r * r)
        elif kind_code == 1:
            out[i] = np.exp(-r)
        else:
            out[i] = 1.0 / (1.0 + r**p_exponent)
    return out


def _kind_code(kind: str) -> int:
    return _KINDS.index(kind)


def eval_kernel_many(
    kernel: KernelSpec, x: NDArray[np.float64], ys: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Kernel weights of x against each row of ys."""
    x = np.asarray(x, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys[None, :]
    if x.shape[0] != ys.shape[1]:
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(ys))):
        raise ValueError("non-finite input")
    dists = np.sqrt(np.sum((ys - x) ** 2, axis=1))
    return _weights_from_dists(
        dists, _kind_code(kernel.kind), kernel.bandwidth, kernel.p_exponent
    )


def eval_kernel(kernel: KernelSpec, x, y) -> float:
    """Kernel weight k_sigma(x, y), a value in [0, 1]."""
    return float(eval_kernel_many(kernel, np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))[0])


def kernel_of_distance(kernel: KernelSpec, r) -> NDArray[np.float64] | float:
    """Kernel weight as a function of distance r >= 0."""
    r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    out = _weights_from_dists(
        r_arr, _kind_code(kernel.kind), kernel.bandwidth, kernel.p_exponent
    )
    return float(out[0]) if np.isscalar(r) or np.ndim(r) == 0 else out


def kde_exact(P: PointSet, kernel: KernelSpec, x) -> float:
    """Exact mean kernel weight of x over all points (the oracle)."""
    w = eval_kernel_many(kernel, np.asarray(x, dtype=np.float64), P.coords)
    return float(np.mean(w))


def kde_exact_weighted(
    P: PointSet, kernel: KernelSpec, x, z: NDArray[np.float64]
) -> float:
    """Exact weighted density sum_i z_i k(x, x_i)."""
    w = eval_kernel_many(kernel, np.asarray(x, dtype=np.float64), P.coords)
    return float(np.dot(w, z))


def normalize_bandwidth(
    P: PointSet, kernel: KernelSpec
) -> tuple[PointSet, KernelSpec]:
    """Rescale coordinates by 1/sigma so the kernel has unit bandwidth.

    kde_exact is invariant under this transformation; R scales by
    1/sigma.
    """
    sigma = kernel.bandwidth
    if sigma == 1.0:
        return P, kernel
    scaled = PointSet(coords=P.coords / sigma, R=P.R / sigma)
    return scaled, replace(kernel, bandwidth=1.0)
