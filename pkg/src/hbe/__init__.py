"""Hashing-based estimators for relative-error kernel density queries.

The package answers KDE_P(x) = (1/n) sum_i k(x, x_i) to relative
accuracy in sublinear sample complexity by combining locality-sensitive
hashing with adaptive median-of-means estimation, and extends the same
machinery to kernel-matrix-vector multiplication.
"""

from ._accel import USING_NUMBA
from .estimation import (
    EstimateReport,
    EstimatorHandle,
    SampleBudgetError,
    amr,
    median_of_means,
    query_kde,
    query_kde_batch,
    rff_sample,
    rs_sample,
)
from .hbe_core import (
    BallCarvingSpec,
    EuclideanSpec,
    HbeIndex,
    HbeScheme,
    TableBudgetError,
    TableCursor,
    VarianceBound,
    build_index,
    hbe_sample,
    make_exponential_hbe,
    make_gaussian_ball_hbe,
    make_gaussian_euclid_hbe,
    make_student_hbe,
    scale_free_variance_bound,
    second_moment_upper_bound,
    two_point_variance_bound,
)
from .kernels import KernelSpec, PointSet, kde_exact, normalize_bandwidth
from .kmvm import kmvm, kmvm_signed, partition_by_weight, weighted_hbe_sample

__version__ = "1.0.0"

__all__ = [
    "USING_NUMBA",
    "EstimateReport",
    "EstimatorHandle",
    "SampleBudgetError",
    "amr",
    "median_of_means",
    "query_kde",
    "query_kde_batch",
    "rff_sample",
    "rs_sample",
    "BallCarvingSpec",
    "EuclideanSpec",
    "HbeIndex",
    "HbeScheme",
    "TableBudgetError",
    "TableCursor",
    "VarianceBound",
    "build_index",
    "hbe_sample",
    "make_exponential_hbe",
    "make_gaussian_ball_hbe",
    "make_gaussian_euclid_hbe",
    "make_student_hbe",
    "scale_free_variance_bound",
    "second_moment_upper_bound",
    "two_point_variance_bound",
    "KernelSpec",
    "PointSet",
    "kde_exact",
    "normalize_bandwidth",
    "kmvm",
    "kmvm_signed",
    "partition_by_weight",
    "weighted_hbe_sample",
]
