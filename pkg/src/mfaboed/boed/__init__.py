"""Design evaluation: shared sample batches, utility estimators, ranking."""

from .batch import ReuseBatch, build_reuse_batch
from .benchmark import BenchmarkReport, EstimatorError, ReferenceSpec, benchmark_estimators, error_stats
from .design import Ranking, enumerate_designs, evaluate_all, optimize_design, rank
from .estimators import (
    ESTIMATORS,
    EvidenceContext,
    UtilityEstimate,
    estimator_u1,
    estimator_u2,
    estimator_u3,
    get_estimator,
    prior_entropy,
)
from .evidence import KernelCache, exact_log_evidence, log_evidence_table

__all__ = [
    "ESTIMATORS",
    "BenchmarkReport",
    "EstimatorError",
    "EvidenceContext",
    "KernelCache",
    "Ranking",
    "ReferenceSpec",
    "ReuseBatch",
    "UtilityEstimate",
    "benchmark_estimators",
    "build_reuse_batch",
    "enumerate_designs",
    "error_stats",
    "estimator_u1",
    "estimator_u2",
    "estimator_u3",
    "evaluate_all",
    "exact_log_evidence",
    "get_estimator",
    "log_evidence_table",
    "optimize_design",
    "prior_entropy",
    "rank",
]
