"""Repeated-seed error statistics of the utility estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import InputError
from ..network import CandidateSet
from ..stochastics import Design, ParameterPriors
from .batch import build_reuse_batch
from .estimators import EvidenceContext, get_estimator


@dataclass(frozen=True)
class ReferenceSpec:
    estimator: str = "u2"
    n: int = 100_000
    seed: int = 10_000_019


@dataclass(frozen=True)
class EstimatorError:
    estimator: str
    mean: float
    std: float
    rmse: float
    bias: float
    values: tuple[float, ...] = field(repr=False)


@dataclass(frozen=True)
class BenchmarkReport:
    design: Design
    reference: ReferenceSpec
    reference_value: float
    n: int
    trials: int
    rows: tuple[EstimatorError, ...]

    def row(self, estimator: str) -> EstimatorError:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)


def error_stats(values: Sequence[float], reference: float) -> tuple[float, float, float, float]:
    """``(mean, std, rmse, bias)``; bias = sign(mean - ref) sqrt(max(rmse^2 - std^2, 0))."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    std = float(v.std(ddof=1))
    rmse = float(math.sqrt(np.mean((v - reference) ** 2)))
    bias = math.copysign(math.sqrt(max(rmse**2 - std**2, 0.0)), mean - reference)
    return mean, std, rmse, bias


def benchmark_estimators(
    candidates: CandidateSet,
    priors: ParameterPriors,
    design: Design,
    estimators: Sequence[str] = ("u1", "u2", "u3"),
    n: int = 10_000,
    trials: int = 100,
    reference: ReferenceSpec = ReferenceSpec(),
    seed: int = 0,
    estimator_fns: Mapping[str, Callable] | None = None,
    method: str = "auto",
    progress: Callable[[int], None] | None = None,
) -> BenchmarkReport:
    """Run ``trials`` independent-seed evaluations of each estimator.

    Trial ``t`` draws a fresh batch with seed ``seed + t`` shared by all
    estimators in that trial.  ``estimator_fns`` overrides the estimator
    callables (signature ``fn(design, batch, seed=..., ctx=...)``).
    """
    if trials < 2:
        raise InputError("benchmark needs at least two trials")
    fns = dict(estimator_fns or {})
    for name in estimators:
        if name not in fns:
            fns[name] = get_estimator(name)
    ref_fn = fns.get(reference.estimator) or get_estimator(reference.estimator)
    targets = design.targets
    ref_batch = build_reuse_batch(candidates, priors, targets, reference.n, reference.seed)
    ref_value = ref_fn(design, ref_batch, seed=reference.seed, ctx=EvidenceContext(method)).value
    del ref_batch

    values = {name: [] for name in estimators}
    for t in range(trials):
        batch = build_reuse_batch(candidates, priors, targets, n, seed + t)
        ctx = EvidenceContext(method)
        for name in estimators:
            values[name].append(fns[name](design, batch, seed=seed + t, ctx=ctx).value)
        if progress is not None:
            progress(t)
    rows = []
    for name in estimators:
        mean, std, rmse, bias = error_stats(values[name], ref_value)
        rows.append(EstimatorError(name, mean, std, rmse, bias, tuple(values[name])))
    return BenchmarkReport(design, reference, ref_value, n, trials, tuple(rows))
