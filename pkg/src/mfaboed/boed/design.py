"""Design menus and expected-utility maximisation over a finite menu."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .._parallel import pmap, thread_count
from ..errors import InputError
from ..network import Target
from ..stochastics import DEFAULT_SIGMA, Design
from .batch import ReuseBatch
from .estimators import EvidenceContext, UtilityEstimate, get_estimator
from .evidence import KernelCache

MAX_DESIGNS = 100_000


def enumerate_designs(
    targets: Sequence[Target],
    batch_size: int = 1,
    sigmas: float | Sequence[float] = DEFAULT_SIGMA,
    cap: int = MAX_DESIGNS,
) -> list[Design]:
    """All multisets of ``batch_size`` targets (repeats = repeated measurement).

    ``n`` targets give ``C(n + b - 1, b)`` designs: ``n`` singles, ``n(n+1)/2`` pairs.
    """
    targets = list(targets)
    if batch_size < 1:
        raise InputError("batch size must be >= 1")
    if isinstance(sigmas, (int, float)):
        sigmas = [float(sigmas)] * len(targets)
    if len(sigmas) != len(targets):
        raise InputError("need one sigma per target")
    count = math.comb(len(targets) + batch_size - 1, batch_size)
    if count > cap:
        raise InputError(f"{count} designs exceeds the cap of {cap}")
    return [
        Design(tuple(targets[i] for i in combo), tuple(sigmas[i] for i in combo))
        for combo in itertools.combinations_with_replacement(range(len(targets)), batch_size)
    ]


@dataclass(frozen=True)
class Ranking:
    """Estimates in input order plus the descending ranking (ties -> lower index)."""

    estimates: tuple[UtilityEstimate, ...]
    order: tuple[int, ...]

    @property
    def best_index(self) -> int:
        return self.order[0]

    @property
    def best(self) -> UtilityEstimate:
        return self.estimates[self.order[0]]

    def rank_of(self, index: int) -> int:
        """1-based rank of design ``index``."""
        return self.order.index(index) + 1


def rank(estimates: Sequence[UtilityEstimate]) -> Ranking:
    order = sorted(range(len(estimates)), key=lambda i: (-estimates[i].value, i))
    return Ranking(tuple(estimates), tuple(order))


def optimize_design(
    designs: Sequence[Design],
    estimator: str | Callable,
    batch: ReuseBatch,
    seed: int | None = None,
    method: str = "auto",
) -> Ranking:
    """Evaluate every design against the shared batch and rank them."""
    designs = list(designs)
    if not designs:
        raise InputError("no designs to optimise over")
    fn = get_estimator(estimator) if isinstance(estimator, str) else estimator
    if thread_count() > 1:
        # contexts hold caches and are not shared between threads
        estimates = pmap(lambda d: fn(d, batch, seed=seed, ctx=EvidenceContext(method)), designs)
    else:
        ctx = EvidenceContext(method, pair_cache=KernelCache())
        estimates = [fn(d, batch, seed=seed, ctx=ctx) for d in designs]
    return rank(estimates)


def evaluate_all(
    designs: Sequence[Design],
    estimators: Sequence[str],
    batch: ReuseBatch,
    seed: int | None = None,
    method: str = "auto",
) -> dict[str, Ranking]:
    """Several estimators over one menu; u1 and u3 share evidence tables."""
    ctx = EvidenceContext(method, pair_cache=KernelCache())
    fns = {name: get_estimator(name) for name in estimators}
    out = {name: [] for name in estimators}
    for d in designs:
        for name, fn in fns.items():
            out[name].append(fn(d, batch, seed=seed, ctx=ctx))
    return {name: rank(ests) for name, ests in out.items()}
