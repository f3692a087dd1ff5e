"""Shared prior-sample batch reused by the outer and both inner loops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .._parallel import pmap
from ..errors import InputError, StructuralCycleError
from ..network import SOLVES, CandidateSet, Target, qoi_table, solve_flows_batch
from ..stochastics import Design, ParameterPriors, rng_stream


@dataclass(frozen=True)
class ReuseBatch:
    """``G[m, s, k]``: QoI ``k`` under structure ``m`` and prior sample ``s``."""

    candidates: CandidateSet
    targets: tuple[Target, ...]
    G: np.ndarray = field(repr=False)
    seed: int
    n_solves: int

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def n_models(self) -> int:
        return self.G.shape[0]

    @property
    def model_prior(self) -> np.ndarray:
        return self.candidates.model_prior

    def columns(self, design: Design) -> np.ndarray:
        col = {t: k for k, t in enumerate(self.targets)}
        try:
            return np.array([col[t] for t in design.targets], dtype=int)
        except KeyError as exc:
            raise InputError(f"batch does not cover design target {exc.args[0]}") from None

    def qoi(self, design: Design) -> np.ndarray:
        """``(n_M, N, n_y)`` slice for the design's targets (repeats allowed)."""
        return self.G[:, :, self.columns(design)]


def build_reuse_batch(
    candidates: CandidateSet,
    priors: ParameterPriors,
    targets: Sequence[Target],
    n: int,
    seed: int = 0,
) -> ReuseBatch:
    """Draw ``n`` prior samples per structure and tabulate every target.

    Exactly ``n_M * n`` mass-balance solves; structure ``m`` uses stream
    ``(seed, "params", m)``.
    """
    if n < 1:
        raise InputError("batch size must be >= 1")
    targets = tuple(dict.fromkeys(targets))
    if not targets:
        raise InputError("target universe is empty")
    before = SOLVES.count

    def one(m: int) -> np.ndarray:
        s = candidates.structures[m]
        sp = priors.for_structure(s)
        phi, q = sp.sample(n, rng_stream(seed, "params", m))
        try:
            x = solve_flows_batch(s, phi, q)
        except StructuralCycleError as exc:
            raise StructuralCycleError(
                f"candidate {m} ({s.code}): {exc}", nodes=exc.nodes, model_index=m
            ) from exc
        return qoi_table(s, phi, q, x, targets)

    G = np.stack(pmap(one, range(len(candidates))))
    G.setflags(write=False)
    return ReuseBatch(candidates, targets, G, int(seed), SOLVES.count - before)
