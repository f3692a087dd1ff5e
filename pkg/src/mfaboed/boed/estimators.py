"""Nested Monte Carlo estimators of the structure/data mutual information.

All three run on a shared ``ReuseBatch``: the outer observation for outer index
``l`` is simulated from the batch's own sample ``l`` (fresh noise), and both
inner sums run over every batch sample, so ``N_out = N_in,1 = N_in,2 = N``.

* ``u1`` (data-model joint MC): ``m_l ~ p(M)``; term
  ``log E_{m_l}(y_l) - log sum_m p_m E_m(y_l)``.
* ``u2`` (model enumeration): every structure is an outer stratum with
  weight ``p_m``, each contributing ``N`` outer draws.
* ``u3`` (data marginal MC): ``y_l`` from the marginal; term is the
  realised prior-to-posterior KL ``sum_m w_m(y_l) [log E_m - log p(y_l)]``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import InputError
from ..stochastics import Design, rng_stream, simulate_observation
from .batch import ReuseBatch
from .evidence import KernelCache, log_evidence_table, pair_log_evidence_table

ESTIMATORS = ("u1", "u2", "u3")
BOOTSTRAP_RESAMPLES = 200


@dataclass(frozen=True)
class UtilityEstimate:
    design: Design
    estimator: str
    value: float
    std_error: float
    n: int
    seed: int
    wall_time: float
    degenerate_count: int = 0

    @property
    def negative(self) -> bool:
        """Below zero from Monte Carlo noise; reported, never clamped."""
        return self.value < 0


class EvidenceContext:
    """Evaluation options shared across the designs of one ranking run."""

    def __init__(self, method: str = "auto", pair_cache: KernelCache | None = None):
        self.method = method
        self.pair_cache = pair_cache
        self._marginal = None

    def marginal(self, batch: ReuseBatch, design: Design, seed: int):
        """Outer marginal draws and their evidence table; u1 and u3 share them."""
        key = (id(batch), design, seed)
        if self._marginal is None or self._marginal[0] != key:
            models, y = _marginal_outer(batch, design, seed)
            self._marginal = (key, models, y, self.table(batch, design, y))
        return self._marginal[1:]

    def table(self, batch: ReuseBatch, design: Design, y: np.ndarray) -> np.ndarray:
        G = batch.qoi(design)
        if len(design) == 2 and self.pair_cache is not None and self.method != "exact":
            cols = batch.columns(design)
            keys = [(id(batch), int(c), float(s)) for c, s in zip(cols, design.sigmas)]
            return pair_log_evidence_table(G, design.sigmas, y, self.pair_cache, keys)
        return log_evidence_table(G, design.sigmas, y, method=self.method)


def _log_prior(batch: ReuseBatch) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(batch.model_prior, dtype=float))


def _marginal_outer(batch: ReuseBatch, design: Design, seed: int):
    """Outer draws from p(y): structure index from the prior, parameters from
    the batch's own sample at the same position, then fresh noise."""
    n = batch.n
    key = design.key()
    models = rng_stream(seed, "outer-model", key).choice(batch.n_models, size=n, p=batch.model_prior)
    G = batch.qoi(design)[models, np.arange(n)]
    y = simulate_observation(G, design.sigmas, rng_stream(seed, "outer-noise", key))
    return models, y


def _log_marginal(L: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return logsumexp(L + log_prior[:, None], axis=0)


def _clean(terms: np.ndarray):
    """Replace undefined terms (generating structure has zero evidence) by 0."""
    bad = ~np.isfinite(terms)
    return np.where(bad, 0.0, terms), int(bad.sum())


def _bootstrap_se(terms: np.ndarray, rng: np.random.Generator, weights=None) -> float:
    """Bootstrap SE of a (stratified, if 2-D) mean over outer terms."""
    terms = np.atleast_2d(terms)
    weights = np.ones(1) if weights is None else np.asarray(weights, dtype=float)
    n = terms.shape[1]
    if n < 2:
        return float("nan")
    totals = np.zeros(BOOTSTRAP_RESAMPLES)
    for stratum, w in zip(terms, weights):
        if w == 0:
            continue
        counts = rng.multinomial(n, np.full(n, 1.0 / n), size=BOOTSTRAP_RESAMPLES)
        totals += w * (counts @ stratum) / n
    return float(np.std(totals, ddof=1))


def _check(batch: ReuseBatch, design: Design):
    if batch.n < 2:
        raise InputError("estimators need a batch with N >= 2")
    batch.columns(design)


def estimator_u1(design: Design, batch: ReuseBatch, seed: int | None = None, ctx: EvidenceContext | None = None) -> UtilityEstimate:
    """Data-model joint MC."""
    t0 = time.perf_counter()
    _check(batch, design)
    seed = batch.seed if seed is None else seed
    ctx = ctx or EvidenceContext()
    models, y, L = ctx.marginal(batch, design, seed)
    lp = _log_marginal(L, _log_prior(batch))
    with np.errstate(invalid="ignore"):
        terms = L[models, np.arange(batch.n)] - lp
    terms, bad = _clean(terms)
    se = _bootstrap_se(terms, rng_stream(seed, "bootstrap", design.key(), 1))
    return UtilityEstimate(design, "u1", float(terms.mean()), se, batch.n, seed, time.perf_counter() - t0, bad)


def estimator_u2(design: Design, batch: ReuseBatch, seed: int | None = None, ctx: EvidenceContext | None = None) -> UtilityEstimate:
    """Model enumeration: exact outer sum over structures."""
    t0 = time.perf_counter()
    _check(batch, design)
    seed = batch.seed if seed is None else seed
    ctx = ctx or EvidenceContext()
    n, n_m = batch.n, batch.n_models
    prior = np.asarray(batch.model_prior, dtype=float)
    live = np.flatnonzero(prior > 0)
    G = batch.qoi(design)
    noise = rng_stream(seed, "outer-noise", design.key())
    # one noise draw per (structure, sample); drawn for every structure so the
    # stream layout does not depend on which priors are zero
    ys = simulate_observation(G.reshape(n_m * n, -1), design.sigmas, noise).reshape(n_m, n, -1)
    y = ys[live].reshape(live.size * n, -1)
    L = ctx.table(batch, design, y)
    lp = _log_marginal(L, _log_prior(batch))
    rows = np.repeat(live, n)
    with np.errstate(invalid="ignore"):
        terms = (L[rows, np.arange(rows.size)] - lp).reshape(live.size, n)
    terms, bad = _clean(terms)
    w = prior[live]
    value = float(np.sum(w * terms.mean(axis=1)))
    se = _bootstrap_se(terms, rng_stream(seed, "bootstrap", design.key(), 2), weights=w)
    return UtilityEstimate(design, "u2", value, se, n, seed, time.perf_counter() - t0, bad)


def estimator_u3(design: Design, batch: ReuseBatch, seed: int | None = None, ctx: EvidenceContext | None = None) -> UtilityEstimate:
    """Data marginal MC: average realised KL over y drawn from the marginal."""
    t0 = time.perf_counter()
    _check(batch, design)
    seed = batch.seed if seed is None else seed
    ctx = ctx or EvidenceContext()
    _, y, L = ctx.marginal(batch, design, seed)
    log_prior = _log_prior(batch)
    lp = _log_marginal(L, log_prior)
    with np.errstate(invalid="ignore", divide="ignore"):
        # posterior weights after common-max subtraction, exponentiated last
        log_w = L + log_prior[:, None] - lp[None, :]
        w = np.exp(log_w)
        contrib = np.where(w > 0, w * (L - lp[None, :]), 0.0)
    terms = contrib.sum(axis=0)
    terms, bad = _clean(terms)
    se = _bootstrap_se(terms, rng_stream(seed, "bootstrap", design.key(), 3))
    return UtilityEstimate(design, "u3", float(terms.mean()), se, batch.n, seed, time.perf_counter() - t0, bad)


ESTIMATOR_FUNCTIONS = {"u1": estimator_u1, "u2": estimator_u2, "u3": estimator_u3}


def get_estimator(name: str):
    try:
        return ESTIMATOR_FUNCTIONS[name.lower()]
    except KeyError:
        raise InputError(f"unknown estimator '{name}' (expected one of {', '.join(ESTIMATORS)})") from None


def prior_entropy(prior) -> float:
    p = np.asarray(prior, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))

