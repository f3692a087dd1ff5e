"""Network-structure posteriors from collected observations.

Model evidence is the prior-averaged likelihood, estimated by plain Monte
Carlo over fresh prior draws for every structure.  Parameter posteriors are
never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ._parallel import pmap
from .errors import DegeneratePosteriorError, InputError
from .network import CandidateSet, NetworkStructure, qoi_table, solve_flows_batch
from .stochastics import Observation, ParameterPriors, StructurePrior, joint_observation, log_likelihood_terms, rng_stream

BOOTSTRAP_RESAMPLES = 200


@dataclass(frozen=True)
class EvidenceEstimate:
    log_evidence: float
    std_error: float
    n_samples: int
    degenerate: bool


def bootstrap_log_mean_se(log_terms: np.ndarray, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    """Bootstrap standard error of ``log(mean(exp(log_terms)))``."""
    n = log_terms.shape[0]
    if n < 2 or not np.any(np.isfinite(log_terms)):
        return float("nan") if n >= 2 else 0.0
    idx = rng.integers(0, n, size=(resamples, n))
    boots = logsumexp(log_terms[idx], axis=1) - math.log(n)
    boots = boots[np.isfinite(boots)]
    return float(np.std(boots, ddof=1)) if boots.size > 1 else float("inf")


def log_model_evidence(
    observation: Observation,
    prior: StructurePrior,
    n: int,
    rng: np.random.Generator,
) -> EvidenceEstimate:
    """``log p(y | M)`` as the log of the mean of ``n`` prior-sample likelihoods."""
    if n < 1:
        raise InputError("need at least one evidence sample")
    structure = prior.structure
    phi, q = prior.sample(n, rng)
    x = solve_flows_batch(structure, phi, q)
    G = qoi_table(structure, phi, q, x, observation.design.targets)
    ll = log_likelihood_terms(
        np.asarray(observation.values)[None, :], G, np.asarray(observation.design.sigmas)[None, :]
    ).sum(axis=1)
    with np.errstate(divide="ignore"):
        log_ev = float(logsumexp(ll) - math.log(n))
    degenerate = not np.isfinite(log_ev)
    se = bootstrap_log_mean_se(ll, rng) if not degenerate else float("nan")
    return EvidenceEstimate(log_ev if not degenerate else -math.inf, se, n, degenerate)


@dataclass(frozen=True)
class ModelPosterior:
    probabilities: np.ndarray
    log_evidences: np.ndarray
    std_errors: np.ndarray
    prior: np.ndarray
    degenerate: tuple[bool, ...]
    n_samples: int
    seed: int

    @property
    def kl(self) -> float:
        return kl_prior_to_posterior(self.probabilities, self.prior)

    @property
    def map_index(self) -> int:
        return int(np.argmax(self.probabilities))


def model_posterior(
    observations: Sequence[Observation],
    candidates: CandidateSet,
    priors: ParameterPriors,
    n: int,
    seed: int = 0,
) -> ModelPosterior:
    """Model Bayes' rule over the candidate set, all arithmetic in log space.

    Several observations enter as one joint design; structure ``m`` draws its
    evidence samples from stream ``(seed, "evidence", m)``.
    """
    prior = np.asarray(candidates.model_prior, dtype=float)
    n_m = len(candidates)
    joint = joint_observation(list(observations))
    if joint is None:
        return ModelPosterior(
            prior.copy(), np.zeros(n_m), np.zeros(n_m), prior.copy(), (False,) * n_m, n, seed
        )

    def one(m: int) -> EvidenceEstimate:
        s = candidates.structures[m]
        return log_model_evidence(joint, priors.for_structure(s), n, rng_stream(seed, "evidence", m))

    ests = pmap(one, range(n_m))
    log_ev = np.array([e.log_evidence for e in ests])
    se = np.array([e.std_error for e in ests])
    with np.errstate(divide="ignore"):
        log_post = log_ev + np.log(prior)
    if not np.any(np.isfinite(log_post)):
        ids = ", ".join(ob.obs_id or ob.source or "?" for ob in observations)
        raise DegeneratePosteriorError(f"observations [{ids}] give zero evidence to every candidate structure")
    post = np.exp(log_post - logsumexp(log_post))
    return ModelPosterior(post, log_ev, se, prior.copy(), tuple(e.degenerate for e in ests), n, seed)


def kl_prior_to_posterior(posterior, prior) -> float:
    """``sum_m post_m log(post_m / prior_m)`` in nats, with 0 log 0 = 0."""
    post = np.asarray(getattr(posterior, "probabilities", posterior), dtype=float)
    prior = np.asarray(prior, dtype=float)
    if post.shape != prior.shape:
        raise InputError("posterior and prior lengths differ")
    live = post > 0
    if np.any(live & (prior <= 0)):
        raise InputError("posterior puts mass on a structure with zero prior probability")
    kl = float(np.sum(post[live] * np.log(post[live] / prior[live])))
    return max(kl, 0.0)


def evidence_for_structure(
    observation: Observation, structure: NetworkStructure, priors: ParameterPriors, n: int, seed: int = 0
) -> EvidenceEstimate:
    return log_model_evidence(observation, priors.for_structure(structure), n, rng_stream(seed, "evidence", structure.model_index))
