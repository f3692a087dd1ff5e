"""Parameter priors, the relative-noise observation model and its likelihood."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import InputError
from .network import NetworkStructure, Target, phi_matrix

LOG_2PI = math.log(2.0 * math.pi)
MIN_ACCEPTANCE = 1e-6
DEFAULT_SIGMA = 0.1


def rng_stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, purpose, *keys)``.

    Streams with different keys are statistically independent, and a given key
    always yields the same stream, whatever order the work is scheduled in.
    """
    tag = zlib.crc32(purpose.encode())
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, *(int(k) for k in keys)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class AllocationPrior:
    """Dirichlet hyper-parameters: node -> ordered ((target node, alpha), ...)."""

    alphas: Mapping[int, tuple[tuple[int, float], ...]]

    def __post_init__(self):
        clean = {}
        for node, entries in self.alphas.items():
            entries = tuple((int(j), float(a)) for j, a in entries)
            if not entries:
                raise InputError(f"node {node} has an empty Dirichlet prior")
            if any(not a > 0 for _, a in entries):
                raise InputError(f"node {node}: Dirichlet hyper-parameters must be > 0")
            if len({j for j, _ in entries}) != len(entries):
                raise InputError(f"node {node}: repeated target in Dirichlet prior")
            clean[int(node)] = entries
        object.__setattr__(self, "alphas", clean)


@dataclass(frozen=True)
class InputPrior:
    """Truncated-normal (lower bound 0) priors: node -> (mu, sigma_q)."""

    params: Mapping[int, tuple[float, float]]

    def __post_init__(self):
        clean = {}
        for node, (mu, sd) in self.params.items():
            if not sd > 0:
                raise InputError(f"input prior at node {node}: sigma_q must be > 0")
            clean[int(node)] = (float(mu), float(sd))
        object.__setattr__(self, "params", clean)


def derive_structure_prior(base_prior: AllocationPrior, structure: NetworkStructure) -> AllocationPrior:
    """Drop hyper-parameters of edges the structure lacks; keep the rest as is."""
    out = {}
    for node, entries in base_prior.alphas.items():
        kept = tuple((j, a) for j, a in entries if (node, j) in structure.edges)
        if kept:
            out[node] = kept
    for node in range(structure.n_nodes):
        have = set(structure.out_edges(node))
        got = {j for j, _ in out.get(node, ())}
        if have != got:
            missing = [structure.nodes[j] for j in sorted(have - got)]
            raise InputError(
                f"node '{structure.nodes[node]}' has outgoing edges without Dirichlet "
                f"hyper-parameters: {', '.join(missing)}"
            )
    return AllocationPrior(out)


@dataclass(frozen=True)
class ParameterPriors:
    """Priors for the maximal structure; ``point_mass`` pins every parameter at
    its prior mean (a test hook for the concentration -> infinity limit)."""

    allocation: AllocationPrior
    inputs: InputPrior
    point_mass: bool = False

    def for_structure(self, structure: NetworkStructure) -> "StructurePrior":
        return StructurePrior.compile(structure, derive_structure_prior(self.allocation, structure), self.inputs, self.point_mass)


@dataclass(frozen=True)
class StructurePrior:
    """Priors compiled against one structure's edge order for vectorised sampling."""

    structure: NetworkStructure
    allocation: AllocationPrior
    inputs: InputPrior
    groups: tuple[tuple[np.ndarray, np.ndarray], ...] = field(repr=False)
    input_nodes: np.ndarray = field(repr=False)
    input_mu: np.ndarray = field(repr=False)
    input_sd: np.ndarray = field(repr=False)
    point_mass: bool = False

    @classmethod
    def compile(cls, structure, allocation, inputs, point_mass=False):
        col = {e: c for c, e in enumerate(structure.edge_list)}
        groups = []
        for node, entries in sorted(allocation.alphas.items()):
            cols = np.array([col[(node, j)] for j, _ in entries], dtype=int)
            alpha = np.array([a for _, a in entries])
            groups.append((cols, alpha))
        nodes = sorted(inputs.params)
        extra = set(nodes) - set(structure.external_input_nodes)
        if extra:
            raise InputError(
                "input priors given for nodes without external inflow: "
                + ", ".join(structure.nodes[i] for i in sorted(extra))
            )
        missing = set(structure.external_input_nodes) - set(nodes)
        if missing:
            raise InputError(
                "external input nodes without a prior: " + ", ".join(structure.nodes[i] for i in sorted(missing))
            )
        mu = np.array([inputs.params[i][0] for i in nodes])
        sd = np.array([inputs.params[i][1] for i in nodes])
        return cls(structure, allocation, inputs, tuple(groups), np.array(nodes, dtype=int), mu, sd, point_mass)

    @property
    def n_parameters(self) -> int:
        """Count of non-trivial parameters (free simplex coordinates plus inputs)."""
        return sum(len(a) - 1 for _, a in self.groups) + len(self.input_nodes)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` parameter sets; returns ``(phi_edges (n, E), q (n, n_p))``."""
        s = self.structure
        phi = np.zeros((n, len(s.edge_list)))
        for cols, alpha in self.groups:
            if len(alpha) == 1:
                phi[:, cols[0]] = 1.0
            elif self.point_mass:
                phi[:, cols] = alpha / alpha.sum()
            else:
                phi[:, cols] = rng.dirichlet(alpha, size=n)
        q = np.zeros((n, s.n_nodes))
        if self.point_mass:
            q[:, self.input_nodes] = self.input_mu
        else:
            for k, node in enumerate(self.input_nodes):
                q[:, node] = truncated_normal(self.input_mu[k], self.input_sd[k], n, rng)
        return phi, q

    def mean(self) -> tuple[np.ndarray, np.ndarray]:
        """Prior-mean fractions and the untruncated input means."""
        s = self.structure
        phi = np.zeros(len(s.edge_list))
        for cols, alpha in self.groups:
            phi[cols] = alpha / alpha.sum()
        q = np.zeros(s.n_nodes)
        q[self.input_nodes] = self.input_mu
        return phi, q


def truncated_normal(mu: float, sd: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Normal(mu, sd) conditioned on >= 0, by rejection."""
    acceptance = float(ndtr(mu / sd))
    if acceptance < MIN_ACCEPTANCE:
        raise InputError(f"truncated normal N({mu}, {sd}) has acceptance {acceptance:.2e} at the 0 bound")
    out = rng.normal(mu, sd, size=n)
    bad = np.flatnonzero(out < 0)
    while bad.size:
        out[bad] = rng.normal(mu, sd, size=bad.size)
        bad = bad[out[bad] < 0]
    return out


@dataclass(frozen=True)
class ParameterSample:
    phi: np.ndarray
    q: np.ndarray
    model_index: int


def sample_parameters(
    structure: NetworkStructure,
    alloc_prior: AllocationPrior,
    input_prior: InputPrior,
    rng: np.random.Generator,
) -> ParameterSample:
    sp = StructurePrior.compile(structure, alloc_prior, input_prior)
    phi_e, q = sp.sample(1, rng)
    return ParameterSample(phi_matrix(structure, phi_e[0]), q[0], structure.model_index)


@dataclass(frozen=True)
class Design:
    """Ordered multiset of targets, each with a relative noise level."""

    targets: tuple[Target, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if len(self.targets) != len(self.sigmas):
            raise InputError("design needs one sigma per target")
        if not self.targets:
            raise InputError("design must contain at least one target")
        if any(not s > 0 for s in self.sigmas):
            raise InputError("relative noise levels must be > 0")

    @classmethod
    def of(cls, *targets: Target, sigma: float = DEFAULT_SIGMA) -> "Design":
        return cls(tuple(targets), (sigma,) * len(targets))

    def __len__(self):
        return len(self.targets)

    def labels(self, nodes: Sequence[str]) -> list[str]:
        return [t.label(nodes) for t in self.targets]

    def key(self) -> int:
        """Stable integer key for RNG streams; independent of list position."""
        text = ";".join(f"{t.source},{t.dest},{s!r}" for t, s in zip(self.targets, self.sigmas))
        return zlib.crc32(text.encode())

    def concat(self, other: "Design") -> "Design":
        return Design(self.targets + other.targets, self.sigmas + other.sigmas)


@dataclass(frozen=True)
class Observation:
    design: Design
    values: tuple[float, ...]
    source: str = ""
    obs_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.design):
            raise InputError("observation length must match its design")
        if not all(math.isfinite(v) for v in self.values):
            raise InputError("observation values must be finite")


def joint_observation(observations: Sequence[Observation]) -> Observation | None:
    """Merge observations into a single joint design (likelihoods multiply)."""
    if not observations:
        return None
    design = observations[0].design
    values = list(observations[0].values)
    for ob in observations[1:]:
        design = design.concat(ob.design)
        values.extend(ob.values)
    return Observation(design, tuple(values), source="joint")


def simulate_observation(G, sigmas, rng: np.random.Generator) -> np.ndarray:
    """``y_k = G_k (1 + eps_k)``, ``eps_k ~ N(0, sigma_k^2)``."""
    G = np.asarray(G, dtype=float)
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), G.shape[-1:])
    if G.shape[-1] != sigmas.shape[-1]:
        raise InputError("G and sigmas lengths differ")
    eps = rng.standard_normal(G.shape) * sigmas
    return G * (1.0 + eps)


def log_likelihood_terms(y, G, sigma) -> np.ndarray:
    """Elementwise log density of one component; broadcasts.

    ``-log(2 pi)/2 - log sigma - (y/G - 1)^2 / (2 sigma^2) - log G``, and
    ``-inf`` wherever ``G <= 0``.
    """
    y = np.asarray(y, dtype=float)
    G = np.asarray(G, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    pos = G > 0
    Gs = np.where(pos, G, 1.0)
    r = (y / Gs - 1.0) / sigma
    out = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * r * r - np.log(Gs)
    return np.where(pos, out, -np.inf)


def log_likelihood(y, G, sigmas) -> float:
    """Joint log density of independent relative-noise components."""
    y = np.asarray(y, dtype=float)
    G = np.asarray(G, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if not (y.shape == G.shape == sigmas.shape):
        raise InputError("y, G and sigmas must have matching lengths")
    return float(np.sum(log_likelihood_terms(y, G, sigmas)))
