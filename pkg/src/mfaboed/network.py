"""Candidate network structures and the mass-balance linear system.

A structure is a directed graph over a fixed, densely indexed node set.  Given
allocation fractions ``phi[i, j]`` (share of node i's throughput sent to j) and
external inflows ``q``, nodal throughputs solve

    (I - phi.T) x = q

and edge flows are ``z_ij = phi[i, j] * x[i]``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleFlowError, InputError, PatternMismatchError, StructuralCycleError

RCOND_MIN = 1e-12
CLAMP_TOL = 1e-10
SIMPLEX_TOL = 1e-10
MAX_UNCERTAIN_EDGES = 20


class SolveCounter:
    """Counts (structure, parameter sample) systems solved; used to audit reuse."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n):
        with self._lock:
            self.count += int(n)

    def reset(self):
        with self._lock:
            self.count = 0


SOLVES = SolveCounter()


@dataclass(frozen=True)
class NodeId:
    index: int
    label: str


@dataclass(frozen=True)
class Target:
    """A measurable quantity: edge flow ``source -> dest`` or, with ``dest=None``,
    the external inflow at ``source``."""

    source: int
    dest: int | None = None

    @property
    def is_input(self) -> bool:
        return self.dest is None

    def label(self, nodes: Sequence[str]) -> str:
        if self.dest is None:
            return f"input:{nodes[self.source]}"
        return f"{nodes[self.source]} -> {nodes[self.dest]}"


@dataclass(frozen=True)
class NetworkStructure:
    nodes: tuple[str, ...]
    edges: frozenset[tuple[int, int]]
    external_input_nodes: frozenset[int] = frozenset()
    uncertain_code: tuple[int, ...] = ()
    model_index: int = 0
    _edge_list: tuple[tuple[int, int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.nodes)
        if len(set(self.nodes)) != n:
            raise InputError("node labels must be unique")
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InputError(f"edge ({i}, {j}) references an unknown node")
            if i == j:
                raise InputError(f"self-loop on node '{self.nodes[i]}'")
        for i in self.external_input_nodes:
            if not 0 <= i < n:
                raise InputError(f"external input node {i} out of range")
        object.__setattr__(self, "_edge_list", tuple(sorted(self.edges)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def edge_list(self) -> tuple[tuple[int, int], ...]:
        """Edges in a fixed (sorted) order; batch arrays follow this order."""
        return self._edge_list

    @property
    def code(self) -> str:
        return "".join(str(b) for b in self.uncertain_code)

    def node_ids(self) -> list[NodeId]:
        return [NodeId(i, lab) for i, lab in enumerate(self.nodes)]

    def out_edges(self, i: int) -> list[int]:
        return [j for (a, j) in self._edge_list if a == i]

    def index_of(self, label: str) -> int:
        try:
            return self.nodes.index(label)
        except ValueError:
            raise InputError(f"unknown node label '{label}'") from None

    def closed_nodes(self) -> list[int]:
        """Nodes with outflow that can never reach a terminal node.

        Any such node makes ``I - phi.T`` singular for every admissible phi,
        because its outflow circulates forever.
        """
        n = self.n_nodes
        has_out = np.zeros(n, dtype=bool)
        preds: list[list[int]] = [[] for _ in range(n)]
        for i, j in self._edge_list:
            has_out[i] = True
            preds[j].append(i)
        reach = ~has_out
        stack = list(np.flatnonzero(reach))
        while stack:
            j = stack.pop()
            for i in preds[j]:
                if not reach[i]:
                    reach[i] = True
                    stack.append(i)
        return [int(i) for i in np.flatnonzero(~reach)]


@dataclass(frozen=True)
class CandidateSet:
    structures: tuple[NetworkStructure, ...]
    model_prior: np.ndarray
    uncertain_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        prior = np.asarray(self.model_prior, dtype=float)
        prior.setflags(write=False)
        object.__setattr__(self, "model_prior", prior)
        if len(self.structures) != prior.shape[0]:
            raise InputError("model prior length must equal the number of structures")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise InputError("model prior must be a probability vector")
        if len({s.edges for s in self.structures}) != len(self.structures):
            raise InputError("candidate structures must have distinct edge sets")

    def __len__(self):
        return len(self.structures)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.structures[0].nodes

    def by_code(self, code: str) -> NetworkStructure:
        for s in self.structures:
            if s.code == code:
                return s
        raise InputError(f"no candidate structure with code '{code}'")


def enumerate_candidates(
    base: NetworkStructure,
    uncertain_edges: Sequence[tuple[int, int]],
    prior_kind: str = "uniform",
    edge_probabilities: Sequence[float] | None = None,
) -> CandidateSet:
    """All 2**n_L on/off combinations of the uncertain edges.

    Structure ``m`` switches uncertain edge ``l`` on iff bit ``l`` of ``m`` is
    set, so the first uncertain edge toggles fastest.  ``uncertain_code`` lists
    the bits in edge order ("1000" = only the first uncertain edge present).
    """
    uncertain = [tuple(e) for e in uncertain_edges]
    n_l = len(uncertain)
    if n_l > MAX_UNCERTAIN_EDGES:
        raise InputError(f"{n_l} uncertain edges exceeds the limit of {MAX_UNCERTAIN_EDGES}")
    if len(set(uncertain)) != n_l:
        raise InputError("duplicate uncertain edge")
    for i, j in uncertain:
        if i == j:
            raise InputError(f"uncertain edge ({i}, {j}) is a self-loop")
        if not (0 <= i < base.n_nodes and 0 <= j < base.n_nodes):
            raise InputError(f"uncertain edge ({i}, {j}) references an unknown node")

    if prior_kind == "uniform":
        probs = None
    elif prior_kind in ("per-edge", "per-edge-probabilities"):
        if edge_probabilities is None or len(edge_probabilities) != n_l:
            raise InputError("per-edge prior needs one probability per uncertain edge")
        probs = np.asarray(edge_probabilities, dtype=float)
        if np.any(probs <= 0) or np.any(probs >= 1):
            raise InputError("per-edge probabilities must lie in (0, 1)")
    else:
        raise InputError(f"unknown prior kind '{prior_kind}'")

    core = base.edges - set(uncertain)
    structures = []
    prior = []
    for m in range(2**n_l):
        bits = tuple((m >> l) & 1 for l in range(n_l))
        edges = core | {e for e, b in zip(uncertain, bits) if b}
        structures.append(
            NetworkStructure(
                nodes=base.nodes,
                edges=frozenset(edges),
                external_input_nodes=base.external_input_nodes,
                uncertain_code=bits,
                model_index=m,
            )
        )
        if probs is None:
            prior.append(1.0 / 2**n_l)
        else:
            prior.append(float(np.prod(np.where(bits, probs, 1.0 - probs))))
    prior = np.asarray(prior)
    prior /= prior.sum()
    return CandidateSet(tuple(structures), prior, tuple(uncertain))


def check_allocation(structure: NetworkStructure, phi: np.ndarray) -> None:
    phi = np.asarray(phi, dtype=float)
    n = structure.n_nodes
    if phi.shape != (n, n):
        raise PatternMismatchError(f"phi must be {n}x{n}, got {phi.shape}")
    mask = np.zeros((n, n), dtype=bool)
    for i, j in structure.edges:
        mask[i, j] = True
    bad = np.argwhere((phi != 0) & ~mask)
    if bad.size:
        i, j = bad[0]
        raise PatternMismatchError(
            f"phi[{structure.nodes[i]} -> {structure.nodes[j]}] is nonzero but the edge is absent"
        )
    if np.any(phi < 0) or np.any(phi > 1):
        raise PatternMismatchError("allocation fractions must lie in [0, 1]")
    rows = phi.sum(axis=1)
    has_out = mask.any(axis=1)
    off = np.flatnonzero(has_out & (np.abs(rows - 1.0) > SIMPLEX_TOL))
    if off.size:
        raise PatternMismatchError(
            f"outgoing fractions of '{structure.nodes[off[0]]}' sum to {rows[off[0]]!r}, not 1"
        )


def assemble_system(structure: NetworkStructure, phi: np.ndarray, q: np.ndarray):
    """Return ``(A, b)`` with ``A = I - phi.T`` and ``b = q``."""
    check_allocation(structure, phi)
    q = np.asarray(q, dtype=float)
    if q.shape != (structure.n_nodes,):
        raise InputError(f"q must have length {structure.n_nodes}")
    A = np.eye(structure.n_nodes) - np.asarray(phi, dtype=float).T
    return A, q.copy()


def _raise_cycle(structure, nodes, why):
    labels = [structure.nodes[i] for i in nodes]
    raise StructuralCycleError(
        f"structure {structure.code or structure.model_index}: {why}; "
        f"implicated nodes: {', '.join(labels) if labels else 'unknown'}",
        nodes=labels,
        model_index=structure.model_index,
    )


def _solve_stack(structure: NetworkStructure, A: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve stacked systems ``A[k] x[k] = q[k]`` with the conditioning guard.

    ``A^-1 = sum_k (phi.T)^k`` is entrywise nonnegative, so ``||A^-1||_inf`` is
    the max entry of ``A^-1 @ 1``; the all-ones column rides along as a second
    right-hand side and yields the exact infinity-norm condition number.
    """
    n = structure.n_nodes
    rhs = np.empty(q.shape + (2,))
    rhs[..., 0] = q
    rhs[..., 1] = 1.0
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        _raise_cycle(structure, structure.closed_nodes(), "singular mass-balance system")
    x, w = sol[..., 0], sol[..., 1]
    a_norm = np.abs(A).sum(axis=-1).max(axis=-1)
    w_norm = np.abs(w).max(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rcond = 1.0 / (a_norm * w_norm)
    bad = ~np.isfinite(rcond) | (rcond < RCOND_MIN) | ~np.all(np.isfinite(x), axis=-1)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        wk = np.abs(w[k])
        nodes = [int(i) for i in np.flatnonzero(wk > 1e-3 * wk.max())] if np.all(np.isfinite(wk)) else []
        _raise_cycle(structure, nodes or list(range(n)), f"reciprocal condition {rcond[k]:.3g} below {RCOND_MIN}")
    scale = np.maximum(1.0, np.abs(x).max(axis=-1, keepdims=True))
    tol = CLAMP_TOL * scale
    if np.any(x < -tol):
        k, i = np.argwhere(x < -tol)[0]
        raise InfeasibleFlowError(
            f"negative nodal flow {x[k, i]:.3g} at '{structure.nodes[i]}' "
            f"(structure {structure.code or structure.model_index})"
        )
    return np.where(x < 0, 0.0, x)


def solve_nodal_flows(structure: NetworkStructure, phi: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Nodal throughputs ``x = (I - phi.T)^-1 q``."""
    closed = structure.closed_nodes()
    if closed:
        _raise_cycle(structure, closed, "flow can never leave a closed cycle")
    A, b = assemble_system(structure, phi, q)
    x = _solve_stack(structure, A[None], b[None])[0]
    SOLVES.add(1)
    return x


def solve_flows_batch(
    structure: NetworkStructure, phi_edges: np.ndarray, q: np.ndarray, chunk: int = 2000
) -> np.ndarray:
    """Vectorised solve for ``S`` parameter samples.

    ``phi_edges[s, e]`` is the fraction on ``structure.edge_list[e]``;
    ``q[s, i]`` the external inflow.  Returns ``x`` with shape ``(S, n)``.
    """
    closed = structure.closed_nodes()
    if closed:
        _raise_cycle(structure, closed, "flow can never leave a closed cycle")
    phi_edges = np.asarray(phi_edges, dtype=float)
    q = np.asarray(q, dtype=float)
    n = structure.n_nodes
    s_total = q.shape[0]
    src = np.array([e[0] for e in structure.edge_list], dtype=int)
    dst = np.array([e[1] for e in structure.edge_list], dtype=int)
    out = np.empty((s_total, n))
    eye = np.eye(n)
    for lo in range(0, s_total, chunk):
        hi = min(lo + chunk, s_total)
        A = np.broadcast_to(eye, (hi - lo, n, n)).copy()
        if src.size:
            # A = I - phi.T  ->  A[j, i] = -phi_ij
            A[:, dst, src] -= phi_edges[lo:hi]
        out[lo:hi] = _solve_stack(structure, A, q[lo:hi])
    SOLVES.add(s_total)
    return out


def phi_matrix(structure: NetworkStructure, phi_edges: np.ndarray) -> np.ndarray:
    """Dense ``n x n`` allocation matrix from one row of edge fractions."""
    phi = np.zeros((structure.n_nodes, structure.n_nodes))
    for (i, j), v in zip(structure.edge_list, phi_edges):
        phi[i, j] = v
    return phi


def qoi_table(
    structure: NetworkStructure,
    phi_edges: np.ndarray,
    q: np.ndarray,
    x: np.ndarray,
    targets: Sequence[Target],
) -> np.ndarray:
    """QoI values ``G[s, k]`` for every sample ``s`` and target ``k``.

    Edge targets absent from the structure evaluate to 0.
    """
    col = {e: c for c, e in enumerate(structure.edge_list)}
    G = np.zeros((x.shape[0], len(targets)))
    for k, t in enumerate(targets):
        _check_target(structure, t)
        if t.is_input:
            G[:, k] = q[:, t.source]
        elif (t.source, t.dest) in col:
            G[:, k] = phi_edges[:, col[(t.source, t.dest)]] * x[:, t.source]
    return G


def _check_target(structure: NetworkStructure, t: Target) -> None:
    n = structure.n_nodes
    if not 0 <= t.source < n or (t.dest is not None and not 0 <= t.dest < n):
        raise InputError(f"target {t} references an unknown node")


def compute_qoi(structure: NetworkStructure, phi: np.ndarray, q: np.ndarray, design) -> np.ndarray:
    """Predicted QoIs for ``design.targets`` under one parameter setting."""
    x = solve_nodal_flows(structure, phi, q)
    phi = np.asarray(phi, dtype=float)
    G = np.zeros(len(design.targets))
    for k, t in enumerate(design.targets):
        _check_target(structure, t)
        if t.is_input:
            G[k] = q[t.source]
        elif (t.source, t.dest) in structure.edges:
            G[k] = phi[t.source, t.dest] * x[t.source]
    return G


def edge_flows(structure: NetworkStructure, phi: np.ndarray, x: np.ndarray) -> list[tuple[int, int, float]]:
    return [(i, j, float(phi[i, j] * x[i])) for i, j in structure.edge_list]


def mass_balance_residual(structure: NetworkStructure, phi: np.ndarray, q: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``|sum_j phi_ji x_j + q_i - x_i| / max(x_i, 1)`` per node."""
    r = np.asarray(phi).T @ x + q - x
    return np.abs(r) / np.maximum(x, 1.0)


def structure_from_edges(
    nodes: Iterable[str], edges: Iterable[tuple[int, int]], inputs: Iterable[int] = ()
) -> NetworkStructure:
    return NetworkStructure(tuple(nodes), frozenset(map(tuple, edges)), frozenset(inputs))

