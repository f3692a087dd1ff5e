"""Small reference problems and oracles shared by the tests."""

import numpy as np

from mfaboed.network import enumerate_candidates, structure_from_edges
from mfaboed.stochastics import AllocationPrior, InputPrior, ParameterPriors


def fixed_point_flows(phi, q, iters=10_000):
    """Independent oracle: push flow downstream until nothing changes."""
    x = np.array(q, dtype=float)
    for _ in range(iters):
        nxt = phi.T @ x + q
        if np.array_equal(nxt, x):
            break
        x = nxt
    return x


def split_problem(alpha_keep=4.0, alpha_leak=1.0, q_mu=10.0, q_sd=1e-9, point_mass=False):
    """Source S feeds B; the uncertain edge S -> C diverts a Dirichlet share.

    Structure 0 has S -> B only (target S -> B equals the inflow); structure 1
    sends a Beta(alpha_keep, alpha_leak) fraction to B.
    """
    base = structure_from_edges(["S", "B", "C"], [(0, 1), (0, 2)], inputs=[0])
    cands = enumerate_candidates(base, [(0, 2)])
    priors = ParameterPriors(
        AllocationPrior({0: ((1, alpha_keep), (2, alpha_leak))}), InputPrior({0: (q_mu, q_sd)}), point_mass
    )
    return cands, priors


def bystander_problem():
    """Two structures that differ only on an edge the target never sees."""
    base = structure_from_edges(["S", "B", "D", "E"], [(0, 1), (2, 3)], inputs=[0, 2])
    cands = enumerate_candidates(base, [(2, 3)])
    priors = ParameterPriors(
        AllocationPrior({0: ((1, 1.0),), 2: ((3, 1.0),)}), InputPrior({0: (10.0, 2.0), 2: (5.0, 1.0)})
    )
    return cands, priors


def random_acyclic(rng, n_nodes, edge_prob=0.4):
    """Random DAG (edges only go to higher indices) with Dirichlet splits and
    nonnegative inflows.  Returns ``(structure, phi, q)``."""
    edges = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < edge_prob]
    structure = structure_from_edges([f"n{i}" for i in range(n_nodes)], edges, inputs=range(n_nodes))
    phi = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        outs = structure.out_edges(i)
        if outs:
            phi[i, outs] = rng.dirichlet(np.full(len(outs), 0.7))
    q = rng.exponential(10.0, n_nodes) * (rng.random(n_nodes) < 0.6)
    return structure, phi, q


def split_problem_information(sigma=0.1, alpha_keep=4.0, alpha_leak=1.0, q=10.0, n_grid=4001):
    """Dense-quadrature mutual information for ``split_problem`` with the inflow
    pinned at ``q``: structure 0 predicts ``q``, structure 1 predicts
    ``q * phi`` with ``phi ~ Beta(alpha_keep, alpha_leak)``; prior 1/2 each."""
    from scipy import integrate, stats

    y = np.linspace(1e-6, q * (1 + 12 * sigma), n_grid)
    p0 = stats.norm.pdf(y, q, sigma * q)
    phi = np.linspace(1e-9, 1.0, n_grid)
    w = stats.beta.pdf(phi, alpha_keep, alpha_leak)
    G = q * phi
    p1 = np.empty_like(y)
    for lo in range(0, n_grid, 500):
        yy = y[lo : lo + 500, None]
        p1[lo : lo + 500] = integrate.simpson(stats.norm.pdf(yy, G, sigma * G) * w, x=phi, axis=1)
    mix = 0.5 * (p0 + p1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(p0 > 0, p0 * np.log(p0 / mix), 0.0)
        t1 = np.where(p1 > 0, p1 * np.log(p1 / mix), 0.0)
    return 0.5 * integrate.simpson(t0, x=y) + 0.5 * integrate.simpson(t1, x=y)
