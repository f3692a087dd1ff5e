import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import fixed_point_flows, random_acyclic
from mfaboed.errors import InfeasibleFlowError, InputError, PatternMismatchError, StructuralCycleError
from mfaboed.network import (
    SOLVES,
    Target,
    assemble_system,
    compute_qoi,
    enumerate_candidates,
    mass_balance_residual,
    phi_matrix,
    solve_flows_batch,
    solve_nodal_flows,
    structure_from_edges,
)
from mfaboed.stochastics import Design


def chain():
    return structure_from_edges(["a", "b"], [(0, 1)], inputs=[0])


def prior_mean_phi(spec, structure):
    phi_e, q = spec.priors.for_structure(structure).mean()
    return phi_matrix(structure, phi_e), q


# candidate enumeration


def test_steel_has_sixteen_uniform_structures(steel):
    c = steel.candidates
    assert len(c) == 16
    np.testing.assert_allclose(c.model_prior, np.full(16, 1 / 16))
    assert len({s.edges for s in c.structures}) == 16


def test_no_uncertain_edges_gives_single_structure():
    c = enumerate_candidates(chain(), [])
    assert len(c) == 1
    assert c.model_prior[0] == 1.0


def test_per_edge_prior_is_product_of_bernoullis():
    base = structure_from_edges("abc", [(0, 1)], inputs=[0])
    c = enumerate_candidates(base, [(0, 2), (1, 2)], "per-edge", [0.5, 0.8])
    np.testing.assert_allclose(c.model_prior, [0.1, 0.1, 0.4, 0.4])
    # oracle: brute-force product over every on/off pattern
    for s, p in zip(c.structures, c.model_prior):
        on = [(0, 2) in s.edges, (1, 2) in s.edges]
        assert p == pytest.approx(np.prod([pe if b else 1 - pe for pe, b in zip([0.5, 0.8], on)]))


def test_first_uncertain_edge_toggles_fastest():
    base = structure_from_edges("abc", [(0, 1)], inputs=[0])
    c = enumerate_candidates(base, [(0, 2), (1, 2)])
    assert [s.code for s in c.structures] == ["00", "10", "01", "11"]
    assert (0, 2) in c.structures[1].edges and (1, 2) not in c.structures[1].edges


@pytest.mark.parametrize(
    "edges, kind, probs",
    [
        ([(0, 1)] * 2, "uniform", None),
        ([(1, 1)], "uniform", None),
        ([(0, 1)], "per-edge", [1.0]),
        ([(0, 1)], "per-edge", [0.2, 0.3]),
        ([(0, 1)], "bogus", None),
    ],
)
def test_bad_candidate_declarations(edges, kind, probs):
    base = structure_from_edges("ab", [], inputs=[0])
    with pytest.raises(InputError):
        enumerate_candidates(base, edges, kind, probs)


def test_uncertain_edge_cap():
    nodes = [f"n{i}" for i in range(22)]
    base = structure_from_edges(nodes, [], inputs=[0])
    with pytest.raises(InputError, match="exceeds"):
        enumerate_candidates(base, [(0, j) for j in range(1, 22)])


# assembly and solve


def test_toy_system_matrix_pattern(toy):
    s = toy.candidates.by_code("0")
    idx = {lab: i for i, lab in enumerate(s.nodes)}
    rng = np.random.default_rng(3)
    phi = np.zeros((9, 9))
    for i in range(9):
        outs = s.out_edges(i)
        if outs:
            phi[i, outs] = rng.dirichlet(np.ones(len(outs)))
    A, b = assemble_system(s, phi, np.zeros(9))

    def f(a, c):
        return phi[idx[a], idx[c]]

    expected = np.eye(9)
    for (row, col), (a, c) in {
        ("2", "1"): ("1", "2"),
        ("3", "2"): ("2", "3"),
        ("4", "3"): ("3", "4"),
        ("5", "3"): ("3", "5"),
        ("5", "8"): ("8", "5"),
        ("7", "6"): ("6", "7"),
        ("8", "2"): ("2", "8"),
        ("8", "7"): ("7", "8"),
        ("9", "5"): ("5", "9"),
        ("9", "8"): ("8", "9"),
    }.items():
        expected[idx[row], idx[col]] = -f(a, c)
    np.testing.assert_array_equal(A, expected)


def test_edgeless_network_returns_inflows():
    s = structure_from_edges("abc", [], inputs=[0, 1, 2])
    q = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(solve_nodal_flows(s, np.zeros((3, 3)), q), q)


def test_two_node_chain():
    s = chain()
    phi = np.array([[0.0, 1.0], [0.0, 0.0]])
    x = solve_nodal_flows(s, phi, np.array([5.0, 0.0]))
    np.testing.assert_allclose(x, [5.0, 5.0])
    assert compute_qoi(s, phi, np.array([5.0, 0.0]), Design.of(Target(0, 1)))[0] == pytest.approx(5.0)


@pytest.mark.parametrize("code", ["0", "1"])
def test_toy_prior_mean_matches_fixed_point_oracle(toy, code):
    s = toy.candidates.by_code(code)
    phi, q = prior_mean_phi(toy, s)
    x = solve_nodal_flows(s, phi, q)
    np.testing.assert_allclose(x, fixed_point_flows(phi, q), rtol=1e-8)


def test_steel_maximal_structure_prior_mean_is_positive_and_balanced(steel):
    s = steel.candidates.by_code("1111")
    phi, q = prior_mean_phi(steel, s)
    x = solve_nodal_flows(s, phi, q)
    assert np.all(x > 0)
    assert mass_balance_residual(s, phi, q, x).max() < 1e-8
    np.testing.assert_allclose(x, fixed_point_flows(phi, q), rtol=1e-8)


def test_absent_edge_flow_is_zero(toy):
    s = toy.candidates.by_code("0")
    phi, q = prior_mean_phi(toy, s)
    assert compute_qoi(s, phi, q, Design.of(toy.target("7", "3")))[0] == 0.0


def test_input_target_reads_inflow(toy):
    s = toy.candidates.by_code("1")
    phi, q = prior_mean_phi(toy, s)
    assert compute_qoi(s, phi, q, Design.of(Target(0)))[0] == q[0]


def test_closed_cycle_is_rejected_with_nodes():
    s = structure_from_edges(["a", "b", "c"], [(0, 1), (1, 0)], inputs=[2])
    phi = np.zeros((3, 3))
    phi[0, 1] = phi[1, 0] = 1.0
    with pytest.raises(StructuralCycleError) as exc:
        solve_nodal_flows(s, phi, np.array([0.0, 0.0, 1.0]))
    assert set(exc.value.nodes) == {"a", "b"}


def test_near_singular_cycle_is_rejected():
    s = structure_from_edges(["a", "b", "c"], [(0, 1), (1, 0), (1, 2)], inputs=[0])
    phi = np.zeros((3, 3))
    phi[0, 1] = 1.0
    phi[1, 0], phi[1, 2] = 1 - 1e-14, 1e-14
    with pytest.raises(StructuralCycleError, match="reciprocal condition"):
        solve_nodal_flows(s, phi, np.array([1.0, 0.0, 0.0]))


def test_negative_solution_is_infeasible():
    s = chain()
    phi = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(InfeasibleFlowError):
        solve_nodal_flows(s, phi, np.array([-1.0, 0.0]))


@pytest.mark.parametrize(
    "phi",
    [
        np.array([[0.0, 0.5], [0.0, 0.0]]),  # row sum != 1
        np.array([[0.0, 1.0], [1.0, 0.0]]),  # edge b -> a absent
        np.zeros((3, 3)),  # wrong shape
    ],
)
def test_pattern_mismatch(phi):
    with pytest.raises(PatternMismatchError):
        solve_nodal_flows(chain(), phi, np.array([1.0, 0.0]))


def test_unknown_target_node():
    s = chain()
    phi = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(InputError):
        compute_qoi(s, phi, np.array([1.0, 0.0]), Design.of(Target(0, 7)))


def test_solve_counter_counts_batch_rows():
    s = chain()
    before = SOLVES.count
    solve_flows_batch(s, np.ones((17, 1)), np.tile([3.0, 0.0], (17, 1)), chunk=5)
    assert SOLVES.count - before == 17


def test_batch_solve_equals_single_solves(toy):
    s = toy.candidates.by_code("1")
    sp = toy.priors.for_structure(s)
    phi_e, q = sp.sample(50, np.random.default_rng(0))
    xb = solve_flows_batch(s, phi_e, q, chunk=7)
    for k in range(50):
        np.testing.assert_allclose(xb[k], solve_nodal_flows(s, phi_matrix(s, phi_e[k]), q[k]), rtol=1e-12)


# properties


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 14))
def test_direct_solve_matches_fixed_point_oracle(seed, n):
    s, phi, q = random_acyclic(np.random.default_rng(seed), n)
    x = solve_nodal_flows(s, phi, q)
    np.testing.assert_allclose(x, fixed_point_flows(phi, q), rtol=1e-8, atol=1e-12)
    assert mass_balance_residual(s, phi, q, x).max() < 1e-8
    assert np.all(x >= 0)


@given(seed=st.integers(0, 2**32 - 1), a=st.floats(0, 10), b=st.floats(0, 10))
def test_flows_are_linear_in_inflows(seed, a, b):
    rng = np.random.default_rng(seed)
    s, phi, q1 = random_acyclic(rng, 8)
    q2 = rng.exponential(5.0, 8)
    lhs = solve_nodal_flows(s, phi, a * q1 + b * q2)
    rhs = a * solve_nodal_flows(s, phi, q1) + b * solve_nodal_flows(s, phi, q2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
def test_sinks_absorb_all_inflow(seed):
    s, phi, q = random_acyclic(np.random.default_rng(seed), 10)
    x = solve_nodal_flows(s, phi, q)
    sinks = [i for i in range(10) if not s.out_edges(i)]
    assert x[sinks].sum() == pytest.approx(q.sum(), rel=1e-10, abs=1e-10)


def test_enumeration_is_all_subsets():
    base = structure_from_edges("abcd", [(0, 1)], inputs=[0])
    unc = [(0, 2), (1, 3), (2, 3)]
    c = enumerate_candidates(base, unc)
    got = {frozenset(s.edges - base.edges) for s in c.structures}
    want = {frozenset(x) for r in range(4) for x in itertools.combinations(unc, r)}
    assert got == want
