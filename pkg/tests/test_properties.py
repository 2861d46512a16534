"""Property-based checks of structural invariants."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ddlmpc import ConsensusSolver, Topology, hankel, make_chain_system
from ddlmpc.densesolve import BoxQpProblem, EqLsProblem, rank1_prox, solve_box_qp, solve_eq_ls
from ddlmpc.localsls import assemble_response
from ddlmpc.response import achievability_residual

FAST = settings(max_examples=40, deadline=None,
                suppress_health_check=[HealthCheck.function_scoped_fixture])
SLOW = settings(max_examples=8, deadline=None,
                suppress_health_check=[HealthCheck.function_scoped_fixture])


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 8))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=12)) if pairs else []
    return Topology.from_edges(n, edges, [1] * n, [1] * n)


@FAST
@given(graphs(), st.data())
def test_topology_duality_monotonicity_partition(topo, data):
    n = topo.node_count
    i = data.draw(st.integers(0, n - 1))
    d = data.draw(st.integers(0, n))
    assert topo.in_set(i, d) <= topo.in_set(i, d + 1)
    assert topo.out_set(i, d) <= topo.out_set(i, d + 1)
    for j in range(n):
        assert (j in topo.in_set(i, d)) == (i in topo.out_set(j, d))
    rings = [topo.ring_set(i, k) for k in range(1, d + 1)]
    union = frozenset({i}).union(*rings)
    assert union == topo.in_set(i, d)
    assert sum(len(r) for r in rings) + 1 == len(topo.in_set(i, d))


signals = st.integers(1, 3).flatmap(lambda s: st.integers(4, 20).flatmap(
    lambda T: st.lists(st.floats(-5, 5, allow_nan=False), min_size=s * T, max_size=s * T)
    .map(lambda v: np.array(v).reshape(s, T))))


@FAST
@given(signals, st.integers(2, 4))
def test_hankel_shift_and_rank(sig, L):
    s, T = sig.shape
    if T < L + 1:
        return
    H = hankel(sig, L)
    Hs = hankel(sig[:, 1:], L - 1)
    np.testing.assert_array_equal(H[s:, :], Hs[:, :H.shape[1]])
    np.testing.assert_array_equal(H[s:, :-1], H[:-s, 1:])
    assert np.linalg.matrix_rank(H) <= min(H.shape)


@FAST
@given(st.integers(0, 10_000), st.integers(3, 7), st.integers(0, 3))
def test_eq_ls_kkt_stationarity(seed, n, k):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(n + 2, n))
    d = rng.normal(size=n + 2)
    A = rng.normal(size=(k, n)) if k else None
    b = rng.normal(size=k) if k else None
    sol = solve_eq_ls(EqLsProblem(C, d, A, b))
    grad = C.T @ (C @ sol.x - d)
    if k:
        grad = grad + A.T @ sol.multipliers
        assert np.linalg.norm(A @ sol.x - b) <= 1e-8 * (1 + np.linalg.norm(b))
    scale = 1 + np.linalg.norm(C) * np.linalg.norm(d)
    assert np.linalg.norm(grad) <= 1e-8 * scale


@FAST
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.0, 5.0), st.floats(0.1, 10.0))
def test_rank1_prox_equals_qp(seed, n, q_w, rho):
    rng = np.random.default_rng(seed)
    a, v = rng.normal(size=n), rng.normal(size=n)
    P = 2 * q_w * np.outer(a, a) + rho * np.eye(n)
    qp = solve_box_qp(BoxQpProblem(P, -rho * v), tol=1e-12)
    np.testing.assert_allclose(rank1_prox(q_w, a, v, rho), qp.x, atol=1e-10)


@FAST
@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
def test_plant_linearity_and_sparsity(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    sys = make_chain_system(5, 1)
    x, x2 = rng.normal(size=10), rng.normal(size=10)
    u, u2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    lhs = sys.simulate(alpha * x + beta * x2, alpha * u + beta * u2).states
    rhs = alpha * sys.simulate(x, u).states + beta * sys.simulate(x2, u2).states
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    y = x.copy()
    y[8:] += 1.0  # node 5 is not an in-neighbour of node 2
    np.testing.assert_array_equal(sys.step(x, u[:, 0])[:4], sys.step(y, u[:, 0])[:4])


@SLOW
@given(st.integers(0, 10_000))
def test_projected_columns_assemble_to_achievable(inst5, programs5, seed):
    rng = np.random.default_rng(seed)
    cols = {i: p.project(rng.normal(size=(p.layout.size, p.layout.width)))
            for i, p in programs5.items()}
    assert achievability_residual(inst5.plant, assemble_response(programs5, cols)) <= 1e-8


@SLOW
@given(st.integers(0, 10_000))
def test_parallel_equals_sequential_bitwise(inst5, programs5, seed):
    x0 = np.random.default_rng(seed).uniform(-1, 1, 10)
    topo = inst5.plant.topology
    seq = ConsensusSolver(programs5, topo, 1, n_jobs=1)
    par = ConsensusSolver(programs5, topo, 1, n_jobs=4)
    try:
        r1, r2 = seq.solve(x0), par.solve(x0)
        assert r1.iterations == r2.iterations
        assert np.array_equal(seq.inputs(), par.inputs())
        assert r1.history == r2.history
        again = ConsensusSolver(programs5, topo, 1)
        again.solve(x0)
        assert np.array_equal(again.inputs(), seq.inputs())
    finally:
        par.close()
