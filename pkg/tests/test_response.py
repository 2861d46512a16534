import numpy as np
import pytest

from ddlmpc import ArgumentError, ConstraintSpec, CostSpec, SystemResponse, Topology, make_chain_system
from ddlmpc.response import (achievability_residual, eval_cost, extract_u0, full_mask,
                             locality_mask, response_cost, rollout)


def open_loop(sys, T):
    n, p = sys.n_states, sys.n_inputs
    X = np.stack([np.linalg.matrix_power(sys.A, t) for t in range(T + 1)])
    return X, np.zeros((T, p, n))


def test_locality_mask_examples():
    topo = Topology.chain(3)
    m = locality_mask(topo, 1)
    assert not m.allows_state(0, 2) and m.allows_input(0, 2)
    big = locality_mask(topo, topo.diameter)
    assert len(big.state_pairs) == 9
    zero = locality_mask(topo, 0)
    assert zero.state_pairs == {(i, i) for i in range(3)}


def test_open_loop_is_achievable():
    sys = make_chain_system(4, 1)
    X, U = open_loop(sys, 4)
    phi = SystemResponse.from_dense(sys.topology, X, U, tol=0.0)
    assert achievability_residual(sys, phi) <= 1e-12
    X2 = X.copy()
    X2[0] = 0.0
    bad = SystemResponse.from_dense(sys.topology, X2, U)
    assert achievability_residual(sys, bad) >= np.sqrt(sys.n_states)
    X3 = X.copy()
    X3[2, 0, 0] += 1e-4
    res = achievability_residual(sys, SystemResponse.from_dense(sys.topology, X3, U))
    assert 1e-5 < res < 1e-3


def test_rollout_matches_simulation(rng):
    sys = make_chain_system(4, 1)
    T, n, p = 3, sys.n_states, sys.n_inputs
    # achievable response from a random static-in-time feedback on the future
    U = rng.normal(size=(T, p, n))
    X = np.zeros((T + 1, n, n))
    X[0] = np.eye(n)
    for t in range(T):
        X[t + 1] = sys.A @ X[t] + sys.B @ U[t]
    phi = SystemResponse.from_dense(sys.topology, X, U)
    x0 = rng.normal(size=n)
    xs, us = rollout(phi, x0)
    sim = sys.simulate(x0, us)
    np.testing.assert_allclose(xs, sim.states, atol=1e-8)
    full = SystemResponse.from_dense(sys.topology, X, U, mask=full_mask(sys.topology))
    np.testing.assert_allclose(rollout(full, x0)[0], xs, atol=1e-14)
    zx, zu = rollout(phi, np.zeros(n))
    assert not zx.any() and not zu.any()
    for i in range(4):
        np.testing.assert_allclose(extract_u0(phi, x0, i), us[i:i + 1, 0], atol=1e-14)


def test_extract_u0_locality(rng):
    topo = Topology.chain(6)
    mask = locality_mask(topo, 1)
    U = rng.normal(size=(2, 6, 12))
    X = np.zeros((3, 12, 12))
    phi = SystemResponse.from_dense(topo, X, U, mask=mask)
    x0 = rng.normal(size=12)
    x1 = x0.copy()
    x1[topo.state_slice(5)] += 1.0  # node 6 is 3 hops from node 3
    np.testing.assert_array_equal(extract_u0(phi, x0, 2), extract_u0(phi, x1, 2))


def test_eval_cost_examples(rng):
    topo = Topology.chain(3)
    cost = CostSpec.identity(topo)
    assert eval_cost(np.zeros((6, 2)), np.zeros((3, 1)), cost, topo) == 0.0
    x = np.zeros((6, 2))
    x[0, 0] = 1.0
    assert eval_cost(x, np.zeros((3, 1)), cost, topo) == 1.0
    xs, us = rng.normal(size=(6, 4)), rng.normal(size=(3, 3))
    Q, R, QT = cost.dense(topo)
    dense = sum(xs[:, t] @ Q @ xs[:, t] + us[:, t] @ R @ us[:, t] for t in range(3))
    dense += xs[:, 3] @ QT @ xs[:, 3]
    assert eval_cost(xs, us, cost, topo) == pytest.approx(dense, rel=1e-12)


def test_response_cost_zero_state():
    sys = make_chain_system(3, 0)
    X, U = open_loop(sys, 2)
    phi = SystemResponse.from_dense(sys.topology, X, U)
    assert response_cost(phi, np.zeros(6), CostSpec.identity(sys.topology)) == 0.0


def test_constraint_validation():
    topo = Topology.chain(2)
    with pytest.raises(ArgumentError):
        ConstraintSpec(input_bounds={0: ([0.1], [1.0])})
    lo, hi = ConstraintSpec.input_box(topo, 0.5).stacked(topo, 2)
    assert lo.size == 2 * (4 + 2)
    np.testing.assert_array_equal(hi[8:], 0.5)
    assert np.isinf(hi[:8]).all()


def test_response_is_read_only():
    sys = make_chain_system(2, 0)
    X, U = open_loop(sys, 1)
    phi = SystemResponse.from_dense(sys.topology, X, U)
    with pytest.raises((TypeError, ValueError)):
        phi.phi_x[(0, 0, 0)][0, 0] = 3.0
