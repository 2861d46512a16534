import numpy as np
import pytest

from ddlmpc import (ConsensusSolver, NonConvergenceError, build_local_programs,
                    collect_excited_data, make_chain_system, run_receding_horizon)
from ddlmpc.bench import make_instance
from ddlmpc.consensus import RoundBus, mpc_step
from ddlmpc.densesolve import quadratic_prox
from ddlmpc.oracle import CentralizedDlmpc, lqr_dp
from ddlmpc.topology import Topology


@pytest.fixture(scope="module")
def solver5(inst5, programs5):
    return ConsensusSolver(programs5, inst5.plant.topology, 1)


def test_scalar_prox_hand_value():
    out = quadratic_prox(np.eye(1), np.array([1.0]), np.array([[[1.0]]]), 2.0)
    assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-15)


def test_agent_prox_matches_generic(solver5, rng):
    ag = solver5.agents[2]
    V = rng.normal(size=ag.X.shape)
    a = rng.normal(size=ag.x_width)
    fast = ag._prox(ag.Wx, ag.x_diag, a, V, None, None)
    np.testing.assert_allclose(fast, quadratic_prox(ag.Wx, a, V, ag.rho), atol=1e-12)


def test_zero_state_gives_zero_input(inst5, solver5):
    solver5.reset()
    u, x_next, stats = mpc_step(solver5, inst5.plant, np.zeros(10))
    np.testing.assert_allclose(u, 0.0, atol=1e-12)
    np.testing.assert_allclose(x_next, 0.0, atol=1e-12)
    assert stats.primal_res <= 1e-6


def test_zero_steps(inst5, solver5):
    res = run_receding_horizon(solver5, inst5.plant, inst5.x0, 0)
    assert res.cost == 0.0 and res.trajectory.states.shape == (10, 1)
    assert res.trajectory.inputs.shape == (5, 0)


def test_message_pattern(inst5, solver5):
    topo, d = inst5.plant.topology, 1
    solver5.reset()
    res = solver5.solve(inst5.x0)
    x0_msgs = sum(len(topo.out_set(j, d + 1)) - 1 for j in range(5))
    phi_msgs = sum(len(ag.owners) - 1 for ag in solver5.agents)
    psi_msgs = sum(len(ag.program.layout.nodes) - 1 for ag in solver5.agents)
    reach = int(np.count_nonzero(topo.distances <= solver5.flood_hops)) - 5
    per_iter = phi_msgs + psi_msgs + solver5.flood_rounds * reach
    assert res.messages == x0_msgs + res.iterations * per_iter
    assert solver5.bus.max_hops <= d + 1
    # rows talk to owners within d + 1 hops, owners to rows in their layout
    for ag in solver5.agents:
        assert set(ag.owners) == topo.in_set(ag.node, d + 1)


def test_bus_rejects_long_messages():
    bus = RoundBus(Topology.chain(5), 1)
    with pytest.raises(Exception):
        bus.send(0, 3, "phi", np.zeros(2))
    flags = np.array([True, True, False, True, True])
    assert not bus.flood_and(flags, 1, 4).any()
    assert bus.flood_and(flags, 1, 1).tolist() == [True, False, False, False, True]


def test_nonconvergence(inst5, programs5):
    solver = ConsensusSolver(programs5, inst5.plant.topology, 1, max_iter=2)
    with pytest.raises(NonConvergenceError) as info:
        solver.solve(inst5.x0)
    assert info.value.exit_code == 4
    assert len(info.value.history["primal"]) == 2


def test_matches_model_based_on_two_nodes():
    inst = make_instance(2, 0, 2, d_values=(1,))
    progs = build_local_programs(inst.data, 1, 2)
    solver = ConsensusSolver(progs, inst.plant.topology, 1)
    solver.solve(inst.x0)
    ref = CentralizedDlmpc(inst.plant, 1, 2).solve(inst.x0)
    xs, us = solver.predicted_trajectory()
    assert np.max(np.abs(xs - ref.states)) <= 1e-4
    assert np.max(np.abs(us - ref.inputs)) <= 1e-4


def test_single_agent_matches_riccati():
    plant = make_chain_system(1, 0)
    traj = collect_excited_data(plant, 40, seed=0)
    progs = build_local_programs(traj, 0, 3)
    solver = ConsensusSolver(progs, plant.topology, 0)
    x0 = np.array([0.7, -0.2])
    solver.solve(x0)
    K, _ = lqr_dp(plant, 3)
    np.testing.assert_allclose(solver.inputs(), -K[0] @ x0, atol=1e-5)


def test_warm_start_does_not_change_trajectory(inst5, programs5):
    topo = inst5.plant.topology
    warm = run_receding_horizon(ConsensusSolver(programs5, topo, 1), inst5.plant, inst5.x0, 4)
    cold = run_receding_horizon(ConsensusSolver(programs5, topo, 1), inst5.plant, inst5.x0, 4,
                                warm_start=False)
    assert np.max(np.abs(warm.trajectory.states - cold.trajectory.states)) <= 2e-5
    assert sum(s.admm_iters for s in warm.stats[1:]) < sum(s.admm_iters for s in cold.stats[1:])


def test_closed_loop_is_deterministic(inst5, programs5):
    topo = inst5.plant.topology
    runs = [run_receding_horizon(ConsensusSolver(programs5, topo, 1), inst5.plant, inst5.x0, 3)
            for _ in range(2)]
    assert runs[0].trajectory.to_csv() == runs[1].trajectory.to_csv()
    assert np.isfinite(runs[0].cost)
    header = runs[0].stats_csv().splitlines()[0]
    assert header == "step,admm_iters,wall_ms_per_agent_avg,messages,bytes,primal_res,dual_res"
