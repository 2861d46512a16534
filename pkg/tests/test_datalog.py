import numpy as np
import pytest

from ddlmpc import ArgumentError, TrajectoryData, collect_excited_data, hankel, make_chain_system
from ddlmpc.datalog import (HankelStack, check_pe, local_view, min_data_length, pe_diagnostics,
                            require_pe)
from ddlmpc.exceptions import DataCollectionError, DataError


def test_hankel_examples():
    np.testing.assert_array_equal(hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])
    sig = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(hankel(sig, 3), sig.T.reshape(-1, 1))
    np.testing.assert_array_equal(hankel(sig, 1), sig)
    with pytest.raises(ArgumentError):
        hankel([1, 2], 3)


def test_check_pe_examples():
    assert not check_pe([1, 1, 1, 1, 1], 2)
    assert check_pe([1, 0, 0, 1, 0], 2)
    assert not check_pe(np.zeros(10), 1)
    diag = pe_diagnostics([1, 0, 1], 3)
    assert diag.too_short and not diag.ok


def test_require_pe_raises_with_pe_message():
    with pytest.raises(DataError, match="PE"):
        require_pe(np.ones(8), 2)


def test_min_data_length():
    assert min_data_length(1, 2, 6) == 15
    assert min_data_length(1, 1, 1) == 3
    base = min_data_length(2, 3, 4)
    assert min_data_length(3, 3, 4) > base
    assert min_data_length(2, 4, 4) > base
    assert min_data_length(2, 3, 5) > base


def test_local_view():
    sys = make_chain_system(4, 0)
    traj = collect_excited_data(sys, 12, seed=1)
    assert local_view(traj, range(4)).states.shape == traj.states.shape
    one = local_view(traj, {2})
    assert one.states.shape == (2, 13) and one.inputs.shape == (1, 12)
    a = local_view(local_view(traj, {1, 2, 3}), {2, 3})
    b = local_view(traj, {2, 3})
    np.testing.assert_array_equal(a.states, b.states)
    with pytest.raises(ArgumentError):
        local_view(traj, {7})


def test_collect_determinism_and_pe():
    sys = make_chain_system(3, 0)
    n, p, L = 6, 3, 4
    length = min_data_length(p, n, L)
    t1 = collect_excited_data(sys, length, seed=5, pe_order=n + L)
    t2 = collect_excited_data(sys, length, seed=5, pe_order=n + L)
    np.testing.assert_array_equal(t1.states, t2.states)
    assert check_pe(t1.inputs, n + L)
    with pytest.raises(DataCollectionError):
        collect_excited_data(sys, 40, amplitude=0.0, pe_order=2)


def test_hankel_columns_are_trajectories():
    sys = make_chain_system(3, 2)
    traj = collect_excited_data(sys, 30, seed=0)
    stack = HankelStack.from_trajectory(traj, 4)
    n, p = 6, 3
    for k in range(stack.columns):
        x = stack.state_part[:, k].reshape(4, n)
        u = stack.input_part[:, k].reshape(4, p)
        for t in range(3):
            assert np.linalg.norm(x[t + 1] - sys.A @ x[t] - sys.B @ u[t]) <= 1e-10


def test_rank_certificate():
    sys = make_chain_system(3, 2)
    n, p, L = 6, 3, 3
    traj = collect_excited_data(sys, min_data_length(p, n, L) + 5, seed=3, pe_order=n + L)
    stack = HankelStack.from_trajectory(traj, L)
    H = np.vstack([stack.state_part, stack.input_part])
    assert np.linalg.matrix_rank(H) == n + p * L


def test_csv_roundtrip(tmp_path):
    sys = make_chain_system(3, 0)
    traj = collect_excited_data(sys, 9, seed=0)
    traj.to_csv(tmp_path / "t.csv")
    back = TrajectoryData.from_csv(tmp_path / "t.csv", sys.topology)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.inputs, traj.inputs)
