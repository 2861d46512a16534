import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ddlmpc import ArgumentError, DataDrivenLocalizedMPC
from ddlmpc.oracle import CentralizedDlmpc


def test_params_roundtrip():
    est = DataDrivenLocalizedMPC(d=1, horizon=3, rho=2.0)
    params = est.get_params()
    assert params["d"] == 1 and params["rho"] == 2.0
    assert clone(est).get_params()["horizon"] == 3


def test_fit_predict(inst5):
    est = DataDrivenLocalizedMPC(d=1, horizon=3).fit(inst5.data)
    assert est.n_features_in_ == 10
    u = est.predict(inst5.x0)
    ref = CentralizedDlmpc(inst5.plant, 1, 3).solve(inst5.x0).u0
    np.testing.assert_allclose(u, ref, atol=1e-4)
    batch = est.predict(np.vstack([inst5.x0, np.zeros(10)]))
    assert batch.shape == (2, 5)
    np.testing.assert_allclose(batch[1], 0.0, atol=1e-10)


def test_errors(inst5):
    with pytest.raises(NotFittedError):
        DataDrivenLocalizedMPC().predict(np.zeros(10))
    with pytest.raises(ArgumentError):
        DataDrivenLocalizedMPC(rho=-1).fit(inst5.data)
    with pytest.raises(ArgumentError):
        DataDrivenLocalizedMPC().fit(np.zeros((3, 3)))
    est = DataDrivenLocalizedMPC(d=1, horizon=3).fit(inst5.data)
    with pytest.raises(ArgumentError):
        est.predict(np.zeros(4))


def test_run(inst5):
    est = DataDrivenLocalizedMPC(d=1, horizon=3).fit(inst5.data)
    res = est.reset().run(inst5.plant, inst5.x0, 3)
    assert res.trajectory.states.shape == (10, 4) and res.cost > 0
