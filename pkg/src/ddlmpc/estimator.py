"""Scikit-learn style front end for the distributed data-driven controller."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_int, check_positive
from .consensus import (DEFAULT_EPS, DEFAULT_MAX_ITER, DEFAULT_RHO, ConsensusSolver,
                        run_receding_horizon)
from .datalog import TrajectoryData
from .exceptions import ArgumentError
from .localsls import build_local_programs, required_local_length


class DataDrivenLocalizedMPC(BaseEstimator):
    """Distributed localized MPC synthesized from one excitation experiment.

    ``fit`` builds one column program per node from the node's local view of
    the data; ``predict`` maps measured states to the first control input by
    running the consensus solver (warm-started across calls).

    Args:
        d: locality radius in hops.
        horizon: prediction horizon ``T``.
        rho: ADMM penalty.
        eps_primal, eps_dual: stopping tolerances.
        max_iter: ADMM iteration cap per solve.
        cost: optional :class:`~ddlmpc.response.CostSpec` (identity weights if ``None``).
        constraints: optional :class:`~ddlmpc.response.ConstraintSpec`.
        n_jobs: worker threads for agent compute phases.
    """

    def __init__(self, d=2, horizon=5, rho=DEFAULT_RHO, eps_primal=DEFAULT_EPS,
                 eps_dual=DEFAULT_EPS, max_iter=DEFAULT_MAX_ITER, cost=None, constraints=None,
                 n_jobs=1):
        self.d = d
        self.horizon = horizon
        self.rho = rho
        self.eps_primal = eps_primal
        self.eps_dual = eps_dual
        self.max_iter = max_iter
        self.cost = cost
        self.constraints = constraints
        self.n_jobs = n_jobs

    def _validate_params(self):
        check_int(self.d, "d", minimum=0)
        check_int(self.horizon, "horizon", minimum=1)
        check_positive(self.rho, "rho")
        check_positive(self.eps_primal, "eps_primal")
        check_positive(self.eps_dual, "eps_dual")
        check_int(self.max_iter, "max_iter", minimum=1)
        check_int(self.n_jobs, "n_jobs", minimum=1)

    def fit(self, X, y=None):
        """Build the per-node programs from a global :class:`TrajectoryData`.

        Raises:
            ArgumentError: bad parameters or a record shorter than some node needs.
            DataError: inputs not PE on some region or an infeasible local program.
        """
        self._validate_params()
        if not isinstance(X, TrajectoryData):
            raise ArgumentError("fit expects a TrajectoryData record")
        topo = X.topology
        need = max(required_local_length(topo, i, self.d, self.horizon)
                   for i in range(topo.node_count))
        self.required_length_ = need
        self.programs_ = build_local_programs(X, self.d, self.horizon)
        self.topology_ = topo
        self.solver_ = ConsensusSolver(
            self.programs_, topo, self.d, self.cost, self.constraints, self.rho,
            self.eps_primal, self.eps_dual, self.max_iter, self.n_jobs)
        self.n_features_in_ = topo.n_states
        self.last_result_ = None
        return self

    def predict(self, X):
        """First inputs for each row of ``X`` (shape ``(n_samples, n_states)``)."""
        check_is_fitted(self, "solver_")
        X = check_array(X, ensure_2d=False)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"expected {self.n_features_in_} state entries, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.topology_.n_inputs))
        for r, x0 in enumerate(X):
            self.last_result_ = self.solver_.solve(x0)
            out[r] = self.solver_.inputs()
        return out[0] if single else out

    def control(self, x0):
        return self.predict(np.asarray(x0, dtype=float))

    def reset(self):
        """Drop the warm start."""
        check_is_fitted(self, "solver_")
        self.solver_.reset()
        return self

    def run(self, plant, x0, steps, warm_start=True):
        """Closed loop on ``plant`` (a simulator standing in for the real network)."""
        check_is_fitted(self, "solver_")
        return run_receding_horizon(self.solver_, plant, x0, steps, warm_start)
