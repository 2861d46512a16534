"""Centralized reference solvers used to check the distributed controller.

Both localized solvers reduce the problem the same way. Every column ``j`` of
a feasible response is an affine family ``s0_j + D_j W_j`` of trajectories, so
the predicted trajectory from ``x0`` is ``sum_j s0_j x0_j + D_j w_j`` with
``w_j = W_j x0_j`` free whenever ``x0_j != 0``. Optimizing over the ``w_j`` is
a small least-squares problem (or a box QP), and any optimal ``w_j`` lifts back
to a response by a rank-one choice of ``W_j``.

Trajectory vectors stack ``x_0..x_T`` and then ``u_0..u_{T-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve

from ._validation import check_int, check_vector
from .datalog import TrajectoryData
from .densesolve import BoxQpProblem, solve_box_qp
from .exceptions import InfeasibleError
from .response import ConstraintSpec, CostSpec, SystemResponse, full_mask, locality_mask, stage_cost

FEAS_TOL = 1e-8
NULL_RTOL = 1e-10


@dataclass
class OracleSolution:
    response: SystemResponse
    cost: float
    states: np.ndarray
    inputs: np.ndarray

    @property
    def u0(self):
        return self.inputs[:, 0]


def _orth(M, rtol=NULL_RTOL):
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if not s.size or s[0] == 0:
        return U[:, :0]
    return U[:, :int(np.count_nonzero(s > rtol * s[0]))]


class _AffineColumnsQp:
    """Shared least-squares / box-QP machinery over affine column families."""

    def __init__(self, topo, T, cost, constraints, s0, D):
        self.topology, self.horizon = topo, T
        self.cost = CostSpec.identity(topo) if cost is None else cost
        self.constraints = ConstraintSpec() if constraints is None else constraints
        self.s0, self.D = s0, D  # per column: (len, n_j) and (len, q_j)
        n, p = topo.n_states, topo.n_inputs
        self.n_traj = n * (T + 1) + p * T
        Q, R, QT = self.cost.dense(topo)
        self.W = block_diag(*([Q] * T + [QT] + [R] * T))
        lo, hi = self.constraints.stacked(topo, T)
        # stacked() orders (x_1..x_T, u_0..u_{T-1}); x_0 is never bounded
        self.lo = np.concatenate([np.full(n, -np.inf), lo])
        self.hi = np.concatenate([np.full(n, np.inf), hi])
        self._cache = {}

    def _basis(self, active):
        key = tuple(active)
        if key not in self._cache:
            D = np.hstack([self.D[j] for j in active]) if active else np.zeros((self.n_traj, 0))
            B = _orth(D)
            Dp = np.linalg.pinv(D, rcond=1e-12) @ B if B.shape[1] else np.zeros((D.shape[1], 0))
            H = B.T @ self.W @ B
            fac = cho_factor(H) if H.size else None
            sizes = [self.D[j].shape[1] for j in active]
            self._cache[key] = (B, Dp, fac, sizes)
        return self._cache[key]

    def solve(self, x0):
        topo = self.topology
        x0 = check_vector(x0, topo.n_states, "x0")
        parts = [x0[topo.state_slice(j)] for j in range(topo.node_count)]
        active = [j for j in range(topo.node_count) if np.any(parts[j] != 0)]
        b = np.zeros(self.n_traj)
        for j in active:
            b += self.s0[j] @ parts[j]
        B, Dp, fac, sizes = self._basis(active)
        boxed = np.isfinite(self.lo).any() or np.isfinite(self.hi).any()
        if not B.shape[1]:
            z = np.zeros(0)
            if boxed and (np.any(b < self.lo - 1e-9) or np.any(b > self.hi + 1e-9)):
                raise InfeasibleError("box constraints exclude the only feasible trajectory")
        elif not boxed:
            z = -cho_solve(fac, B.T @ (self.W @ b))
        else:
            z = self._box_solve(B, b)
        s = b + B @ z
        omega = Dp @ z
        W_cols = {}
        off = 0
        for j, q in zip(active, sizes):
            w = omega[off:off + q]
            off += q
            W_cols[j] = np.outer(w, parts[j]) / float(parts[j] @ parts[j])
        return s, W_cols

    def _box_solve(self, B, b):
        r, L = B.shape[1], self.n_traj
        # variables (z, s): s - B z = b, lo <= s <= hi
        P = np.zeros((r + L, r + L))
        P[r:, r:] = 2.0 * self.W
        A_eq = np.hstack([-B, np.eye(L)])
        lo = np.concatenate([np.full(r, -np.inf), self.lo])
        hi = np.concatenate([np.full(r, np.inf), self.hi])
        prob = BoxQpProblem(P, np.zeros(r + L), lo, hi, A_eq, b)
        return solve_box_qp(prob, tol=1e-10, max_iter=50000).x[:r]

    def split(self, s):
        n, p, T = self.topology.n_states, self.topology.n_inputs, self.horizon
        states = s[:n * (T + 1)].reshape(T + 1, n).T
        inputs = s[n * (T + 1):].reshape(T, p).T
        return states, inputs


class CentralizedDlmpc:
    """Model-based localized MPC solved centrally (reference for the distributed arm).

    Args:
        sys: plant.
        d: locality radius; ``None`` removes the locality constraint.
        T: horizon.
        cost: :class:`CostSpec` (identity weights by default).
        constraints: optional :class:`ConstraintSpec`.

    Raises:
        InfeasibleError: some column cannot be localized at radius ``d``.
    """

    def __init__(self, sys, d, T, cost=None, constraints=None):
        topo = sys.topology
        T = check_int(T, "T", minimum=1)
        self.sys, self.d, self.horizon = sys, d, T
        self.mask = full_mask(topo) if d is None else locality_mask(topo, d)
        n, p = topo.n_states, topo.n_inputs
        A, B = sys.A, sys.B
        powers = [np.eye(n)]
        for _ in range(T):
            powers.append(A @ powers[-1])
        F = np.vstack(powers)  # x_t = A^t x0 + ...
        Gam = np.zeros((n * (T + 1), p * T))
        for t in range(1, T + 1):
            for s in range(t):
                Gam[t * n:(t + 1) * n, s * p:(s + 1) * p] = powers[t - 1 - s] @ B
        s0, D = {}, {}
        for j in range(topo.node_count):
            cols = topo.state_slice(j)
            u_idx = [s * p + k for s in range(T) for i in range(topo.node_count)
                     if self.mask.allows_input(i, j) for k in range(*topo.input_slice(i).indices(p))]
            u_idx = np.array(sorted(u_idx), dtype=int)
            bad_rows = [t * n + k for t in range(1, T + 1) for i in range(topo.node_count)
                        if not self.mask.allows_state(i, j)
                        for k in range(*topo.state_slice(i).indices(n))]
            bad_rows = np.array(bad_rows, dtype=int)
            Fj = F[:, cols]
            Gj = Gam[:, u_idx]
            Sel = np.zeros((p * T, u_idx.size))
            Sel[u_idx, np.arange(u_idx.size)] = 1.0
            if bad_rows.size and u_idx.size:
                C = Gj[bad_rows]
                U_, sv, Vt = np.linalg.svd(C, full_matrices=True)
                rk = int(np.count_nonzero(sv > NULL_RTOL * max(sv[0], 1.0))) if sv.size else 0
                u_p = -(Vt[:rk].T @ ((U_[:, :rk].T @ Fj[bad_rows]) / sv[:rk, None]))
                null = Vt[rk:].T
                resid = np.linalg.norm(Fj[bad_rows] + C @ u_p)
            else:
                u_p = np.zeros((u_idx.size, Fj.shape[1]))
                null = np.eye(u_idx.size)
                resid = np.linalg.norm(Fj[bad_rows]) if bad_rows.size else 0.0
            if resid > FEAS_TOL * (1.0 + np.linalg.norm(Fj)):
                raise InfeasibleError(
                    f"column {j + 1} cannot be localized at d={d} (residual {resid:.2e})",
                    {"column": j + 1, "residual": float(resid)})
            s0[j] = np.vstack([Fj + Gj @ u_p, Sel @ u_p])
            D[j] = np.vstack([Gj @ null, Sel @ null])
            s0[j][np.abs(s0[j]) < 1e-14 * (1.0 + np.abs(s0[j]).max())] = 0.0
        self._qp = _AffineColumnsQp(topo, T, cost, constraints, s0, D)
        self.cost = self._qp.cost

    def solve(self, x0):
        s, W_cols = self._qp.solve(x0)
        states, inputs = self._qp.split(s)
        phi = self._response(W_cols)
        return OracleSolution(phi, _traj_cost(states, inputs, self._qp), states, inputs)

    def _response(self, W_cols):
        topo, T, qp = self.sys.topology, self.horizon, self._qp
        n, p = topo.n_states, topo.n_inputs
        X = np.zeros((T + 1, n, n))
        U = np.zeros((T, p, n))
        for j in range(topo.node_count):
            col = qp.s0[j] + (qp.D[j] @ W_cols[j] if j in W_cols else 0.0)
            X[:, :, topo.state_slice(j)] = col[:n * (T + 1)].reshape(T + 1, n, -1)
            U[:, :, topo.state_slice(j)] = col[n * (T + 1):].reshape(T, p, -1)
        return SystemResponse.from_dense(topo, X, U, mask=self.mask)


def solve_dlmpc_centralized(sys, x0, d, T, cost=None, constraints=None):
    """One-shot model-based localized MPC; returns ``(response, optimal cost)``."""
    sol = CentralizedDlmpc(sys, d, T, cost, constraints).solve(x0)
    return sol.response, sol.cost


class DataDrivenCentralized:
    """Localized MPC over the global Hankel parametrization (no model access)."""

    def __init__(self, program, cost=None, constraints=None):
        topo, T = program.topology, program.horizon
        self.program, self.horizon, self.topology = program, T, topo
        n, p = topo.n_states, topo.n_inputs
        s0, D = {}, {}
        for j, col in program.columns.items():
            pos = _kept_positions(col.layout, topo, T)
            Q = col.range_basis
            s0[j] = np.zeros((n * (T + 1) + p * T, col.layout.width))
            s0[j][pos] = col.offset
            D[j] = np.zeros((s0[j].shape[0], Q.shape[1]))
            D[j][pos] = Q
        self._qp = _AffineColumnsQp(topo, T, cost, constraints, s0, D)
        self.cost = self._qp.cost

    def solve(self, x0):
        s, W_cols = self._qp.solve(x0)
        states, inputs = self._qp.split(s)
        columns = {}
        for j, col in self.program.columns.items():
            pos = _kept_positions(col.layout, self.topology, self.horizon)
            full = self._qp.s0[j] + (self._qp.D[j] @ W_cols[j] if j in W_cols else 0.0)
            columns[j] = full[pos]
        from .localsls import assemble_response
        phi = assemble_response(self.program.columns, columns)
        return OracleSolution(phi, _traj_cost(states, inputs, self._qp), states, inputs)


def solve_dd_centralized(program, x0, cost=None, constraints=None):
    sol = DataDrivenCentralized(program, cost, constraints).solve(x0)
    return sol.response, sol.cost


def _kept_positions(layout, topo, T):
    """Indices of a column's kept entries inside a stacked trajectory vector."""
    n, p = topo.n_states, topo.n_inputs
    pos = []
    for k in layout.nodes:
        start, ns, ni = layout.chunks[k]
        if ns:
            sl = topo.state_slice(k)
            pos += [t * n + r for t in range(T + 1) for r in range(sl.start, sl.stop)]
        if ni:
            sl = topo.input_slice(k)
            pos += [n * (T + 1) + t * p + r for t in range(T) for r in range(sl.start, sl.stop)]
    return np.array(pos, dtype=int)


def _traj_cost(states, inputs, qp):
    from .response import eval_cost
    return eval_cost(states, inputs, qp.cost, qp.topology)


def lqr_dp(sys, T, cost=None):
    """Finite-horizon LQR by backward Riccati recursion.

    Returns ``(gains, P0)`` with ``u_t = -gains[t] x_t`` and optimal cost ``x0' P0 x0``.

    >>> import numpy as np
    >>> from ddlmpc.topology import Topology
    >>> from ddlmpc.plant import LtiSystem
    >>> topo = Topology.from_edges(1, [], [1], [1])
    >>> gains, _ = lqr_dp(LtiSystem(topo, {(0, 0): [[1.0]]}, {0: [[1.0]]}), 1)
    >>> float(gains[0][0, 0])
    0.5
    """
    T = check_int(T, "T", minimum=1)
    topo = sys.topology
    cost = CostSpec.identity(topo) if cost is None else cost
    Q, R, QT = cost.dense(topo)
    A, B = sys.A, sys.B
    P = QT
    gains = [None] * T
    for t in reversed(range(T)):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        gains[t] = K
    return gains, P


def lqr_cost(sys, T, x0, cost=None):
    _, P0 = lqr_dp(sys, T, cost)
    x0 = np.asarray(x0, dtype=float)
    return float(x0 @ P0 @ x0)


@dataclass
class CentralizedClosedLoop:
    trajectory: TrajectoryData
    cost: float


def run_centralized_closed_loop(oracle, plant, x0, steps):
    """Receding-horizon loop of a centralized oracle on the true plant."""
    steps = check_int(steps, "steps", minimum=0)
    topo = plant.topology
    x = check_vector(x0, topo.n_states, "x0")
    states, inputs, total = [x], [], 0.0
    for _ in range(steps):
        u = oracle.solve(x).u0
        total += stage_cost(x, u, oracle.cost, topo)
        x = plant.step(x, u)
        states.append(x)
        inputs.append(u)
    traj = TrajectoryData(np.array(states).T, np.array(inputs).T.reshape(topo.n_inputs, steps), topo)
    return CentralizedClosedLoop(traj, total)
