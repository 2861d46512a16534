"""Distributed ADMM over row and column partitions of the system response.

Every node runs one :class:`Agent` with two roles. As a *row* agent it owns
the rows of the response that produce its own states and inputs and solves
the cost-carrying update. As a *column* agent it owns the reaction of the
network to its own initial state and projects it onto the data-driven
achievable set. Agents talk only through a :class:`RoundBus`.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_positive, check_vector
from .datalog import TrajectoryData
from .densesolve import quadratic_prox
from .exceptions import ArgumentError, NonConvergenceError
from .response import CostSpec, ConstraintSpec, SystemResponse, stage_cost

DEFAULT_RHO = 1.0
DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 5000


class RoundBus:
    """Synchronous in-process mailbox with message accounting.

    Messages posted during a round are delivered together at the barrier,
    sorted by ``(sender, receiver, tag)``. Every message is audited against
    the hop limit.
    """

    def __init__(self, topology, hop_limit):
        self.topology = topology
        self.hop_limit = hop_limit
        self._outbox = []
        self.messages = 0
        self.bytes = 0
        self.max_hops = 0

    def send(self, sender, receiver, tag, payload):
        dist = self.topology.distances
        hops = int(min(dist[sender, receiver], dist[receiver, sender]))
        if hops > self.hop_limit:
            raise ArgumentError(
                f"message {tag!r} from {sender + 1} to {receiver + 1} crosses {hops} hops")
        self.max_hops = max(self.max_hops, hops)
        self._outbox.append((sender, receiver, tag, payload))
        self.messages += 1
        self.bytes += int(np.asarray(payload).nbytes)

    def deliver(self):
        """Hand out this round's messages as ``{receiver: [(sender, tag, payload), ...]}``."""
        inbox = {}
        for sender, receiver, tag, payload in sorted(self._outbox, key=lambda m: m[:3]):
            inbox.setdefault(receiver, []).append((sender, tag, payload))
        self._outbox = []
        return inbox

    def flood_and(self, flags, hops, rounds):
        """AND-combine boolean flags by ``rounds`` of ``hops``-hop flooding.

        Each round every node forwards its current value to the nodes within
        ``hops`` downstream and keeps the AND of what it received.
        """
        dist = self.topology.distances
        reach = dist <= hops  # reach[j, i]: j's value arrives at i
        fan_out = int(np.count_nonzero(reach)) - self.topology.node_count
        bad = ~np.asarray(flags, dtype=bool)
        for _ in range(rounds):
            bad = (bad.astype(np.int64) @ reach) > 0
        self.messages += rounds * fan_out
        self.bytes += rounds * fan_out
        return ~bad

    def reset_counters(self):
        self.messages = 0
        self.bytes = 0


@dataclass
class RowBlock:
    """Row view of one column owner: where its entries sit in the row arrays."""

    owner: int
    width: int
    x_cols: slice | None
    u_cols: slice | None


class Agent:
    """Row and column roles of one node.

    Args:
        node: node index.
        program: column program of this node (local data only).
        topology: graph (used for dimensions and neighbourhoods).
        d: locality radius.
        Q, R, QT: this node's weights.
        state_bounds, input_bounds: optional ``(lo, hi)`` boxes on own signals.
        rho: ADMM penalty.
    """

    def __init__(self, node, program, topology, d, Q, R, QT, state_bounds=None,
                 input_bounds=None, rho=DEFAULT_RHO):
        self.node = node
        self.program = program
        self.d = d
        self.rho = rho
        T = program.layout.horizon
        self.horizon = T
        topo = topology
        self.n = topo.state_dims[node]
        self.m = topo.input_dims[node]
        dist = topo.distances
        # columns this row touches: states within d hops, inputs within d + 1
        owners_x = [j for j in range(topo.node_count) if dist[j, node] <= d]
        owners_u = [j for j in range(topo.node_count) if dist[j, node] <= d + 1] if self.m else []
        self.owners = tuple(sorted(set(owners_x) | set(owners_u)))
        self.blocks = {}
        ox = ou = 0
        for j in self.owners:
            w = topo.state_dims[j]
            xs = us = None
            if j in owners_x:
                xs = slice(ox, ox + w)
                ox += w
            if j in owners_u:
                us = slice(ou, ou + w)
                ou += w
            self.blocks[j] = RowBlock(j, w, xs, us)
        self.x_width, self.u_width = ox, ou
        self.X = np.zeros((T + 1, self.n, ox))
        self.U = np.zeros((T, self.m, ou))
        self.psi_X, self.psi_U = np.zeros_like(self.X), np.zeros_like(self.U)
        self.lam_X, self.lam_U = np.zeros_like(self.X), np.zeros_like(self.U)
        self.a_x = np.zeros(ox)
        self.a_u = np.zeros(ou)
        self.x0_local = {}

        Wx = np.stack([np.asarray(Q, float)] * T + [np.asarray(QT, float)])
        Wu = np.broadcast_to(np.asarray(R, float).reshape(self.m, self.m), (T, self.m, self.m))
        self.Wx, self.Wu = Wx, np.array(Wu)
        self.x_diag = _diag_or_none(self.Wx)
        self.u_diag = _diag_or_none(self.Wu) if self.m else np.zeros((T, 0))
        self.x_lo = self.x_hi = self.u_lo = self.u_hi = None
        if state_bounds is not None:
            lo, hi = state_bounds
            self.x_lo = np.vstack([np.full(self.n, -np.inf)] + [lo] * T)
            self.x_hi = np.vstack([np.full(self.n, np.inf)] + [hi] * T)
        if input_bounds is not None and self.m:
            lo, hi = input_bounds
            self.u_lo, self.u_hi = np.tile(lo, (T, 1)), np.tile(hi, (T, 1))
        # column role
        self.M = np.zeros((program.layout.size, program.layout.width))
        self.psi_col = np.array(program.offset)
        self.primal = np.inf
        self.dual = np.inf
        self.compute_s = 0.0

    # -- geometry ------------------------------------------------------------

    def _chunk(self, j, X, U):
        blk = self.blocks[j]
        parts = []
        if blk.x_cols is not None:
            parts.append(X[:, :, blk.x_cols].reshape(-1, blk.width))
        if blk.u_cols is not None:
            parts.append(U[:, :, blk.u_cols].reshape(-1, blk.width))
        return parts[0] if len(parts) == 1 else np.vstack(parts)

    def _scatter(self, j, chunk, X, U):
        blk = self.blocks[j]
        off = 0
        if blk.x_cols is not None:
            size = (self.horizon + 1) * self.n
            X[:, :, blk.x_cols] = chunk[:size].reshape(self.horizon + 1, self.n, blk.width)
            off = size
        if blk.u_cols is not None:
            U[:, :, blk.u_cols] = chunk[off:].reshape(self.horizon, self.m, blk.width)

    def row_targets(self):
        """Nodes this agent's rows report to (column owners)."""
        return self.owners

    def column_targets(self):
        return self.program.layout.nodes

    def dimensions(self):
        dims = dict(self.program.dimensions())
        dims.update({"row_x": list(self.X.shape), "row_u": list(self.U.shape),
                     "owners": len(self.owners)})
        return dims

    # -- measurement -----------------------------------------------------------

    def set_x0(self, x0_local):
        """``x0_local`` maps node -> its measured state for every owner of this row."""
        self.x0_local = {j: np.asarray(v, dtype=float) for j, v in x0_local.items()}
        ax, au = np.zeros(self.x_width), np.zeros(self.u_width)
        for j, blk in self.blocks.items():
            if blk.x_cols is not None:
                ax[blk.x_cols] = self.x0_local[j]
            if blk.u_cols is not None:
                au[blk.u_cols] = self.x0_local[j]
        self.a_x, self.a_u = ax, au

    # -- ADMM steps -----------------------------------------------------------

    def phi_update(self):
        """Row update; returns ``{owner: chunk of Phi + Lambda}``."""
        t0 = time.perf_counter()
        self.X_prev, self.U_prev = self.X, self.U
        self.X = self._prox(self.Wx, self.x_diag, self.a_x, self.psi_X - self.lam_X,
                            self.x_lo, self.x_hi)
        if self.m:
            self.U = self._prox(self.Wu, self.u_diag, self.a_u, self.psi_U - self.lam_U,
                                self.u_lo, self.u_hi)
        SX, SU = self.X + self.lam_X, self.U + self.lam_U
        out = {j: self._chunk(j, SX, SU) for j in self.owners}
        self.compute_s += time.perf_counter() - t0
        return out

    def _prox(self, W, diag, a, V, lo, hi):
        if diag is None:
            return quadratic_prox(W, a, V, self.rho, lo, hi)
        s = float(a @ a)
        if s == 0.0:
            return V.copy()
        va = V @ a
        c = self.rho / s
        y = c * va / (2.0 * diag + c)
        if lo is not None:
            y = np.clip(y, lo, hi)
        return V + ((y - va) / s)[..., None] * a

    def psi_update(self, pieces):
        """Column update from ``{row node: chunk}``; returns ``{row node: Psi chunk}``."""
        t0 = time.perf_counter()
        layout = self.program.layout
        for k, chunk in pieces.items():
            self.M[layout.chunk(k)] = chunk
        self.psi_col = self.program.project(self.M)
        out = {k: self.psi_col[layout.chunk(k)] for k in layout.nodes}
        self.compute_s += time.perf_counter() - t0
        return out

    def lambda_update(self, pieces, eps_p, eps_d):
        """Store received Psi rows, update Lambda and the local stopping flag."""
        t0 = time.perf_counter()
        old_X, old_U = self.psi_X, self.psi_U
        self.psi_X, self.psi_U = np.empty_like(old_X), np.empty_like(old_U)
        for j, chunk in pieces.items():
            self._scatter(j, chunk, self.psi_X, self.psi_U)
        rX, rU = self.X - self.psi_X, self.U - self.psi_U
        self.lam_X = self.lam_X + rX
        self.lam_U = self.lam_U + rU
        self.primal = math.sqrt(float(np.sum(rX * rX) + np.sum(rU * rU)))
        d_phi = math.sqrt(float(np.sum((self.X - self.X_prev) ** 2)
                                + np.sum((self.U - self.U_prev) ** 2)))
        d_psi = self.rho * math.sqrt(float(np.sum((self.psi_X - old_X) ** 2)
                                           + np.sum((self.psi_U - old_U) ** 2)))
        self.dual = max(d_phi, d_psi)
        self.done = self.primal <= eps_p and d_phi <= eps_d and d_psi <= eps_d
        self.compute_s += time.perf_counter() - t0
        return self.done

    def receive_psi_init(self, pieces):
        for j, chunk in pieces.items():
            self._scatter(j, chunk, self.psi_X, self.psi_U)

    def reset(self):
        for name in ("X", "U", "lam_X", "lam_U", "psi_X", "psi_U"):
            setattr(self, name, np.zeros_like(getattr(self, name)))
        self.M[:] = 0.0
        self.psi_col = np.array(self.program.offset)

    # -- outputs ----------------------------------------------------------------

    def u0(self):
        """First input of this node from its own rows."""
        if not self.m:
            return np.zeros(0)
        return self.U[0] @ self.a_u

    def predicted(self):
        """Own predicted states ``(T+1, n)`` and inputs ``(T, m)``."""
        return self.X @ self.a_x, self.U @ self.a_u


def _diag_or_none(W):
    W = np.asarray(W, dtype=float)
    if W.shape[-1] == 0:
        return np.zeros(W.shape[:-1])
    d = np.einsum("...ii->...i", W)
    if np.array_equal(W, d[..., None] * np.eye(W.shape[-1])):
        return d
    return None


@dataclass
class ConsensusResult:
    iterations: int
    primal_residual: float
    dual_residual: float
    messages: int
    bytes: int
    history: dict = field(default_factory=dict)


class ConsensusSolver:
    """Synchronous ADMM engine over one agent per node.

    Args:
        programs: mapping node -> column program (from local data).
        topology: interconnection graph.
        d: locality radius.
        cost: :class:`CostSpec`.
        constraints: :class:`ConstraintSpec` or ``None``.
        rho, eps_primal, eps_dual, max_iter: ADMM parameters.
        n_jobs: worker threads for the compute phases (1 runs sequentially).
    """

    def __init__(self, programs, topology, d, cost=None, constraints=None, rho=DEFAULT_RHO,
                 eps_primal=DEFAULT_EPS, eps_dual=DEFAULT_EPS, max_iter=DEFAULT_MAX_ITER,
                 n_jobs=1):
        self.topology = topology
        self.d = check_int(d, "d", minimum=0)
        self.rho = check_positive(rho, "rho")
        self.eps_primal = check_positive(eps_primal, "eps_primal")
        self.eps_dual = check_positive(eps_dual, "eps_dual")
        self.max_iter = check_int(max_iter, "max_iter", minimum=1)
        self.n_jobs = check_int(n_jobs, "n_jobs", minimum=1)
        cost = CostSpec.identity(topology) if cost is None else cost
        constraints = ConstraintSpec() if constraints is None else constraints
        self.cost, self.constraints = cost, constraints
        missing = set(range(topology.node_count)) - set(programs)
        if missing:
            raise ArgumentError(f"no program for node(s) {sorted(k + 1 for k in missing)}")
        self.programs = programs
        self.agents = [
            Agent(i, programs[i], topology, self.d, cost.Q[i], cost.R[i], cost.QT[i],
                  constraints.state_bounds.get(i), constraints.input_bounds.get(i), self.rho)
            for i in range(topology.node_count)]
        self.bus = RoundBus(topology, self.d + 1)
        self.flood_hops = max(self.d, 1)
        self.flood_rounds = max(1, math.ceil(topology.diameter / self.flood_hops))
        self._pool = ThreadPoolExecutor(self.n_jobs) if self.n_jobs > 1 else None
        self.reset()

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def reset(self):
        """Cold start: Phi = Lambda = 0 and Psi the projection of zero."""
        for ag in self.agents:
            ag.reset()
        self._exchange_psi([{k: ag.psi_col[ag.program.layout.chunk(k)]
                             for k in ag.column_targets()} for ag in self.agents],
                           init=True)
        self.bus.reset_counters()

    def _exchange_psi(self, outgoing, init=False):
        """Column -> row exchange; returns per-agent received pieces."""
        local = [dict() for _ in self.agents]
        for ag, pieces in zip(self.agents, outgoing):
            for k, chunk in pieces.items():
                if k == ag.node:
                    local[k][k] = chunk
                else:
                    self.bus.send(ag.node, k, "psi", chunk)
        for k, msgs in self.bus.deliver().items():
            for sender, _, chunk in msgs:
                local[k][sender] = chunk
        if init:
            for ag, pieces in zip(self.agents, local):
                ag.receive_psi_init(pieces)
        return local

    def share_measurement(self, x0):
        """Every node sends its state to the rows that use it (up to ``d + 1`` hops)."""
        topo = self.topology
        x0 = check_vector(x0, topo.n_states, "x0")
        for j in range(topo.node_count):
            xj = x0[topo.state_slice(j)]
            for k in sorted(topo.out_set(j, self.d + 1) - {j}):
                self.bus.send(j, k, "x0", xj)
        inbox = self.bus.deliver()
        for ag in self.agents:
            view = {ag.node: x0[topo.state_slice(ag.node)]}
            for sender, _, xj in inbox.get(ag.node, []):
                view[sender] = xj
            ag.set_x0({j: view[j] for j in ag.owners})

    def solve(self, x0):
        """Run ADMM from the current (warm) iterates until the flooded stop test passes.

        Raises:
            NonConvergenceError: ``max_iter`` rounds without meeting the tolerances.
        """
        self.bus.reset_counters()
        for ag in self.agents:
            ag.compute_s = 0.0
        self.share_measurement(x0)
        history = {"primal": [], "dual": []}
        eps_p, eps_d = self.eps_primal, self.eps_dual
        for it in range(1, self.max_iter + 1):
            row_out = self._map(lambda ag: ag.phi_update(), self.agents)
            inbound = [dict() for _ in self.agents]
            for ag, pieces in zip(self.agents, row_out):
                for j, chunk in pieces.items():
                    if j == ag.node:
                        inbound[j][j] = chunk
                    else:
                        self.bus.send(ag.node, j, "phi", chunk)
            for j, msgs in self.bus.deliver().items():
                for sender, _, chunk in msgs:
                    inbound[j][sender] = chunk
            col_out = self._map(lambda pair: pair[0].psi_update(pair[1]),
                                list(zip(self.agents, inbound)))
            received = self._exchange_psi(col_out)
            flags = self._map(lambda pair: pair[0].lambda_update(pair[1], eps_p, eps_d),
                              list(zip(self.agents, received)))
            primal = max(ag.primal for ag in self.agents)
            dual = max(ag.dual for ag in self.agents)
            history["primal"].append(primal)
            history["dual"].append(dual)
            agreed = self.bus.flood_and(flags, self.flood_hops, self.flood_rounds)
            if agreed.all():
                return ConsensusResult(it, primal, dual, self.bus.messages, self.bus.bytes,
                                       history)
        worst = int(np.argmax([ag.primal for ag in self.agents]))
        raise NonConvergenceError(
            f"ADMM did not converge in {self.max_iter} iterations "
            f"(primal {history['primal'][-1]:.2e}, dual {history['dual'][-1]:.2e})",
            history, agent=worst, iteration=self.max_iter)

    # -- results -----------------------------------------------------------------

    def inputs(self):
        """Global first input assembled from each agent's own rows."""
        return np.concatenate([ag.u0() for ag in self.agents]) if self.agents else np.zeros(0)

    def predicted_trajectory(self):
        """Predicted ``n x (T+1)`` states and ``p x T`` inputs from the row variables."""
        xs, us = zip(*(ag.predicted() for ag in self.agents))
        return np.hstack(xs).T, np.hstack(us).T

    def response(self):
        """Achievable response assembled from the column owners' Psi."""
        from .localsls import assemble_response
        return assemble_response(self.programs, {ag.node: ag.psi_col for ag in self.agents})

    def agent_dimensions(self, i):
        return self.agents[i].dimensions()

    def compute_seconds(self):
        return np.array([ag.compute_s for ag in self.agents])


@dataclass
class StepStats:
    step: int
    admm_iters: int
    wall_ms_per_agent_avg: float
    messages: int
    bytes: int
    primal_res: float
    dual_res: float

    FIELDS = ("step", "admm_iters", "wall_ms_per_agent_avg", "messages", "bytes",
              "primal_res", "dual_res")


@dataclass
class ClosedLoopResult:
    trajectory: TrajectoryData
    cost: float
    stats: list

    def stats_csv(self, path=None):
        import csv
        import io
        from pathlib import Path

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(StepStats.FIELDS)
        for s in self.stats:
            w.writerow([s.step, s.admm_iters, f"{s.wall_ms_per_agent_avg:.6f}", s.messages,
                        s.bytes, repr(s.primal_res), repr(s.dual_res)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def mpc_step(solver, plant, x, step=0):
    """Solve from ``x``, apply every agent's first input and advance the plant."""
    result = solver.solve(x)
    u = solver.inputs()
    x_next = plant.step(x, u)
    per_agent = solver.compute_seconds()
    stats = StepStats(step, result.iterations, 1e3 * float(per_agent.mean()),
                      result.messages, result.bytes, result.primal_residual,
                      result.dual_residual)
    return u, x_next, stats


def run_receding_horizon(solver, plant, x0, steps, warm_start=True):
    """Closed loop of ``steps`` MPC steps; returns trajectory, realized stage cost and stats."""
    steps = check_int(steps, "steps", minimum=0)
    topo = plant.topology
    x = check_vector(x0, topo.n_states, "x0")
    states, inputs, stats = [x], [], []
    total = 0.0
    for k in range(steps):
        if not warm_start:
            solver.reset()
        u, x_next, st = mpc_step(solver, plant, x, k)
        total += stage_cost(x, u, solver.cost, topo)
        stats.append(st)
        inputs.append(u)
        states.append(x_next)
        x = x_next
    traj = TrajectoryData(np.array(states).T, np.array(inputs).T.reshape(topo.n_inputs, steps),
                          topo)
    return ClosedLoopResult(traj, total, stats)
