"""System responses over a finite horizon and the quantities derived from them.

Only the first block column of the closed-loop maps is stored: block
``(t, i, j)`` of ``phi_x`` maps the initial state of node ``j`` to the state of
node ``i`` at time ``t``; ``phi_u`` does the same for inputs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from ._validation import check_int, check_vector
from .exceptions import ArgumentError


@dataclass(frozen=True)
class LocalityMask:
    """Allowed ``(row node, column node)`` pairs for ``phi_x`` and ``phi_u``."""

    d: int
    state_pairs: frozenset
    input_pairs: frozenset

    def allows_state(self, i, j):
        return (i, j) in self.state_pairs

    def allows_input(self, i, j):
        return (i, j) in self.input_pairs


def locality_mask(topo, d, T=None):
    """State pair ``(i, j)`` allowed iff dist(j -> i) <= d; input pair iff <= d + 1."""
    d = check_int(d, "d", minimum=0)
    dist = topo.distances
    n = topo.node_count
    state_pairs = frozenset((i, j) for i in range(n) for j in range(n) if dist[j, i] <= d)
    input_pairs = frozenset((i, j) for i in range(n) for j in range(n)
                            if dist[j, i] <= d + 1 and topo.input_dims[i] > 0)
    return LocalityMask(d, state_pairs, input_pairs)


def full_mask(topo):
    n = topo.node_count
    pairs = frozenset((i, j) for i in range(n) for j in range(n))
    return LocalityMask(n, pairs, frozenset(p for p in pairs if topo.input_dims[p[0]] > 0))


@dataclass(frozen=True, eq=False)
class SystemResponse:
    """Sparse first-block-column response ``(phi_x[0..T], phi_u[0..T-1])``.

    Absent blocks are zero.
    """

    topology: object
    horizon: int
    phi_x: dict
    phi_u: dict

    def __post_init__(self):
        topo = self.topology
        T = check_int(self.horizon, "horizon", minimum=1)
        px, pu = {}, {}
        for (t, i, j), block in self.phi_x.items():
            if not 0 <= t <= T:
                raise ArgumentError(f"phi_x time index {t} outside 0..{T}")
            arr = np.array(block, dtype=float).reshape(topo.state_dims[i], topo.state_dims[j])
            arr.setflags(write=False)
            px[(int(t), int(i), int(j))] = arr
        for (t, i, j), block in self.phi_u.items():
            if not 0 <= t < T:
                raise ArgumentError(f"phi_u time index {t} outside 0..{T - 1}")
            arr = np.array(block, dtype=float).reshape(topo.input_dims[i], topo.state_dims[j])
            arr.setflags(write=False)
            pu[(int(t), int(i), int(j))] = arr
        object.__setattr__(self, "phi_x", MappingProxyType(px))
        object.__setattr__(self, "phi_u", MappingProxyType(pu))

    @classmethod
    def from_dense(cls, topo, phi_x, phi_u, mask=None, tol=0.0):
        """Build from dense ``(T+1, n, n)`` and ``(T, p, n)`` arrays.

        With a ``mask`` only allowed blocks are kept; without one, blocks whose
        entries are all within ``tol`` of zero are dropped.
        """
        phi_x = np.asarray(phi_x, float)
        phi_u = np.asarray(phi_u, float)
        T = phi_u.shape[0]
        px, pu = {}, {}
        N = topo.node_count
        for t in range(T + 1):
            for i in range(N):
                for j in range(N):
                    blk = phi_x[t, topo.state_slice(i), topo.state_slice(j)]
                    if mask is not None:
                        if mask.allows_state(i, j):
                            px[(t, i, j)] = blk
                    elif np.max(np.abs(blk), initial=0.0) > tol:
                        px[(t, i, j)] = blk
        for t in range(T):
            for i in range(N):
                if topo.input_dims[i] == 0:
                    continue
                for j in range(N):
                    blk = phi_u[t, topo.input_slice(i), topo.state_slice(j)]
                    if mask is not None:
                        if mask.allows_input(i, j):
                            pu[(t, i, j)] = blk
                    elif np.max(np.abs(blk), initial=0.0) > tol:
                        pu[(t, i, j)] = blk
        return cls(topo, T, px, pu)

    def dense(self):
        """Dense ``(T+1, n, n)`` and ``(T, p, n)`` arrays (tests and oracles only)."""
        topo = self.topology
        X = np.zeros((self.horizon + 1, topo.n_states, topo.n_states))
        U = np.zeros((self.horizon, topo.n_inputs, topo.n_states))
        for (t, i, j), blk in self.phi_x.items():
            X[t, topo.state_slice(i), topo.state_slice(j)] = blk
        for (t, i, j), blk in self.phi_u.items():
            U[t, topo.input_slice(i), topo.state_slice(j)] = blk
        return X, U

    def respects(self, mask):
        """True iff every stored block is allowed by ``mask``."""
        return (all(mask.allows_state(i, j) for (_, i, j) in self.phi_x)
                and all(mask.allows_input(i, j) for (_, i, j) in self.phi_u))

    def to_csv(self, path=None):
        """``kind,t,i,j,row,col,value`` records with 1-based node labels."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "t", "i", "j", "row", "col", "value"])
        for kind, blocks in (("x", self.phi_x), ("u", self.phi_u)):
            for (t, i, j) in sorted(blocks):
                blk = blocks[(t, i, j)]
                for r in range(blk.shape[0]):
                    for c in range(blk.shape[1]):
                        w.writerow([kind, t, i + 1, j + 1, r + 1, c + 1, repr(float(blk[r, c]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def achievability_residual(sys, phi):
    """Deviation of ``phi`` from the achievable affine subspace.

    Returns ``||phi_x[0] - I||_F + max_t ||phi_x[t+1] - A phi_x[t] - B phi_u[t]||_F``.
    """
    if phi.topology != sys.topology:
        raise ArgumentError("response and system use different topologies")
    X, U = phi.dense()
    A, B = sys.A, sys.B
    res0 = np.linalg.norm(X[0] - np.eye(sys.n_states))
    worst = 0.0
    for t in range(phi.horizon):
        worst = max(worst, float(np.linalg.norm(X[t + 1] - A @ X[t] - B @ U[t])))
    return float(res0 + worst)


def rollout(phi, x0):
    """Predicted states ``n x (T+1)`` and inputs ``p x T`` from ``x0``, blockwise."""
    topo = phi.topology
    x0 = check_vector(x0, topo.n_states, "x0")
    xs = np.zeros((topo.n_states, phi.horizon + 1))
    us = np.zeros((topo.n_inputs, phi.horizon))
    for (t, i, j), blk in phi.phi_x.items():
        xs[topo.state_slice(i), t] += blk @ x0[topo.state_slice(j)]
    for (t, i, j), blk in phi.phi_u.items():
        us[topo.input_slice(i), t] += blk @ x0[topo.state_slice(j)]
    return xs, us


def extract_u0(phi, x0, i):
    """``[u_0]_i`` from the stored ``phi_u[0]`` blocks of row ``i``."""
    topo = phi.topology
    x0 = np.asarray(x0, dtype=float)
    u = np.zeros(topo.input_dims[i])
    for j in sorted(topo.in_set(i, phi_reach(phi))):
        blk = phi.phi_u.get((0, i, j))
        if blk is not None:
            u = u + blk @ x0[topo.state_slice(j)]
    return u


def phi_reach(phi):
    """Largest incoming distance spanned by any stored ``phi_u`` block."""
    dist = phi.topology.distances
    reach = [int(dist[j, i]) for (_, i, j) in phi.phi_u]
    return max(reach, default=0)


# -- costs and constraints --------------------------------------------------

def _check_psd(M, name, strict):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
        raise ArgumentError(f"{name} must be symmetric")
    evals = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
    if strict and evals.size and evals.min() <= 0:
        raise ArgumentError(f"{name} must be positive definite")
    if not strict and evals.size and evals.min() < -1e-12:
        raise ArgumentError(f"{name} must be positive semidefinite")
    M = M.copy()
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Per-node quadratic stage weights ``Q_i``, ``R_i`` and terminal ``Q_i^T``."""

    Q: tuple
    R: tuple
    QT: tuple = None

    def __post_init__(self):
        Q = tuple(_check_psd(q, f"Q[{i}]", False) for i, q in enumerate(self.Q))
        R = tuple(_check_psd(r, f"R[{i}]", True) for i, r in enumerate(self.R))
        QT = Q if self.QT is None else tuple(
            _check_psd(q, f"QT[{i}]", False) for i, q in enumerate(self.QT))
        if not len(Q) == len(R) == len(QT):
            raise ArgumentError("Q, R and QT need one block per node")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "QT", QT)

    @classmethod
    def identity(cls, topo):
        return cls(tuple(np.eye(s) for s in topo.state_dims),
                   tuple(np.eye(m) for m in topo.input_dims))

    def dense(self, topo):
        """Block-diagonal ``(Q, R, QT)`` for the whole network."""
        from scipy.linalg import block_diag
        Q = block_diag(*self.Q) if self.Q else np.zeros((0, 0))
        R = block_diag(*[r.reshape(m, m) for r, m in zip(self.R, topo.input_dims)])
        QT = block_diag(*self.QT)
        return (Q.reshape(topo.n_states, topo.n_states), R.reshape(topo.n_inputs, topo.n_inputs),
                QT.reshape(topo.n_states, topo.n_states))


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """Time-invariant per-node boxes on predicted states (t >= 1) and inputs.

    ``state_bounds[i]`` / ``input_bounds[i]`` are ``(lower, upper)`` vectors;
    nodes without an entry are unconstrained. Every box must contain the origin.
    """

    state_bounds: dict = field(default_factory=dict)
    input_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, bounds in (("state", self.state_bounds), ("input", self.input_bounds)):
            clean = {}
            for i, (lo, hi) in bounds.items():
                lo = np.asarray(lo, dtype=float).reshape(-1)
                hi = np.asarray(hi, dtype=float).reshape(-1)
                if lo.shape != hi.shape:
                    raise ArgumentError(f"{name} bounds of node {i} have mismatched sizes")
                if np.any(lo > hi):
                    raise ArgumentError(f"{name} lower bound exceeds upper bound at node {i}")
                if np.any(lo > 0) or np.any(hi < 0):
                    raise ArgumentError(f"{name} box of node {i} must contain the origin")
                clean[int(i)] = (lo, hi)
            object.__setattr__(self, f"{name}_bounds", MappingProxyType(clean))

    @classmethod
    def input_box(cls, topo, bound):
        """``|u_i| <= bound`` on every input channel."""
        return cls(input_bounds={i: (-bound * np.ones(m), bound * np.ones(m))
                                 for i, m in enumerate(topo.input_dims) if m > 0})

    @property
    def empty(self):
        return not self.state_bounds and not self.input_bounds

    def stacked(self, topo, horizon):
        """Bounds on the stacked vector ``(x_1..x_T, u_0..u_{T-1})``."""
        n, p = topo.n_states, topo.n_inputs
        lo = np.full(horizon * (n + p), -np.inf)
        hi = np.full(horizon * (n + p), np.inf)
        for i, (l, h) in self.state_bounds.items():
            for t in range(horizon):
                sl = topo.state_slice(i)
                lo[t * n + sl.start:t * n + sl.stop] = l
                hi[t * n + sl.start:t * n + sl.stop] = h
        for i, (l, h) in self.input_bounds.items():
            for t in range(horizon):
                sl = topo.input_slice(i)
                base = horizon * n + t * p
                lo[base + sl.start:base + sl.stop] = l
                hi[base + sl.start:base + sl.stop] = h
        return lo, hi


def eval_cost(states, inputs, cost, topo):
    """``sum_t x_t'Q x_t + u_t'R u_t`` over ``t < T`` plus ``x_T'Q^T x_T``, node by node.

    ``states`` is ``n x (T+1)``; ``inputs`` is ``p x T``.
    """
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    T = inputs.shape[1]
    if states.shape != (topo.n_states, T + 1):
        raise ArgumentError("states and inputs have inconsistent shapes")
    total = 0.0
    for i in range(topo.node_count):
        xi = states[topo.state_slice(i)]
        ui = inputs[topo.input_slice(i)]
        Q, R, QT = cost.Q[i], cost.R[i], cost.QT[i]
        total += float(np.einsum("it,ij,jt->", xi[:, :T], Q, xi[:, :T]))
        total += float(np.einsum("it,ij,jt->", ui, R, ui)) if ui.size else 0.0
        total += float(xi[:, T] @ QT @ xi[:, T])
    return total


def response_cost(phi, x0, cost):
    xs, us = rollout(phi, x0)
    return eval_cost(xs, us, cost, phi.topology)


def stage_cost(x, u, cost, topo):
    """Single-step ``x'Qx + u'Ru`` (used to accumulate realized closed-loop cost)."""
    total = 0.0
    for i in range(topo.node_count):
        xi, ui = x[topo.state_slice(i)], u[topo.input_slice(i)]
        total += float(xi @ cost.Q[i] @ xi)
        if ui.size:
            total += float(ui @ cost.R[i] @ ui)
    return total
