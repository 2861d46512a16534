"""Data-driven parametrization of localized system responses.

Each column of the response (the reaction of the network to node ``i``'s
initial state) is parametrized by Hankel matrices of data recorded around
``i``. The column owner only needs trajectories over a bounded region, so its
subproblem does not grow with the network.

Row bookkeeping: a column's *kept* vector lists, node by node in increasing
order, the node's states at ``t = 0..T`` (if the node is within ``d`` hops)
followed by its inputs at ``t = 0..T-1`` (if within ``d + 1`` hops). Row
agents exchange contiguous slices of this vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import check_int, check_node
from .datalog import HankelStack, local_view, min_data_length, pe_diagnostics, require_pe
from .exceptions import ArgumentError, DataError
from .response import SystemResponse

FEAS_TOL = 1e-8
RANK_RTOL = 1e-10
PROJ_TOL = 1e-9


@dataclass(frozen=True)
class AugmentedRegion:
    """Index sets around the owner of one response column.

    ``core`` holds nodes whose states the column may excite, ``state_region``
    the nodes whose inputs it may use and ``data_region`` everything whose
    dynamics close the equations of ``state_region``.
    """

    center: int
    d: int
    core: frozenset
    state_region: frozenset
    data_region: frozenset
    state_zero_ring: frozenset
    input_zero_ring: frozenset
    boundary_ring: frozenset


def augmented_region(topo, i, d):
    """Purely topological region of column ``i`` for locality ``d``."""
    i = check_node(topo, i)
    d = check_int(d, "d", minimum=0)
    core = topo.out_set(i, d)
    S = topo.out_set(i, d + 1)
    R = topo.in_neighbors_of(S)
    return AugmentedRegion(i, d, core, S, R, R - core, R - S, R - S)


def required_local_length(topo, i, d, T):
    """Shortest excitation record that can make column ``i``'s inputs PE."""
    T = check_int(T, "T", minimum=1)
    R = augmented_region(topo, i, d).data_region
    n_R = sum(topo.state_dims[k] for k in R)
    m_R = sum(topo.input_dims[k] for k in R)
    return min_data_length(m_R, n_R, T + 1)


def required_global_length(topo, T):
    """Same requirement with the whole network as the data region."""
    T = check_int(T, "T", minimum=1)
    return min_data_length(topo.n_inputs, topo.n_states, T + 1)


@dataclass(frozen=True)
class ColumnLayout:
    """Ordering of the kept entries of one column.

    ``chunks[k]`` is ``(start, n_state_rows, n_input_rows)`` for row node ``k``;
    the node's states come first, time-major, then its inputs.
    """

    center: int
    horizon: int
    nodes: tuple
    chunks: dict
    size: int
    width: int

    @classmethod
    def build(cls, topo, center, core, inputs_region, T):
        chunks, off = {}, 0
        nodes = tuple(sorted(set(core) | set(k for k in inputs_region if topo.input_dims[k])))
        for k in nodes:
            ns = (T + 1) * topo.state_dims[k] if k in core else 0
            ni = T * topo.input_dims[k] if k in inputs_region else 0
            chunks[k] = (off, ns, ni)
            off += ns + ni
        return cls(center, T, nodes, chunks, off, topo.state_dims[center])

    def chunk(self, k):
        start, ns, ni = self.chunks[k]
        return slice(start, start + ns + ni)

    def to_blocks(self, psi, topo):
        """Split a ``(size, width)`` column into ``(t, k, center)`` blocks."""
        T, j = self.horizon, self.center
        px, pu = {}, {}
        for k in self.nodes:
            start, ns, ni = self.chunks[k]
            if ns:
                st = psi[start:start + ns].reshape(T + 1, topo.state_dims[k], self.width)
                for t in range(T + 1):
                    px[(t, k, j)] = st[t]
            if ni:
                inp = psi[start + ns:start + ns + ni].reshape(T, topo.input_dims[k], self.width)
                for t in range(T):
                    pu[(t, k, j)] = inp[t]
        return px, pu

    def from_blocks(self, phi, topo):
        """Gather this column from a :class:`SystemResponse`; absent blocks read as zero."""
        T, j = self.horizon, self.center
        out = np.zeros((self.size, self.width))
        for k in self.nodes:
            start, ns, ni = self.chunks[k]
            n_k, m_k = topo.state_dims[k], topo.input_dims[k]
            for t in range(T + 1 if ns else 0):
                blk = phi.phi_x.get((t, k, j))
                if blk is not None:
                    out[start + t * n_k:start + (t + 1) * n_k] = blk
            for t in range(T if ni else 0):
                blk = phi.phi_u.get((t, k, j))
                if blk is not None:
                    out[start + ns + t * m_k:start + ns + (t + 1) * m_k] = blk
        return out


class HankelProgram:
    """Affine set ``{H_kept G : E_eq G = rhs}`` of one column and its projector.

    Args:
        H: stacked state/input Hankel rows over the data region.
        eq_rows: rows of ``H`` fixed by the equality constraints.
        rhs: ``(len(eq_rows), width)`` right-hand side.
        kept_rows: rows of ``H`` that form the column in ``layout`` order.
        free_rows: rows that carry no constraint and are not kept (ignored by
            representability fits).
        layout: :class:`ColumnLayout` of the kept rows.
        basis: optional precomputed ``(U, s, Vt)`` thin SVD of ``H`` to share
            between columns of one global program.
    """

    def __init__(self, H, eq_rows, rhs, kept_rows, free_rows, layout, basis=None,
                 rank_rtol=RANK_RTOL):
        self.H = H
        self.eq_rows = np.asarray(eq_rows, dtype=int)
        self.rhs = np.asarray(rhs, dtype=float)
        self.kept_rows = np.asarray(kept_rows, dtype=int)
        self.free_rows = np.asarray(free_rows, dtype=int)
        self.layout = layout
        if basis is None:
            basis = _thin_svd(H)
        U, s, Vt = basis
        rank = int(np.count_nonzero(s > rank_rtol * s[0])) if s.size and s[0] > 0 else 0
        self.rank = rank
        self.singular_values = s
        self._U, self._s, self._Vt = U[:, :rank], s[:rank], Vt[:rank]

        # z parametrizes range(H): y = U z
        B_eq = self._U[self.eq_rows]
        B_kept = self._U[self.kept_rows]
        ue, se, vte = np.linalg.svd(B_eq, full_matrices=True) if B_eq.size else (
            np.zeros((0, 0)), np.zeros(0), np.eye(rank))
        r_eq = int(np.count_nonzero(se > PROJ_TOL))
        inv = np.zeros_like(se)
        inv[:r_eq] = 1.0 / se[:r_eq]
        z0 = vte[:r_eq].T @ (inv[:r_eq, None] * (ue[:, :r_eq].T @ self.rhs)) if r_eq else np.zeros(
            (rank, self.rhs.shape[1]))
        self.feasibility_residual = float(np.linalg.norm(B_eq @ z0 - self.rhs))
        null = vte[r_eq:].T
        BN = B_kept @ null
        uq, sq, vtq = np.linalg.svd(BN, full_matrices=False)
        r_q = int(np.count_nonzero(sq > PROJ_TOL))
        Q = uq[:, :r_q]
        y0 = B_kept @ z0
        self._null, self._z0 = null, z0
        self._bn_pinv = vtq[:r_q].T @ (uq[:, :r_q].T / sq[:r_q, None])
        self.range_basis = Q
        self.projector = Q @ Q.T
        self.offset = y0 - self.projector @ y0
        self.projector.setflags(write=False)
        self.offset.setflags(write=False)

    @property
    def feasible(self):
        return self.feasibility_residual <= FEAS_TOL

    @property
    def columns(self):
        return self.H.shape[1]

    @property
    def E_eq(self):
        """Equality operator acting on ``G``."""
        return self.H[self.eq_rows]

    @property
    def H_kept(self):
        return self.H[self.kept_rows]

    def project(self, M):
        """Euclidean projection of ``M`` (kept x width) onto the achievable set."""
        return self.projector @ M + self.offset

    def coefficients(self, M):
        """Minimum-norm ``G`` whose kept rows equal ``project(M)``."""
        w = self._bn_pinv @ (M - self._U[self.kept_rows] @ self._z0)
        z = self._z0 + self._null @ w
        return self._Vt.T @ (z / self._s[:, None])

    def fit_residual(self, column):
        """Distance from ``column`` (kept layout, zero on constrained rows) to the Hankel span."""
        column = np.asarray(column, dtype=float)
        target = np.zeros((self.H.shape[0], column.shape[1]))
        target[self.eq_rows] = self.rhs
        target[self.kept_rows] = column
        rows = np.setdiff1d(np.arange(self.H.shape[0]), self.free_rows)
        Usub = self._U[rows]
        z, *_ = np.linalg.lstsq(Usub, target[rows], rcond=None)
        return float(np.linalg.norm(Usub @ z - target[rows]))

    def dimensions(self):
        return {"hankel_rows": int(self.H.shape[0]), "hankel_cols": int(self.H.shape[1]),
                "kept": int(self.layout.size), "eq_rows": int(self.eq_rows.size),
                "width": int(self.layout.width), "rank": int(self.rank),
                "projector": int(self.projector.shape[0])}


def _thin_svd(H):
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    return U, s, Vt


def _column_rows(hankel, topo, layout, core, S, R, T, center):
    """Row selections of one column over a Hankel stack covering ``R``."""
    n_rows = hankel.state_part.shape[0]

    def srows(k, t):
        return hankel.state_rows(k, t)

    def irows(k, t):
        return n_rows + hankel.input_rows(k, t)

    kept = []
    for k in layout.nodes:
        if k in core:
            kept += [srows(k, t) for t in range(T + 1)]
        if k in S:
            kept += [irows(k, t) for t in range(T)]
    kept = np.concatenate(kept) if kept else np.zeros(0, int)

    width = topo.state_dims[center]
    eq, rhs = [], []
    for k in sorted(R):
        rows = srows(k, 0)
        eq.append(rows)
        rhs.append(np.eye(width) if k == center else np.zeros((rows.size, width)))
    for k in sorted(R - core):
        for t in range(1, T + 1):
            eq.append(srows(k, t))
            rhs.append(np.zeros((topo.state_dims[k], width)))
    for k in sorted(R - S):
        if topo.input_dims[k]:
            for t in range(T + 1):
                eq.append(irows(k, t))
                rhs.append(np.zeros((topo.input_dims[k], width)))
    free = [irows(k, T) for k in sorted(S & R) if topo.input_dims[k]]
    free = np.concatenate(free) if free else np.zeros(0, int)
    return kept, np.concatenate(eq), np.vstack(rhs), free


class LocalProgram(HankelProgram):
    """Column program of one node built from data over its data region."""

    def __init__(self, region, hankel, topo, horizon):
        T = horizon
        self.region = region
        self.hankel = hankel
        self.topology = topo
        layout = ColumnLayout.build(topo, region.center, region.core, region.state_region, T)
        H = np.vstack([hankel.state_part, hankel.input_part])
        kept, eq, rhs, free = _column_rows(hankel, topo, layout, region.core,
                                           region.state_region, region.data_region, T,
                                           region.center)
        super().__init__(H, eq, rhs, kept, free, layout)

    @property
    def horizon(self):
        return self.layout.horizon


def build_local_program(region, local_traj, L):
    """Column program for ``region`` from a trajectory covering exactly its data region.

    Raises:
        ArgumentError: wrong coverage or a record shorter than the data requirement.
        DataError: the constraint system has no solution on this data.
    """
    L = check_int(L, "L", minimum=2)
    topo = local_traj.topology
    if frozenset(local_traj.nodes) != region.data_region:
        raise ArgumentError("local trajectory must cover exactly the data region")
    n_R = sum(topo.state_dims[k] for k in region.data_region)
    m_R = sum(topo.input_dims[k] for k in region.data_region)
    need = min_data_length(m_R, n_R, L)
    if local_traj.length < need:
        raise ArgumentError(
            f"node {region.center + 1} needs at least {need} samples, got {local_traj.length}")
    hankel = HankelStack.from_trajectory(local_traj, L)
    program = LocalProgram(region, hankel, topo, L - 1)
    if not program.feasible:
        diag = pe_diagnostics(local_traj.inputs, n_R + L)
        raise DataError(
            f"local program of node {region.center + 1} is infeasible on the data "
            f"(residual {program.feasibility_residual:.2e}, Hankel rank {program.rank}); "
            f"{diag.describe()}",
            {"node": region.center + 1, "residual": program.feasibility_residual,
             "rank": program.rank, "rows": int(program.H.shape[0]), "pe_rank": diag.rank})
    return program


def build_local_programs(traj, d, T, nodes=None):
    """One program per node from a single global experiment, each on its local view."""
    topo = traj.topology
    nodes = range(topo.node_count) if nodes is None else nodes
    programs = {}
    for i in nodes:
        region = augmented_region(topo, i, d)
        view = local_view(traj, region.data_region)
        n_R = sum(topo.state_dims[k] for k in region.data_region)
        require_pe(view.inputs, n_R + T + 1, f"inputs around node {i + 1}")
        programs[i] = build_local_program(region, view, T + 1)
    return programs


def assemble_response(programs, columns):
    """Zero-padded global response from per-column kept vectors.

    Args:
        programs: mapping node -> program (provides the layout).
        columns: mapping node -> ``(kept, width)`` array for every node.
    """
    some = next(iter(programs.values()))
    topo = some.topology
    missing = set(range(topo.node_count)) - set(columns)
    if missing:
        raise ArgumentError(f"no column for node(s) {sorted(k + 1 for k in missing)}")
    T = some.layout.horizon
    px, pu = {}, {}
    for i in sorted(columns):
        bx, bu = programs[i].layout.to_blocks(np.asarray(columns[i], dtype=float), topo)
        px.update(bx)
        pu.update(bu)
    return SystemResponse(topo, T, px, pu)


class GlobalProgram:
    """Per-column programs over one global Hankel stack (shared factorization)."""

    def __init__(self, traj, topo, d, L):
        T = L - 1
        hankel = HankelStack.from_trajectory(traj, L)
        H = np.vstack([hankel.state_part, hankel.input_part])
        basis = _thin_svd(H)
        everything = frozenset(range(topo.node_count))
        self.topology, self.d, self.horizon, self.hankel = topo, d, T, hankel
        self.columns = {}
        for j in range(topo.node_count):
            core = topo.out_set(j, d)
            S = topo.out_set(j, d + 1)
            layout = ColumnLayout.build(topo, j, core, S, T)
            kept, eq, rhs, free = _column_rows(hankel, topo, layout, core, S, everything, T, j)
            prog = HankelProgram(H, eq, rhs, kept, free, layout, basis=basis)
            prog.topology = topo
            self.columns[j] = prog

    @property
    def feasible(self):
        return all(p.feasible for p in self.columns.values())


def build_global_program(traj, topo, d, L):
    """Centralized program over the full network.

    Raises:
        DataError: the global inputs are not PE of order ``n + L`` or a column is infeasible.
    """
    L = check_int(L, "L", minimum=2)
    d = check_int(d, "d", minimum=0)
    if traj.nodes != tuple(range(topo.node_count)):
        raise ArgumentError("global program needs a trajectory over every node")
    require_pe(traj.inputs, topo.n_states + L, "global inputs")
    program = GlobalProgram(traj, topo, d, L)
    bad = [j + 1 for j, p in program.columns.items() if not p.feasible]
    if bad:
        raise DataError(f"global program infeasible for column(s) {bad}", {"columns": bad})
    return program
