"""Recorded trajectories, Hankel matrices and persistency of excitation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ._validation import check_int, check_positive
from .exceptions import ArgumentError, DataCollectionError, DataError

RANK_TOL = 1e-9
MAX_COLLECTION_ATTEMPTS = 10


def _signal_matrix(signal):
    arr = np.asarray(signal, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ArgumentError(f"signal must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def hankel(signal, L):
    """Depth-``L`` block Hankel matrix of an ``s x T`` signal.

    Block row ``t`` and column ``k`` hold the signal sample at time ``k + t``,
    so the result is ``(s L) x (T - L + 1)``.

    >>> hankel([1, 2, 3, 4], 2)
    array([[1., 2., 3.],
           [2., 3., 4.]])
    """
    sig = _signal_matrix(signal)
    L = check_int(L, "L", minimum=1)
    s, T = sig.shape
    if T < L:
        raise ArgumentError(f"signal of length {T} is too short for depth {L}")
    windows = np.lib.stride_tricks.sliding_window_view(sig, L, axis=1)  # s x K x L
    return np.ascontiguousarray(windows.transpose(2, 0, 1).reshape(L * s, T - L + 1))


@dataclass(frozen=True)
class PeDiagnostics:
    ok: bool
    order: int
    rows: int
    columns: int
    rank: int
    too_short: bool
    sigma_ratio: float

    def describe(self):
        if self.too_short:
            return (f"PE check failed: signal too short for order {self.order} "
                    f"({self.columns} Hankel columns < {self.rows} rows)")
        if self.ok:
            return f"PE of order {self.order}: rank {self.rank} of {self.rows}"
        return (f"PE check failed: Hankel of order {self.order} has rank {self.rank} "
                f"< {self.rows} rows (sigma_min/sigma_max = {self.sigma_ratio:.3e})")


def pe_diagnostics(signal, order, rank_tol=RANK_TOL):
    sig = _signal_matrix(signal)
    order = check_int(order, "order", minimum=1)
    s, T = sig.shape
    rows = s * order
    if T < order or T - order + 1 < rows:
        cols = max(T - order + 1, 0)
        return PeDiagnostics(False, order, rows, cols, 0, True, 0.0)
    H = hankel(sig, order)
    sv = np.linalg.svd(H, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    if smax == 0.0:
        return PeDiagnostics(False, order, rows, H.shape[1], 0, False, 0.0)
    rank = int(np.sum(sv > rank_tol * smax))
    return PeDiagnostics(rank == rows, order, rows, H.shape[1], rank, False,
                         float(sv[-1] / smax))


def check_pe(signal, order, rank_tol=RANK_TOL):
    """True iff the depth-``order`` Hankel matrix of ``signal`` has full row rank."""
    return pe_diagnostics(signal, order, rank_tol).ok


def require_pe(signal, order, context="inputs", rank_tol=RANK_TOL):
    """Raise :class:`DataError` (message contains ``PE``) unless ``signal`` is PE of ``order``."""
    diag = pe_diagnostics(signal, order, rank_tol)
    if not diag.ok:
        raise DataError(f"{context}: {diag.describe()}",
                        {"order": diag.order, "rank": diag.rank, "rows": diag.rows,
                         "columns": diag.columns, "too_short": diag.too_short})
    return diag


def min_data_length(m_loc, n_loc, L):
    """Shortest record whose ``m_loc``-channel input can be PE of order ``n_loc + L``."""
    m_loc = check_int(m_loc, "m_loc", minimum=1)
    n_loc = check_int(n_loc, "n_loc", minimum=1)
    L = check_int(L, "L", minimum=1)
    return (m_loc + 1) * (n_loc + L) - 1


@dataclass(frozen=True, eq=False)
class TrajectoryData:
    """States ``x(0..T)`` and inputs ``u(0..T-1)`` over a subset of nodes.

    ``states`` is ``n x (T+1)`` and ``inputs`` is ``p x T`` with columns as
    time steps; rows follow ``nodes`` in increasing order, each node
    contributing its state (input) block.
    """

    states: np.ndarray
    inputs: np.ndarray
    topology: object
    nodes: tuple = None

    def __post_init__(self):
        topo = self.topology
        nodes = tuple(range(topo.node_count)) if self.nodes is None else tuple(sorted(set(self.nodes)))
        states = np.array(self.states, dtype=float)
        inputs = np.array(self.inputs, dtype=float)
        if inputs.ndim == 1 and inputs.size == 0:
            inputs = inputs.reshape(0, 0)
        n = sum(topo.state_dims[i] for i in nodes)
        p = sum(topo.input_dims[i] for i in nodes)
        if states.ndim != 2 or states.shape[0] != n:
            raise ArgumentError(f"states must have {n} rows, got shape {states.shape}")
        if inputs.ndim != 2 or inputs.shape[0] != p:
            if not (p == 0 and inputs.size == 0):
                raise ArgumentError(f"inputs must have {p} rows, got shape {inputs.shape}")
            inputs = np.zeros((0, states.shape[1] - 1))
        if inputs.shape[1] != states.shape[1] - 1:
            raise ArgumentError("need exactly one more state sample than input samples")
        states.setflags(write=False)
        inputs.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def length(self):
        """Number of recorded transitions ``T``."""
        return self.inputs.shape[1]

    @cached_property
    def _state_rows(self):
        rows, off = {}, 0
        for i in self.nodes:
            rows[i] = np.arange(off, off + self.topology.state_dims[i])
            off += self.topology.state_dims[i]
        return rows

    @cached_property
    def _input_rows(self):
        rows, off = {}, 0
        for i in self.nodes:
            rows[i] = np.arange(off, off + self.topology.input_dims[i])
            off += self.topology.input_dims[i]
        return rows

    def state_rows(self, i):
        return self._state_rows[i]

    def input_rows(self, i):
        return self._input_rows[i]

    # -- CSV ------------------------------------------------------------------

    def header(self):
        cols = []
        for i in self.nodes:
            cols += [f"x{i + 1}_{k + 1}" for k in range(self.topology.state_dims[i])]
        for i in self.nodes:
            cols += [f"u{i + 1}_{k + 1}" for k in range(self.topology.input_dims[i])]
        return cols

    def to_csv(self, path=None):
        """One row per time step: state entries then input entries.

        The final row carries no inputs (empty cells). Returns the CSV text
        and writes it to ``path`` when given.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for t in range(self.states.shape[1]):
            row = [repr(float(v)) for v in self.states[:, t]]
            if t < self.length:
                row += [repr(float(v)) for v in self.inputs[:, t]]
            else:
                row += [""] * self.inputs.shape[0]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, topology, nodes=None):
        text = Path(source).read_text() if isinstance(source, Path) or (
            isinstance(source, str) and "\n" not in source) else source
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            raise ArgumentError("empty trajectory CSV")
        sel = tuple(range(topology.node_count)) if nodes is None else tuple(sorted(nodes))
        n = sum(topology.state_dims[i] for i in sel)
        p = sum(topology.input_dims[i] for i in sel)
        if len(header) != n + p:
            raise ArgumentError(f"CSV has {len(header)} columns, expected {n + p}")
        states, inputs = [], []
        rows = [r for r in reader if r]
        for t, row in enumerate(rows):
            try:
                states.append([float(v) for v in row[:n]])
                if t < len(rows) - 1:
                    inputs.append([float(v) for v in row[n:n + p]])
            except ValueError as exc:
                raise ArgumentError(f"bad numeric entry on CSV row {t + 2}: {exc}") from exc
        if len(states) < 1:
            raise ArgumentError("trajectory CSV has no samples")
        st = np.array(states).T.reshape(n, len(states))
        inp = np.array(inputs).T.reshape(p, len(states) - 1)
        return cls(st, inp, topology, sel)


def local_view(traj, region):
    """Restrict a trajectory to the block rows of ``region``."""
    region = frozenset(int(i) for i in region)
    if not region:
        raise ArgumentError("region must be non-empty")
    missing = region - set(traj.nodes)
    if missing:
        invalid = [i for i in missing if not 0 <= i < traj.topology.node_count]
        if invalid:
            raise ArgumentError(f"invalid node(s) {sorted(invalid)} in region")
        raise ArgumentError(f"trajectory does not cover node(s) {sorted(missing)}")
    nodes = tuple(sorted(region))
    srows = np.concatenate([traj.state_rows(i) for i in nodes]).astype(int)
    irows = [traj.input_rows(i) for i in nodes]
    irows = np.concatenate(irows).astype(int) if irows else np.zeros(0, int)
    return TrajectoryData(traj.states[srows], traj.inputs[irows], traj.topology, nodes)


@dataclass(frozen=True, eq=False)
class HankelStack:
    """Depth-``L`` Hankel matrices of a local trajectory with a row index map."""

    L: int
    state_part: np.ndarray
    input_part: np.ndarray
    nodes: tuple
    state_dims: tuple
    input_dims: tuple
    _state_off: dict = field(repr=False, default=None)
    _input_off: dict = field(repr=False, default=None)

    @classmethod
    def from_trajectory(cls, traj, L):
        L = check_int(L, "L", minimum=1)
        if traj.length + 1 < L:
            raise ArgumentError(f"trajectory of length {traj.length} too short for depth {L}")
        # states x(0..T-1) pair with inputs u(0..T-1); the last state is unused
        Hx = hankel(traj.states[:, :traj.length], L)
        if traj.inputs.shape[0]:
            Hu = hankel(traj.inputs, L)
        else:
            Hu = np.zeros((0, Hx.shape[1]))
        topo = traj.topology
        sdims = tuple(topo.state_dims[i] for i in traj.nodes)
        idims = tuple(topo.input_dims[i] for i in traj.nodes)
        soff = dict(zip(traj.nodes, np.concatenate([[0], np.cumsum(sdims)[:-1]]).astype(int)))
        ioff = dict(zip(traj.nodes, np.concatenate([[0], np.cumsum(idims)[:-1]]).astype(int)))
        Hx.setflags(write=False)
        Hu.setflags(write=False)
        return cls(L, Hx, Hu, tuple(traj.nodes), sdims, idims, soff, ioff)

    @property
    def columns(self):
        return self.state_part.shape[1]

    @property
    def n_loc(self):
        return sum(self.state_dims)

    @property
    def m_loc(self):
        return sum(self.input_dims)

    def state_rows(self, node, t):
        """Row indices of ``node``'s state at time offset ``t`` in ``state_part``."""
        k = self.nodes.index(node)
        start = t * self.n_loc + self._state_off[node]
        return np.arange(start, start + self.state_dims[k])

    def input_rows(self, node, t):
        k = self.nodes.index(node)
        start = t * self.m_loc + self._input_off[node]
        return np.arange(start, start + self.input_dims[k])


def collect_excited_data(sys, T_data, amplitude=1.0, seed=0, pe_order=None,
                         local_requirements=()):
    """Excite the plant with i.i.d. uniform inputs from a random initial state.

    Args:
        sys: plant to simulate.
        T_data: number of recorded transitions.
        amplitude: half-width of the uniform distributions for ``x0`` and ``u``.
        seed: base RNG seed; retries use ``seed + attempt``.
        pe_order: optional order at which the full input record must be PE.
        local_requirements: iterable of ``(nodes, order)`` pairs; the inputs
            restricted to ``nodes`` must be PE of ``order``.

    Raises:
        DataCollectionError: when no attempt satisfies every PE requirement.
    """
    T_data = check_int(T_data, "T_data", minimum=1)
    amplitude = check_positive(amplitude, "amplitude", strict=False)
    requirements = []
    if pe_order is not None:
        requirements.append((tuple(range(sys.topology.node_count)), int(pe_order)))
    requirements += [(tuple(sorted(nodes)), int(order)) for nodes, order in local_requirements]
    failures = []
    for attempt in range(MAX_COLLECTION_ATTEMPTS):
        rng = np.random.default_rng(seed + attempt)
        x0 = rng.uniform(-amplitude, amplitude, size=sys.n_states)
        u = rng.uniform(-amplitude, amplitude, size=(sys.n_inputs, T_data))
        traj = sys.simulate(x0, u)
        bad = None
        for nodes, order in requirements:
            view = local_view(traj, nodes) if len(nodes) < sys.topology.node_count else traj
            diag = pe_diagnostics(view.inputs, order)
            if not diag.ok:
                bad = (nodes, diag)
                break
        if bad is None:
            return traj
        failures.append(bad)
        if bad[1].too_short or amplitude == 0.0:
            break
    nodes, diag = failures[-1]
    raise DataCollectionError(
        f"{diag.describe()} on nodes {[i + 1 for i in nodes]} after {len(failures)} attempt(s)",
        {"attempts": len(failures), "rank": diag.rank, "rows": diag.rows,
         "columns": diag.columns, "too_short": diag.too_short, "order": diag.order})
