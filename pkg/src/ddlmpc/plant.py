"""Ground-truth networked LTI plants and open-loop simulation.

The plant is only used to generate data and to check results; controllers
built from data never receive an :class:`LtiSystem`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from types import MappingProxyType

import numpy as np

from ._validation import check_int, check_positive, check_vector
from .exceptions import ArgumentError
from .topology import Topology

CHAIN_DT = 0.2
MASS_RANGE = (0.0, 2.0)
DAMPING_RANGE = (0.5, 1.0)
COUPLING_RANGE = (1.0, 1.5)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Block-sparse plant ``x(t+1) = A x(t) + B u(t)`` over a topology.

    ``A_blocks`` maps ``(i, j)`` to the ``n_i x n_j`` block for ``j`` in
    ``N_i`` (and ``i == j``); ``B_blocks`` maps ``i`` to the ``n_i x m_i``
    diagonal block.
    """

    topology: Topology
    A_blocks: dict
    B_blocks: dict

    def __post_init__(self):
        topo = self.topology
        a_blocks, b_blocks = {}, {}
        allowed = {(i, j) for i in range(topo.node_count)
                   for j in topo.adjacency[i] | {i}}
        for key, block in self.A_blocks.items():
            i, j = (int(k) for k in key)
            if (i, j) not in allowed:
                raise ArgumentError(f"A block ({i}, {j}) is outside the topology")
            block = np.array(block, dtype=float).reshape(topo.state_dims[i], topo.state_dims[j])
            block.setflags(write=False)
            a_blocks[(i, j)] = block
        for i in range(topo.node_count):
            block = np.array(self.B_blocks.get(i, np.zeros((topo.state_dims[i], topo.input_dims[i]))),
                             dtype=float)
            block = block.reshape(topo.state_dims[i], topo.input_dims[i])
            block.setflags(write=False)
            b_blocks[i] = block
        extra = set(self.B_blocks) - set(range(topo.node_count))
        if extra:
            raise ArgumentError(f"B blocks given for unknown nodes {sorted(extra)}")
        object.__setattr__(self, "A_blocks", MappingProxyType(a_blocks))
        object.__setattr__(self, "B_blocks", MappingProxyType(b_blocks))

    @property
    def n_states(self):
        return self.topology.n_states

    @property
    def n_inputs(self):
        return self.topology.n_inputs

    @cached_property
    def A(self):
        topo = self.topology
        A = np.zeros((topo.n_states, topo.n_states))
        for (i, j), block in self.A_blocks.items():
            A[topo.state_slice(i), topo.state_slice(j)] = block
        A.setflags(write=False)
        return A

    @cached_property
    def B(self):
        topo = self.topology
        B = np.zeros((topo.n_states, topo.n_inputs))
        for i, block in self.B_blocks.items():
            B[topo.state_slice(i), topo.input_slice(i)] = block
        B.setflags(write=False)
        return B

    def step(self, x, u):
        """One step of the dynamics, evaluated subsystem by subsystem over ``N_i``."""
        topo = self.topology
        x = check_vector(x, topo.n_states, "x")
        u = check_vector(u, topo.n_inputs, "u")
        out = np.empty(topo.n_states)
        for i in range(topo.node_count):
            acc = self.B_blocks[i] @ u[topo.input_slice(i)]
            for j in sorted(topo.adjacency[i] | {i}):
                block = self.A_blocks.get((i, j))
                if block is not None:
                    acc = acc + block @ x[topo.state_slice(j)]
            out[topo.state_slice(i)] = acc
        return out

    def simulate(self, x0, inputs):
        """Open-loop rollout; ``inputs`` is ``p x T`` (or a sequence of length-``p`` vectors)."""
        from .datalog import TrajectoryData

        topo = self.topology
        x0 = check_vector(x0, topo.n_states, "x0")
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim == 2 and inputs.shape[0] != topo.n_inputs and inputs.shape[1] == topo.n_inputs:
            inputs = inputs.T
        if inputs.ndim != 2 or inputs.shape[0] != topo.n_inputs or inputs.shape[1] < 1:
            raise ArgumentError(
                f"inputs must be {topo.n_inputs} x T with T >= 1, got shape {inputs.shape}")
        horizon = inputs.shape[1]
        states = np.empty((topo.n_states, horizon + 1))
        states[:, 0] = x0
        A, B = self.A, self.B
        for t in range(horizon):
            states[:, t + 1] = A @ states[:, t] + B @ inputs[:, t]
        return TrajectoryData(states, inputs, topo)

    # -- serialization -----------------------------------------------------

    def to_json(self):
        return {
            "topology": self.topology.to_json(),
            "A_blocks": [{"row": i + 1, "col": j + 1, "value": block.tolist()}
                         for (i, j), block in sorted(self.A_blocks.items())],
            "B_blocks": [{"node": i + 1, "value": block.tolist()}
                         for i, block in sorted(self.B_blocks.items())],
        }

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        try:
            topo = Topology.from_json(doc["topology"])
            a_blocks = {(b["row"] - 1, b["col"] - 1): b["value"] for b in doc["A_blocks"]}
            b_blocks = {b["node"] - 1: b["value"] for b in doc["B_blocks"]}
        except (KeyError, TypeError) as exc:
            raise ArgumentError(f"malformed system document: {exc}") from exc
        return cls(topo, a_blocks, b_blocks)

    def __eq__(self, other):
        if not isinstance(other, LtiSystem):
            return NotImplemented
        return (self.topology == other.topology
                and np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B))

    __hash__ = object.__hash__


@dataclass(frozen=True)
class ChainParams:
    """Physical parameters of the swing-equation chain benchmark.

    ``couplings[k]`` is the shared coefficient of the undirected edge between
    nodes ``k`` and ``k + 1``.
    """

    masses: tuple
    dampings: tuple
    couplings: tuple
    dt: float = CHAIN_DT
    seed: int | None = None

    def __post_init__(self):
        n = len(self.masses)
        if n < 1 or len(self.dampings) != n or len(self.couplings) != max(n - 1, 0):
            raise ArgumentError("chain parameters have inconsistent lengths")
        if any(m <= 0 for m in self.masses):
            raise ArgumentError("masses must be positive")
        check_positive(self.dt, "dt")

    @classmethod
    def sample(cls, node_count, seed, dt=CHAIN_DT):
        node_count = check_int(node_count, "N", minimum=1)
        rng = np.random.default_rng(seed)
        masses = rng.uniform(*MASS_RANGE, size=node_count)
        dampings = rng.uniform(*DAMPING_RANGE, size=node_count)
        couplings = rng.uniform(*COUPLING_RANGE, size=node_count - 1)
        return cls(tuple(masses), tuple(dampings), tuple(couplings), dt, seed)


def chain_system(params):
    """Assemble the chain plant from explicit parameters."""
    n = len(params.masses)
    dt = params.dt
    topo = Topology.chain(n, state_dim=2, input_dim=1)
    a_blocks, b_blocks = {}, {}
    for i in range(n):
        m_i, d_i = params.masses[i], params.dampings[i]
        nbr_k = {}
        if i > 0:
            nbr_k[i - 1] = params.couplings[i - 1]
        if i < n - 1:
            nbr_k[i + 1] = params.couplings[i]
        k_i = sum(nbr_k.values())
        a_blocks[(i, i)] = [[1.0, dt], [-(k_i / m_i) * dt, 1.0 - (d_i / m_i) * dt]]
        for j, k_ij in nbr_k.items():
            a_blocks[(i, j)] = [[0.0, 0.0], [(k_ij / m_i) * dt, 0.0]]
        b_blocks[i] = [[0.0], [1.0]]
    return LtiSystem(topo, a_blocks, b_blocks)


def make_chain_system(N, seed, dt=CHAIN_DT):
    """Random chain benchmark with ``N`` two-state, one-input subsystems."""
    return chain_system(ChainParams.sample(N, seed, dt))


def select_benchmark_seed(N, start=0, min_mass=0.1, max_radius=None, max_tries=100000):
    """First seed ``>= start`` whose sampled chain is well conditioned.

    The sampled masses can come arbitrarily close to zero, which makes the
    open-loop plant strongly unstable and long excitation records useless in
    floating point. This picks seeds whose masses all exceed ``min_mass`` and,
    optionally, whose spectral radius is at most ``max_radius``.
    """
    for seed in range(start, start + max_tries):
        params = ChainParams.sample(N, seed)
        if min(params.masses) < min_mass:
            continue
        if max_radius is not None:
            radius = np.max(np.abs(np.linalg.eigvals(chain_system(params).A)))
            if radius > max_radius:
                continue
        return seed
    raise ArgumentError(f"no seed in [{start}, {start + max_tries}) meets the conditioning filter")
