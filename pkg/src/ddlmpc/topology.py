"""Interconnection graphs and d-hop neighbourhood queries.

A :class:`Topology` stores, for every node ``i``, the set ``N_i`` of nodes
``j`` whose state enters the dynamics of ``i`` (an edge ``j -> i``). All
neighbourhood queries are answered from breadth-first distances computed once
per topology.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._validation import check_int, check_node
from .exceptions import ArgumentError

UNREACHABLE = np.iinfo(np.int64).max


@dataclass(frozen=True)
class HopSets:
    d_in: frozenset
    d_out: frozenset
    d_ext: frozenset


@dataclass(frozen=True, eq=False)
class Topology:
    """Directed interconnection graph with per-node state and input sizes.

    Attributes:
        node_count: number of subsystems.
        adjacency: ``adjacency[i]`` is the frozenset of nodes ``j != i`` with
            an edge ``j -> i``. Self-loops are implicit.
        state_dims: per-node state dimension (each >= 1).
        input_dims: per-node input dimension (zero allowed).
    """

    node_count: int
    adjacency: tuple
    state_dims: tuple
    input_dims: tuple

    def __post_init__(self):
        n = check_int(self.node_count, "node_count", minimum=1)
        adjacency = tuple(frozenset(int(j) for j in nbrs) for nbrs in self.adjacency)
        if len(adjacency) != n:
            raise ArgumentError(f"adjacency must list {n} neighbour sets")
        for i, nbrs in enumerate(adjacency):
            for j in nbrs:
                if not 0 <= j < n:
                    raise ArgumentError(f"node {i} lists invalid neighbour {j}")
        adjacency = tuple(nbrs - {i} for i, nbrs in enumerate(adjacency))
        state_dims = tuple(check_int(s, "state_dims entry", 1) for s in self.state_dims)
        input_dims = tuple(check_int(s, "input_dims entry", 0) for s in self.input_dims)
        if len(state_dims) != n or len(input_dims) != n:
            raise ArgumentError("state_dims and input_dims must have one entry per node")
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "state_dims", state_dims)
        object.__setattr__(self, "input_dims", input_dims)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_edges(cls, node_count, edges, state_dims, input_dims):
        """Build from ``(i, j)`` pairs meaning ``j`` influences ``i`` (0-based)."""
        adjacency = [set() for _ in range(node_count)]
        for i, j in edges:
            if not (0 <= i < node_count and 0 <= j < node_count):
                raise ArgumentError(f"edge ({i}, {j}) references an invalid node")
            adjacency[i].add(j)
        return cls(node_count, tuple(adjacency), tuple(state_dims), tuple(input_dims))

    @classmethod
    def chain(cls, node_count, state_dim=2, input_dim=1, directed=False):
        """Chain graph; bidirectional unless ``directed`` (then ``i -> i+1``)."""
        node_count = check_int(node_count, "node_count", minimum=1)
        edges = [(i + 1, i) for i in range(node_count - 1)]
        if not directed:
            edges += [(i, i + 1) for i in range(node_count - 1)]
        return cls.from_edges(node_count, edges, [state_dim] * node_count,
                              [input_dim] * node_count)

    def to_json(self):
        """JSON document using 1-based node labels; ``[i, j]`` is an edge ``j -> i``."""
        edges = [[i + 1, j + 1] for i in range(self.node_count) for j in sorted(self.adjacency[i])]
        return {"nodes": self.node_count, "edges": edges,
                "state_dims": list(self.state_dims), "input_dims": list(self.input_dims)}

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        try:
            n = int(doc["nodes"])
            edges = [(int(i) - 1, int(j) - 1) for i, j in doc.get("edges", [])]
            state_dims = doc["state_dims"]
            input_dims = doc["input_dims"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ArgumentError(f"malformed topology document: {exc}") from exc
        return cls.from_edges(n, edges, state_dims, input_dims)

    # -- sizes --------------------------------------------------------------

    @property
    def n_states(self):
        return sum(self.state_dims)

    @property
    def n_inputs(self):
        return sum(self.input_dims)

    @cached_property
    def state_offsets(self):
        return np.concatenate([[0], np.cumsum(self.state_dims)]).astype(int)

    @cached_property
    def input_offsets(self):
        return np.concatenate([[0], np.cumsum(self.input_dims)]).astype(int)

    def state_slice(self, i):
        return slice(int(self.state_offsets[i]), int(self.state_offsets[i + 1]))

    def input_slice(self, i):
        return slice(int(self.input_offsets[i]), int(self.input_offsets[i + 1]))

    # -- distances ----------------------------------------------------------

    @cached_property
    def _successors(self):
        succ = [set() for _ in range(self.node_count)]
        for i, nbrs in enumerate(self.adjacency):
            for j in nbrs:
                succ[j].add(i)
        return tuple(frozenset(s) for s in succ)

    @cached_property
    def distances(self):
        """``distances[j, i]`` is dist(j -> i); ``UNREACHABLE`` if no path."""
        n = self.node_count
        dist = np.full((n, n), UNREACHABLE, dtype=np.int64)
        for src in range(n):
            dist[src, src] = 0
            queue = deque([src])
            while queue:
                v = queue.popleft()
                for w in self._successors[v]:
                    if dist[src, w] == UNREACHABLE:
                        dist[src, w] = dist[src, v] + 1
                        queue.append(w)
        dist.setflags(write=False)
        return dist

    def distance(self, j, i):
        """Number of edges on the shortest path ``j -> i``."""
        d = self.distances[check_node(self, j), check_node(self, i)]
        return None if d == UNREACHABLE else int(d)

    @cached_property
    def diameter(self):
        finite = self.distances[self.distances != UNREACHABLE]
        return int(finite.max())

    @cached_property
    def _in_cache(self):
        return {}

    @cached_property
    def _out_cache(self):
        return {}

    def in_set(self, i, d):
        """Nodes ``j`` with dist(j -> i) <= d."""
        i = check_node(self, i)
        d = check_int(d, "d", minimum=0)
        key = (i, d)
        if key not in self._in_cache:
            self._in_cache[key] = frozenset(np.flatnonzero(self.distances[:, i] <= d).tolist())
        return self._in_cache[key]

    def out_set(self, i, d):
        """Nodes ``j`` with dist(i -> j) <= d."""
        i = check_node(self, i)
        d = check_int(d, "d", minimum=0)
        key = (i, d)
        if key not in self._out_cache:
            self._out_cache[key] = frozenset(np.flatnonzero(self.distances[i, :] <= d).tolist())
        return self._out_cache[key]

    def ext_set(self, i, d):
        return frozenset(range(self.node_count)) - self.in_set(i, d)

    def ring_set(self, i, d):
        """Nodes at incoming distance exactly ``d`` (``d >= 1``)."""
        d = check_int(d, "d")
        if d < 1:
            raise ArgumentError("ring_set needs d >= 1; use in_set for d = 0")
        return self.in_set(i, d) - self.in_set(i, d - 1)

    def out_ring(self, i, d):
        """Nodes at outgoing distance exactly ``d`` (``d >= 1``)."""
        d = check_int(d, "d")
        if d < 1:
            raise ArgumentError("out_ring needs d >= 1; use out_set for d = 0")
        return self.out_set(i, d) - self.out_set(i, d - 1)

    def hop_sets(self, i, d):
        return HopSets(self.in_set(i, d), self.out_set(i, d), self.ext_set(i, d))

    def in_neighbors_of(self, nodes):
        """Union of ``N_k`` over ``nodes`` (direct in-neighbours, self included)."""
        result = set(nodes)
        for k in nodes:
            result |= self.adjacency[k]
        return frozenset(result)

    def is_symmetric(self):
        return all(i in self.adjacency[j] for i in range(self.node_count)
                   for j in self.adjacency[i])

    def __hash__(self):
        return hash((self.node_count, self.adjacency, self.state_dims, self.input_dims))

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (self.node_count, self.adjacency, self.state_dims, self.input_dims) == (
            other.node_count, other.adjacency, other.state_dims, other.input_dims)
