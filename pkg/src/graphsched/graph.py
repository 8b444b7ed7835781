"""Immutable directed graph container used to encode production state.

A graph holds a node-feature matrix, a ``2 x N_e`` edge index whose first
row lists senders and second row lists receivers, and an edge-attribute
matrix with one row per edge. Edge ids are column positions in the edge
index and are stable; environments rely on that ordering when they map
action bits onto edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when graph construction or a graph query gets invalid input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    node_features: np.ndarray  # (N_v, d_v) float64
    edge_index: np.ndarray  # (2, N_e) int64, row 0 senders, row 1 receivers
    edge_attrs: np.ndarray  # (N_e, d_e) float64

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def node_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_attrs.shape[1]

    @property
    def senders(self) -> np.ndarray:
        return self.edge_index[0]

    @property
    def receivers(self) -> np.ndarray:
        return self.edge_index[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.node_features.shape == other.node_features.shape
            and self.edge_attrs.shape == other.edge_attrs.shape
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edge_index, other.edge_index)
            and np.array_equal(self.edge_attrs, other.edge_attrs)
        )

    __hash__ = None  # type: ignore[assignment]


def build_graph(node_features, edge_index, edge_attrs) -> Graph:
    """Validate inputs and return an immutable :class:`Graph`.

    ``edge_index`` may be given with zero columns; ``edge_attrs`` must then
    have shape ``(0, d_e)``.
    """
    nf = np.array(node_features, dtype=np.float64)
    if nf.ndim != 2:
        raise GraphError(f"node_features must be a 2-D matrix, got shape {nf.shape}")
    ei = np.asarray(edge_index)
    if ei.size == 0:
        ei = np.zeros((2, 0), dtype=np.int64)
    if ei.ndim != 2 or ei.shape[0] != 2:
        raise GraphError(f"edge_index must have shape (2, N_e), got {ei.shape}")
    if not np.issubdtype(ei.dtype, np.integer):
        if not np.all(np.equal(np.mod(ei, 1), 0)):
            raise GraphError("edge_index must hold integer node ids")
    ei = np.array(ei, dtype=np.int64)
    ea = np.array(edge_attrs, dtype=np.float64)
    if ea.ndim != 2:
        raise GraphError(f"edge_attrs must be a 2-D matrix, got shape {ea.shape}")
    if ea.shape[0] != ei.shape[1]:
        raise GraphError(
            f"edge_attrs has {ea.shape[0]} rows but edge_index has {ei.shape[1]} edges"
        )
    n = nf.shape[0]
    bad = np.flatnonzero((ei < 0).any(axis=0) | (ei >= n).any(axis=0))
    if bad.size:
        k = int(bad[0])
        raise GraphError(
            f"edge_index column {k} references node ({ei[0, k]} -> {ei[1, k]}) "
            f"outside [0, {n})"
        )
    if not (np.isfinite(nf).all() and np.isfinite(ea).all()):
        raise GraphError("node_features and edge_attrs must be finite")
    return Graph(_frozen(nf), _frozen(ei), _frozen(ea))


def incoming(graph: Graph, node: int) -> list[tuple[int, int]]:
    """Return ``(sender, edge_id)`` pairs of edges ending at ``node``."""
    if not 0 <= node < graph.num_nodes:
        raise GraphError(f"node {node} outside [0, {graph.num_nodes})")
    edges = np.flatnonzero(graph.receivers == node)
    return [(int(graph.senders[k]), int(k)) for k in edges]


def permute_nodes(graph: Graph, perm: Sequence[int]) -> Graph:
    """Relabel nodes so that old node ``i`` becomes node ``perm[i]``.

    Edge order and edge attributes are left untouched.
    """
    p = np.asarray(perm, dtype=np.int64)
    n = graph.num_nodes
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise GraphError(f"perm is not a bijection on [0, {n})")
    nf = np.empty_like(graph.node_features)
    nf[p] = graph.node_features
    return build_graph(nf, p[graph.edge_index], graph.edge_attrs)


def inverse_permutation(perm: Sequence[int]) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.size)
    return inv


def batch_graphs(graphs: Sequence[Graph]) -> tuple[Graph, np.ndarray]:
    """Disjoint union of graphs sharing feature widths.

    Returns the union graph and the node offset of every member, so member
    ``g`` node ``i`` is union node ``offsets[g] + i``.
    """
    if not graphs:
        raise GraphError("cannot batch an empty list of graphs")
    sizes = np.fromiter((g.num_nodes for g in graphs), dtype=np.int64, count=len(graphs))
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    if len(graphs) == 1:
        return graphs[0], offsets
    nf = np.concatenate([g.node_features for g in graphs])
    ei = np.concatenate([g.edge_index + off for g, off in zip(graphs, offsets)], axis=1)
    ea = np.concatenate([g.edge_attrs for g in graphs])
    # members are already validated; skip the checks in build_graph
    return Graph(_frozen(nf), _frozen(ei), _frozen(ea)), offsets
