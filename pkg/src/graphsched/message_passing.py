"""Message-passing graph encoder.

Round ``t`` computes, for every node ``i``::

    m_i = sum over edges (j -> i) of M(concat(h_j, e_ji))
    h_i' = R(concat(h_i, m_i))

starting from ``h_i = v_i``. ``M`` and ``R`` are dense networks shared by all
rounds. The embedding width never changes, so ``R`` maps back to the node
feature width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph
from .nn import DenseNetParams, ForwardCache, GradientBundle, backward, forward, init_dense


@dataclass
class EncoderParams:
    message_net: DenseNetParams
    update_net: DenseNetParams
    rounds: int

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        d_h = self.update_net.out_dim
        d_m = self.message_net.out_dim
        if self.update_net.in_dim != d_h + d_m:
            raise ValueError(
                f"update_net input width {self.update_net.in_dim} != node width {d_h} + message width {d_m}"
            )
        if self.message_net.in_dim <= d_h:
            raise ValueError("message_net input must hold a node embedding plus edge attributes")

    @property
    def node_dim(self) -> int:
        return self.update_net.out_dim

    @property
    def edge_dim(self) -> int:
        return self.message_net.in_dim - self.node_dim

    @property
    def message_dim(self) -> int:
        return self.message_net.out_dim

    def copy(self) -> EncoderParams:
        return EncoderParams(self.message_net.copy(), self.update_net.copy(), self.rounds)


def init_encoder(
    node_dim: int,
    edge_dim: int,
    message_dim: int = 16,
    hidden: Sequence[int] = (64, 64),
    activation: str = "tanh",
    rounds: int = 2,
    seed: int = 0,
) -> EncoderParams:
    hidden = list(hidden)
    ss = np.random.SeedSequence(seed).generate_state(2)
    msg = init_dense([node_dim + edge_dim, *hidden, message_dim], activation, int(ss[0]))
    upd = init_dense([node_dim + message_dim, *hidden, node_dim], activation, int(ss[1]))
    return EncoderParams(msg, upd, rounds)


@dataclass
class RoundCache:
    message: ForwardCache
    update: ForwardCache


@dataclass
class NodeEmbeddings:
    H: np.ndarray  # (N_v, d_h)
    round_index: int = 0
    caches: list[RoundCache] = field(default_factory=list, repr=False)


def scatter_sum(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Row sums of ``values`` grouped by ``index`` into an ``(n, k)`` matrix.

    Rows with no contributions are exactly zero.
    """
    out = np.zeros((n, values.shape[1]))
    if index.size:
        np.add.at(out, index, values)
    return out


def assign_initial(graph: Graph) -> NodeEmbeddings:
    return NodeEmbeddings(np.array(graph.node_features, dtype=np.float64), 0)


def _round(H: np.ndarray, graph: Graph, params: EncoderParams) -> tuple[np.ndarray, RoundCache]:
    if H.shape != (graph.num_nodes, params.node_dim):
        raise ValueError(
            f"embeddings have shape {H.shape}, expected ({graph.num_nodes}, {params.node_dim})"
        )
    if graph.edge_dim != params.edge_dim:
        raise ValueError(f"graph edge width {graph.edge_dim} != encoder edge width {params.edge_dim}")
    x_msg = np.concatenate([H[graph.senders], graph.edge_attrs], axis=1)
    y_msg, mcache = forward(params.message_net, x_msg)
    agg = scatter_sum(y_msg, graph.receivers, graph.num_nodes)
    H_next, ucache = forward(params.update_net, np.concatenate([H, agg], axis=1))
    return H_next, RoundCache(mcache, ucache)


def aggregate_messages(embeddings: NodeEmbeddings, graph: Graph, params: EncoderParams) -> np.ndarray:
    """Summed incoming messages for every node (the ``m_i`` of one round)."""
    x_msg = np.concatenate([embeddings.H[graph.senders], graph.edge_attrs], axis=1)
    y_msg, _ = forward(params.message_net, x_msg)
    return scatter_sum(y_msg, graph.receivers, graph.num_nodes)


def message_round(embeddings: NodeEmbeddings, graph: Graph, params: EncoderParams) -> NodeEmbeddings:
    H, _ = _round(embeddings.H, graph, params)
    return NodeEmbeddings(H, embeddings.round_index + 1)


def encode(graph: Graph, params: EncoderParams, keep_cache: bool = False) -> NodeEmbeddings:
    """Initial assignment followed by ``params.rounds`` message rounds."""
    H = assign_initial(graph).H
    caches = []
    for _ in range(params.rounds):
        H, c = _round(H, graph, params)
        if keep_cache:
            caches.append(c)
    return NodeEmbeddings(H, params.rounds, caches)


def flatten_readout(embeddings: NodeEmbeddings) -> np.ndarray:
    return embeddings.H.reshape(-1).copy()


def node_readout(embeddings: NodeEmbeddings, nodes: Sequence[int]) -> list[np.ndarray]:
    n = embeddings.H.shape[0]
    out = []
    for i in nodes:
        if not 0 <= i < n:
            raise IndexError(f"node {i} outside [0, {n})")
        out.append(embeddings.H[i].copy())
    return out


def readout_gradient(n_nodes: int, d_h: int, nodes: Sequence[int], grads: Sequence[np.ndarray]) -> np.ndarray:
    """Scatter per-node readout gradients back into an ``(n_nodes, d_h)`` matrix."""
    G = np.zeros((n_nodes, d_h))
    for i, g in zip(nodes, grads):
        G[i] += g
    return G


@dataclass
class EncoderGradients:
    message: GradientBundle
    update: GradientBundle
    node_features: np.ndarray

    def blocks(self):
        for name, a in self.message.blocks():
            yield "message." + name, a
        for name, a in self.update.blocks():
            yield "update." + name, a


def encoder_backward(
    graph: Graph,
    params: EncoderParams,
    embeddings: NodeEmbeddings,
    upstream: np.ndarray,
) -> EncoderGradients:
    """Backpropagate ``upstream`` (gradient on the final ``H``) through all rounds.

    ``embeddings`` must come from ``encode(graph, params, keep_cache=True)``.
    """
    if len(embeddings.caches) != params.rounds:
        raise ValueError(
            f"embeddings carry {len(embeddings.caches)} round caches, encoder has {params.rounds} rounds; "
            "call encode(..., keep_cache=True) with the same params"
        )
    gH = np.asarray(upstream, dtype=np.float64)
    if gH.shape != embeddings.H.shape:
        raise ValueError(f"upstream gradient shape {gH.shape} != embeddings shape {embeddings.H.shape}")
    d_h = params.node_dim
    g_msg = GradientBundle.zeros_like(params.message_net)
    g_upd = GradientBundle.zeros_like(params.update_net)
    for cache in reversed(embeddings.caches):
        gu = backward(params.update_net, cache.update, gH)
        g_upd.add_(gu)
        g_in = gu.input
        gH = g_in[:, :d_h].copy()
        g_agg = g_in[:, d_h:]
        if graph.num_edges:
            gm = backward(params.message_net, cache.message, g_agg[graph.receivers])
            g_msg.add_(gm)
            np.add.at(gH, graph.senders, gm.input[:, :d_h])
    return EncoderGradients(g_msg, g_upd, gH)
