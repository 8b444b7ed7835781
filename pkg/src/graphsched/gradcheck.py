"""Finite-difference gradient suites for the dense networks and the encoder."""

from __future__ import annotations

import numpy as np

from .graph import Graph, build_graph
from .message_passing import EncoderParams, encode, encoder_backward, init_encoder
from .nn import check_gradients, init_dense, relative_error

FD_STEP = 1e-5


def random_graph(rng: np.random.Generator, max_nodes: int = 5, node_dim: int = 3, edge_dim: int = 2,
                 max_edges: int | None = None) -> Graph:
    n = int(rng.integers(1, max_nodes + 1))
    max_edges = 2 * n if max_edges is None else max_edges
    e = int(rng.integers(0, max_edges + 1))
    ei = rng.integers(0, n, size=(2, e))
    return build_graph(rng.standard_normal((n, node_dim)), ei, rng.standard_normal((e, edge_dim)))


def encoder_gradcheck(graph: Graph, params: EncoderParams, upstream: np.ndarray, h: float = FD_STEP) -> float:
    """Max relative error of :func:`encoder_backward` against central differences
    of ``<upstream, encode(graph).H>`` over every encoder parameter."""
    emb = encode(graph, params, keep_cache=True)
    grads = encoder_backward(graph, params, emb, upstream)

    def loss(p: EncoderParams) -> float:
        return float(np.sum(encode(graph, p).H * upstream))

    probe = params.copy()
    blocks = [a for _, a in probe.message_net.blocks()] + [a for _, a in probe.update_net.blocks()]
    worst = 0.0
    for block, (_, ga) in zip(blocks, grads.blocks()):
        flat = block.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(probe)
            flat[i] = orig - h
            lm = loss(probe)
            flat[i] = orig
            numeric[i] = (lp - lm) / (2 * h)
        worst = max(worst, float(relative_error(ga.reshape(-1), numeric).max(initial=0.0)))
    return worst


def run_gradcheck(configs: int = 50, seed: int = 0) -> dict[str, float]:
    """Random dense and encoder configurations; returns the worst error per suite."""
    rng = np.random.default_rng(seed)
    dense_worst = enc_worst = 0.0
    for c in range(configs):
        act = ("tanh", "identity", "relu")[c % 3]
        sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
        params = init_dense(sizes, act, int(rng.integers(1 << 31)))
        for b in params.biases:
            b[:] = rng.standard_normal(b.shape) * 0.5
        x = rng.standard_normal(sizes[0])
        if act == "relu":
            x = _away_from_kinks(params, x, rng)
        dense_worst = max(dense_worst, check_gradients(params, x, h=FD_STEP, seed=c).max_rel_error)

        d_v, d_e = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        g = random_graph(rng, 5, d_v, d_e)
        enc = init_encoder(d_v, d_e, int(rng.integers(1, 4)), (int(rng.integers(2, 6)),), "tanh",
                           int(rng.integers(1, 4)), int(rng.integers(1 << 31)))
        up = rng.standard_normal((g.num_nodes, d_v))
        enc_worst = max(enc_worst, encoder_gradcheck(g, enc, up))
    return {"dense": dense_worst, "encoder": enc_worst}


def _away_from_kinks(params, x, rng, margin: float = 1e-3, tries: int = 200):
    """Resample ``x`` until no relu pre-activation lies within ``margin`` of 0."""
    from .nn import forward

    for _ in range(tries):
        _, cache = forward(params, x)
        pre = [c @ w.T + b for c, w, b in zip(cache.inputs, params.weights, params.biases)][:-1]
        if all(np.abs(p).min(initial=np.inf) > margin for p in pre):
            return x
        x = rng.standard_normal(x.shape)
    return x
