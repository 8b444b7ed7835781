"""Dense feed-forward networks with explicit backpropagation.

Every learned function in the package (message function, update function,
policy and value heads) is a :class:`DenseNetParams` chain. Inputs may be a
single vector or a batch of row vectors; parameter gradients from a batch
are summed over rows.

Checkpoint layout (plain text, one token group per line)::

    densenet 1
    activation <tanh|relu|identity>
    layer_sizes <n0> <n1> ... <nL>
    weight <l> <out> <in>
    <out lines of <in> floats, row-major>
    bias <l> <out>
    <one line of <out> floats>
    ... repeated for l = 0 .. L-1

Floats are written with ``repr`` so a save/load round trip is bit exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class DenseNetParams:
    layer_sizes: tuple[int, ...]
    activation: str
    weights: list[np.ndarray]  # weights[l] has shape (layer_sizes[l+1], layer_sizes[l])
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and one bias vector per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != shape:
                raise ValueError(f"weights[{l}] has shape {w.shape}, expected {shape}")
            if b.shape != (shape[0],):
                raise ValueError(f"biases[{l}] has shape {b.shape}, expected {(shape[0],)}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> DenseNetParams:
        return DenseNetParams(
            self.layer_sizes,
            self.activation,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def blocks(self):
        """Yield ``(name, array)`` for every parameter block in layer order."""
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"weights[{l}]", w
            yield f"biases[{l}]", b

    def num_params(self) -> int:
        return sum(a.size for _, a in self.blocks())

    def equals(self, other: DenseNetParams) -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.activation == other.activation
            and all(np.array_equal(a, b) for (_, a), (_, b) in zip(self.blocks(), other.blocks()))
        )


@dataclass
class GradientBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, params: DenseNetParams) -> GradientBundle:
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])

    def blocks(self):
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"weights[{l}]", w
            yield f"biases[{l}]", b

    def add_(self, other: GradientBundle) -> GradientBundle:
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def scale_(self, c: float) -> GradientBundle:
        for a in self.weights:
            a *= c
        for a in self.biases:
            a *= c
        return self

    def sq_norm(self) -> float:
        return float(sum(np.vdot(a, a) for _, a in self.blocks()))


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer, 2-D
    outputs: list[np.ndarray]  # post-activation output of each layer, 2-D
    squeeze: bool


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_dense(layer_sizes, activation: str = "tanh", seed: int = 0) -> DenseNetParams:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError(f"need at least an input and an output width, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return DenseNetParams(tuple(sizes), activation, weights, biases)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name: str, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return g * (1.0 - out * out)
    if name == "relu":
        return g * (out > 0.0)
    return g


def forward(params: DenseNetParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise ValueError(f"input width {h.shape[-1]} does not match layer_sizes[0]={params.in_dim}")
    inputs, outputs = [], []
    last = params.num_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        h = z if l == last else _act(params.activation, z)
        outputs.append(h)
    return (h[0] if squeeze else h), ForwardCache(inputs, outputs, squeeze)


def backward(params: DenseNetParams, cache: ForwardCache, output_gradient) -> GradientBundle:
    """Gradients of ``L = <output_gradient, output>`` for a cached forward pass."""
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :] if g.ndim == 1 else g
    expected = cache.outputs[-1].shape
    if g.shape != expected:
        raise ValueError(f"output_gradient has shape {g.shape}, expected {expected}")
    if len(cache.inputs) != params.num_layers:
        raise ValueError("cache does not belong to these parameters")
    n = params.num_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for l in range(n - 1, -1, -1):
        if l != n - 1:
            g = _act_grad(params.activation, cache.outputs[l], g)
        gw[l] = g.T @ cache.inputs[l]
        gb[l] = g.sum(axis=0)
        g = g @ params.weights[l]
    return GradientBundle(gw, gb, g[0] if cache.squeeze else g)


def apply_update(
    params: DenseNetParams,
    grads: GradientBundle,
    opt_state: AdamState | None,
    lr: float,
    mode: str = "adam",
) -> tuple[DenseNetParams, AdamState | None]:
    """Descend along ``grads``; returns new params and optimizer state."""
    for name, g in grads.blocks():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in block {name}")
    new = params.copy()
    if mode == "sgd":
        for p, (_, g) in zip(_param_blocks(new), grads.blocks()):
            p -= lr * g
        return new, opt_state
    if mode != "adam":
        raise ValueError(f"unknown optimizer mode {mode!r}")
    if opt_state is None or not opt_state.m:
        opt_state = AdamState(0, [np.zeros_like(a) for _, a in params.blocks()],
                              [np.zeros_like(a) for _, a in params.blocks()])
    state = AdamState(opt_state.step + 1, [m.copy() for m in opt_state.m], [v.copy() for v in opt_state.v])
    c1 = 1.0 - ADAM_BETA1 ** state.step
    c2 = 1.0 - ADAM_BETA2 ** state.step
    for p, m, v, (_, g) in zip(_param_blocks(new), state.m, state.v, grads.blocks()):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return new, state


def _param_blocks(params: DenseNetParams):
    for w, b in zip(params.weights, params.biases):
        yield w
        yield b


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_block: str
    passed: bool


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a-b| / max(|a|, |b|, floor)`` elementwise."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(
    params: DenseNetParams,
    x,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    output_gradient=None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare :func:`backward` with central finite differences.

    The scalar checked is ``<output_gradient, forward(x)>``; a random
    direction is drawn when none is given. The input gradient is checked
    too and reported as block ``input``.
    """
    x = np.array(x, dtype=np.float64)
    out, cache = forward(params, x)
    if output_gradient is None:
        output_gradient = np.random.default_rng(seed).standard_normal(out.shape)
    g_out = np.asarray(output_gradient, dtype=np.float64)
    analytic = backward(params, cache, g_out)

    def loss(p: DenseNetParams, xx: np.ndarray) -> float:
        return float(np.sum(forward(p, xx)[0] * g_out))

    worst, worst_name = 0.0, ""
    probe = params.copy()
    for (name, block), (_, ga) in zip(list(probe.blocks()), analytic.blocks()):
        numeric = np.empty_like(block)
        flat, nflat = block.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(probe, x)
            flat[i] = orig - h
            lm = loss(probe, x)
            flat[i] = orig
            nflat[i] = (lp - lm) / (2.0 * h)
        err = float(relative_error(ga, numeric).max(initial=0.0))
        if err > worst:
            worst, worst_name = err, name
    numeric = np.empty_like(x)
    xf, nf = x.reshape(-1), numeric.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        lp = loss(params, x)
        xf[i] = orig - h
        lm = loss(params, x)
        xf[i] = orig
        nf[i] = (lp - lm) / (2.0 * h)
    err = float(relative_error(analytic.input, numeric).max(initial=0.0))
    if err > worst:
        worst, worst_name = err, "input"
    return GradCheckReport(worst, worst_name, worst < tolerance)


def save_params(params: DenseNetParams, path) -> None:
    lines = ["densenet 1", f"activation {params.activation}",
             "layer_sizes " + " ".join(str(s) for s in params.layer_sizes)]
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"weight {l} {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in w)
        lines.append(f"bias {l} {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> DenseNetParams:
    try:
        return _parse_params(Path(path).read_text().splitlines(), path)
    except StopIteration:
        raise ValueError(f"{path}: checkpoint ends early") from None


def _parse_params(lines: list[str], path) -> DenseNetParams:
    it = iter(lines)

    def expect(tag: str) -> list[str]:
        parts = next(it).split()
        if not parts or parts[0] != tag:
            raise ValueError(f"{path}: expected {tag!r} line, got {' '.join(parts)!r}")
        return parts[1:]

    if expect("densenet") != ["1"]:
        raise ValueError(f"{path}: unsupported checkpoint version")
    (activation,) = expect("activation")
    sizes = tuple(int(s) for s in expect("layer_sizes"))
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        _, rows, cols = (int(v) for v in expect("weight"))
        weights.append(np.array([[float(v) for v in next(it).split()] for _ in range(rows)]).reshape(rows, cols))
        _, n = (int(v) for v in expect("bias"))
        biases.append(np.array([float(v) for v in next(it).split()]).reshape(n))
    return DenseNetParams(sizes, activation, weights, biases)
