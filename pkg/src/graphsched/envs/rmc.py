"""Robot manufacturing cell: nine stations, two work-piece routes.

Nodes (fixed ids)::

    0 IB1   1 IB2   2 M1   3 M2   4 M3   5 MB1   6 MB2   7 MB3   8 OB

WP1 visits IB1 M1 MB1 M2 MB2 M3 MB3 OB, WP2 visits IB2 M2 MB2 M3 MB3 M1 MB1 OB.
Each route contributes seven directed edges: WP1 edges are ids 0-6, WP2
edges ids 7-13, both in route order. Agent 0 drives WP1 edges, agent 1 WP2
edges; an action in ``[0, 128)`` sets bit ``k`` to fire route edge ``k``.

Tick order inside :func:`step`: machine timers count down, then fired edges
move pieces (agent 0 first, ascending edge id), then rewards are computed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ..graph import Graph, build_graph

IB1, IB2, M1, M2, M3, MB1, MB2, MB3, OB = range(9)
NODE_NAMES = ("IB1", "IB2", "M1", "M2", "M3", "MB1", "MB2", "MB3", "OB")
MACHINES = (M1, M2, M3)
NUM_NODES = 9
ROUTE_LEN = 7
NUM_ACTIONS = 2**ROUTE_LEN
NOOP = 0

ROUTES = (
    (IB1, M1, MB1, M2, MB2, M3, MB3, OB),
    (IB2, M2, MB2, M3, MB3, M1, MB1, OB),
)
# (sender, receiver) per agent, route order
ROUTE_EDGES = tuple(tuple(zip(r[:-1], r[1:])) for r in ROUTES)

EDGE_INDEX = np.array([[s for edges in ROUTE_EDGES for s, _ in edges],
                       [r for edges in ROUTE_EDGES for _, r in edges]], dtype=np.int64)
EDGE_ATTRS = np.array([[1.0, 0.0]] * ROUTE_LEN + [[0.0, 1.0]] * ROUTE_LEN)
# input stations carry the machine flag, like machines
NODE_FLAGS = np.array([[1, 0], [1, 0], [1, 0], [1, 0], [1, 0], [0, 1], [0, 1], [0, 1], [0, 1]], dtype=np.float64)

# ACTION_BITS[a, k] is True when action a fires route edge k
ACTION_BITS = ((np.arange(NUM_ACTIONS)[:, None] >> np.arange(ROUTE_LEN)) & 1).astype(bool)


@dataclass(frozen=True)
class RmcConfig:
    target_wp1: int = 20
    target_wp2: int = 20
    max_steps: int = 500
    processing_ticks: tuple[int, int, int] = (1, 1, 1)
    move_cap_per_tick: int | None = None
    delivery_bonus: float = 1.0
    step_penalty: float = 0.01
    terminal_bonus: float = 10.0

    def __post_init__(self):
        if self.target_wp1 < 0 or self.target_wp2 < 0:
            raise ValueError("targets must be non-negative")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        ticks = self.processing_ticks
        if isinstance(ticks, int):
            object.__setattr__(self, "processing_ticks", (ticks,) * 3)
        if len(self.processing_ticks) != 3 or min(self.processing_ticks) < 1:
            raise ValueError("processing_ticks needs three positive entries (M1, M2, M3)")

    @property
    def targets(self) -> tuple[int, int]:
        return (self.target_wp1, self.target_wp2)


@dataclass
class RmcState:
    counts: np.ndarray  # (9, 2) pieces per node and type; a busy machine counts its piece
    timers: np.ndarray  # (3,) remaining ticks per machine, 0 when ready or empty
    step: int = 0
    reached: list[bool] = field(default_factory=lambda: [False, False])
    completed_at: int | None = None

    def copy(self) -> RmcState:
        return RmcState(self.counts.copy(), self.timers.copy(), self.step, list(self.reached), self.completed_at)

    def machine_occupied(self, node: int) -> bool:
        return bool(self.counts[node].sum() > 0)

    def key(self) -> tuple:
        return (self.counts.tobytes(), self.timers.tobytes())


def reset(config: RmcConfig, seed: int | None = None) -> tuple[RmcState, Graph]:
    """Fill the input stations with the target supply. ``seed`` is accepted for
    interface symmetry; the cell has no stochastic elements."""
    counts = np.zeros((NUM_NODES, 2), dtype=np.int64)
    counts[IB1, 0] = config.target_wp1
    counts[IB2, 1] = config.target_wp2
    state = RmcState(counts, np.zeros(3, dtype=np.int64))
    state.reached = [config.target_wp1 == 0, config.target_wp2 == 0]
    if all(state.reached):
        state.completed_at = 0
    return state, to_graph(state)


def to_graph(state: RmcState) -> Graph:
    nf = np.concatenate([state.counts.astype(np.float64), NODE_FLAGS], axis=1)
    return build_graph(nf, EDGE_INDEX, EDGE_ATTRS)


def _movable(state: RmcState, agent: int, node: int, timers_after_tick: bool) -> bool:
    """A piece of ``agent``'s type sits at ``node`` and may leave it."""
    if state.counts[node, agent] <= 0:
        return False
    if node in MACHINES:
        t = state.timers[node - M1]
        return t <= 1 if timers_after_tick else t == 0
    return True


def feasible_edges(state: RmcState, agent: int) -> np.ndarray:
    """Per route edge of ``agent``: can it fire on its own at the next tick?"""
    ok = np.zeros(ROUTE_LEN, dtype=bool)
    for k, (s, r) in enumerate(ROUTE_EDGES[agent]):
        if not _movable(state, agent, s, timers_after_tick=True):
            continue
        if r in MACHINES and state.machine_occupied(r):
            continue
        ok[k] = True
    return ok


def legal_mask(state: RmcState, agent: int) -> np.ndarray:
    """Boolean mask over the 128 edge-activation patterns of ``agent``.

    A pattern is legal when every fired edge is feasible; each machine is the
    receiver of at most one edge per route, so one agent never double-books a
    machine. Pattern 0 (fire nothing) is always legal.
    """
    bad = ~feasible_edges(state, agent)
    return ~ACTION_BITS[:, bad].any(axis=1)


def decode_action(action: int) -> list[int]:
    return [k for k in range(ROUTE_LEN) if (action >> k) & 1]


@dataclass
class StepInfo:
    delivered: tuple[int, int]
    moves: list[tuple[int, int, int]]  # (agent, sender, receiver) actually executed
    success: bool


def step(state: RmcState, joint, config: RmcConfig) -> tuple[RmcState, np.ndarray, bool, StepInfo]:
    joint = [int(a) for a in joint]
    if len(joint) != 2:
        raise ValueError(f"RMC expects 2 actions, got {len(joint)}")
    for agent, a in enumerate(joint):
        if not 0 <= a < NUM_ACTIONS or not legal_mask(state, agent)[a]:
            raise ValueError(f"action {a} of agent {agent} is illegal in the current state")
    s = state.copy()
    busy = s.timers > 0
    s.timers[busy] -= 1
    moves: list[tuple[int, int, int]] = []
    cap = config.move_cap_per_tick
    for agent, a in enumerate(joint):
        for k in decode_action(a):
            if cap is not None and len(moves) >= cap:
                break
            src, dst = ROUTE_EDGES[agent][k]
            if not _movable(s, agent, src, timers_after_tick=False):
                continue
            if dst in MACHINES and s.machine_occupied(dst):
                continue
            s.counts[src, agent] -= 1
            s.counts[dst, agent] += 1
            if dst in MACHINES:
                s.timers[dst - M1] = config.processing_ticks[dst - M1]
            moves.append((agent, src, dst))
    s.step += 1
    delivered = tuple(int(s.counts[OB, i] - state.counts[OB, i]) for i in range(2))
    rewards = np.array([config.delivery_bonus * d - config.step_penalty for d in delivered])
    for i, target in enumerate(config.targets):
        if not s.reached[i] and s.counts[OB, i] >= target:
            s.reached[i] = True
            rewards[i] += config.terminal_bonus
    success = all(s.reached)
    if success and s.completed_at is None:
        s.completed_at = s.step
    done = success or s.step >= config.max_steps
    return s, rewards, done, StepInfo(delivered, moves, success)


def episode_makespan(state: RmcState) -> int | None:
    """Step at which both targets were first met, or ``None`` if never."""
    return state.completed_at


def piece_totals(state: RmcState) -> np.ndarray:
    return state.counts.sum(axis=0)


class RmcEnv:
    """Stateful wrapper exposing the multi-agent environment protocol."""

    num_agents = 2
    name = "rmc"

    def __init__(self, config: RmcConfig | None = None):
        self.config = config or RmcConfig()
        self.state: RmcState | None = None
        self.graph: Graph | None = None
        self.trace: list[dict] = []

    @property
    def action_sizes(self) -> list[int]:
        return [NUM_ACTIONS, NUM_ACTIONS]

    @property
    def node_dim(self) -> int:
        return 4

    @property
    def edge_dim(self) -> int:
        return 2

    def readout_nodes(self, agent: int) -> list[int]:
        # both agents read the whole flattened cell
        return list(range(NUM_NODES))

    def reset(self, seed: int | None = None) -> Graph:
        self.state, self.graph = reset(self.config, seed)
        self.trace = []
        return self.graph

    def legal_mask(self, agent: int) -> np.ndarray:
        return legal_mask(self.state, agent)

    def step(self, actions):
        self.state, rewards, done, info = step(self.state, actions, self.config)
        self.graph = to_graph(self.state)
        self.trace.append({
            "step": self.state.step,
            **{f"{NODE_NAMES[n]}_{t}": int(self.state.counts[n, t - 1])
               for n in range(NUM_NODES) for t in (1, 2)},
            "action_wp1": int(actions[0]),
            "action_wp2": int(actions[1]),
            "reward_wp1": float(rewards[0]),
            "reward_wp2": float(rewards[1]),
        })
        return self.graph, rewards, done, info

    def summary(self) -> dict:
        ms = episode_makespan(self.state)
        return {"steps": self.state.step, "success": ms is not None, "makespan": ms}

    def write_trace(self, path) -> None:
        if not self.trace:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.trace[0]))
            w.writeheader()
            w.writerows(self.trace)


def with_targets(config: RmcConfig, wp1: int, wp2: int) -> RmcConfig:
    return replace(config, target_wp1=wp1, target_wp2=wp2)
