"""Single-state multi-armed bandit wrapped as a one-node graph environment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import Graph, build_graph

_GRAPH = build_graph([[1.0]], np.zeros((2, 0), dtype=np.int64), np.zeros((0, 1)))


@dataclass
class BanditEnv:
    rewards: tuple[float, ...] = (1.0, 0.0)
    name: str = "bandit"

    num_agents = 1
    node_dim = 1
    edge_dim = 1

    def __post_init__(self):
        self.done = False

    @property
    def action_sizes(self) -> list[int]:
        return [len(self.rewards)]

    def readout_nodes(self, agent: int) -> list[int]:
        return [0]

    def reset(self, seed: int | None = None) -> Graph:
        self.done = False
        self.last = None
        return _GRAPH

    def legal_mask(self, agent: int) -> np.ndarray:
        return np.ones(len(self.rewards), dtype=bool)

    def step(self, actions):
        (a,) = actions
        self.done = True
        self.last = int(a)
        return _GRAPH, np.array([self.rewards[a]]), True, None

    def summary(self) -> dict:
        best = int(np.argmax(self.rewards))
        return {"steps": 1, "success": self.last == best, "makespan": None}
