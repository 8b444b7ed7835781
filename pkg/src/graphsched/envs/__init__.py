"""Simulated production environments.

Each environment class exposes the protocol used by the training loop:
``num_agents``, ``action_sizes``, ``node_dim``, ``edge_dim``,
``readout_nodes(agent)``, ``reset(seed) -> Graph``, ``legal_mask(agent)``,
``step(actions) -> (Graph, rewards, done, info)`` and ``summary()``.
"""

from .bandit import BanditEnv
from .imm import ImmConfig, ImmEnv, ImmInstance, JobSpec
from .rmc import RmcConfig, RmcEnv

__all__ = ["BanditEnv", "ImmConfig", "ImmEnv", "ImmInstance", "JobSpec", "RmcConfig", "RmcEnv"]
