"""Distributed training: one independent PPO learner per resource.

Agents never exchange data. Each reads the shared environment graph through
its own encoder and readout nodes, samples from its own legal mask, and
learns from its own reward stream. Rollouts step several environment copies
in lockstep so that each agent can encode all of their graphs in one batched
pass; this changes nothing about the per-episode semantics.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .message_passing import init_encoder
from .nn import load_params, save_params
from .ppo import AgentNets, PPOConfig, TrajectoryBatch, Transition, make_agent_nets, policy_step, ppo_update, values

log = logging.getLogger(__name__)


@dataclass
class AgentBinding:
    agent_id: int
    nets: AgentNets
    action_space: int
    trajectory: TrajectoryBatch = field(default_factory=TrajectoryBatch)

    @property
    def readout_nodes(self) -> tuple[int, ...]:
        return self.nets.readout_nodes


@dataclass
class NetConfig:
    rounds: int = 2
    message_dim: int = 16
    encoder_hidden: tuple[int, ...] = (64, 64)
    head_hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"


def make_bindings(env, net_config: NetConfig | None = None, seed: int = 0) -> list[AgentBinding]:
    """Fresh, independently seeded networks for every agent of ``env``."""
    cfg = net_config or NetConfig()
    seeds = np.random.SeedSequence(seed).spawn(env.num_agents)
    out = []
    for i, ss in enumerate(seeds):
        enc_seed, head_seed = (int(s) for s in ss.generate_state(2))
        encoder = init_encoder(env.node_dim, env.edge_dim, cfg.message_dim, cfg.encoder_hidden,
                               cfg.activation, cfg.rounds, enc_seed)
        nodes = env.readout_nodes(i)
        nets = make_agent_nets(len(nodes) * env.node_dim, env.action_sizes[i], cfg.head_hidden,
                               cfg.activation, head_seed, encoder, nodes)
        out.append(AgentBinding(i, nets, env.action_sizes[i]))
    return out


@dataclass
class EpisodeResult:
    steps: int
    returns: np.ndarray  # per agent, undiscounted
    success: bool
    makespan: int | None
    trajectories: list[TrajectoryBatch] | None = None


def collect_episodes(
    envs: Sequence,
    bindings: Sequence[AgentBinding],
    rng: np.random.Generator,
    greedy: bool = False,
    record: bool = True,
    seeds: Sequence[int | None] | None = None,
    max_steps: int | None = None,
    decisions_only: bool = False,
) -> list[EpisodeResult]:
    """Run one episode in every env, all agents acting every tick.

    Recorded transitions get values from each agent's value head after the
    episodes end (parameters do not change during collection). With
    ``decisions_only`` values are filled in only at ticks with a real choice
    and left at 0 elsewhere.
    """
    n_agents = len(bindings)
    for env in envs:
        if env.num_agents != n_agents:
            raise ValueError(f"environment has {env.num_agents} agents, {n_agents} bindings given")
    seeds = seeds if seeds is not None else [None] * len(envs)
    graphs = [env.reset(s) for env, s in zip(envs, seeds)]
    trajs = [[TrajectoryBatch() for _ in range(n_agents)] for _ in envs]
    returns = np.zeros((len(envs), n_agents))
    active = list(range(len(envs)))
    steps = np.zeros(len(envs), dtype=np.int64)
    while active:
        joint = np.zeros((len(active), n_agents), dtype=np.int64)
        logps = np.zeros((len(active), n_agents))
        masks = [[envs[e].legal_mask(i) for i in range(n_agents)] for e in active]
        for i, b in enumerate(bindings):
            m_i = np.array([masks[r][i] for r in range(len(active))])
            if m_i.shape[1] != b.action_space:
                raise ValueError(f"agent {i}: mask width {m_i.shape[1]} != action space {b.action_space}")
            choice = m_i.sum(axis=1) > 1
            # single legal action: no decision, log-prob 0
            joint[:, i] = np.argmax(m_i, axis=1)
            rows = np.flatnonzero(choice)
            if rows.size:
                a, lp = policy_step(b.nets, [graphs[active[r]] for r in rows], m_i[rows], rng, greedy)
                joint[rows, i] = a
                logps[rows, i] = lp
        still = []
        for r, e in enumerate(active):
            env = envs[e]
            prev = graphs[e]
            try:
                g, rewards, done, _ = env.step(joint[r].tolist())
            except Exception as exc:
                raise RuntimeError(f"env {e} failed at step {steps[e]} with actions {joint[r].tolist()}: {exc}") from exc
            steps[e] += 1
            if max_steps is not None and steps[e] >= max_steps:
                done = True
            returns[e] += rewards
            if record:
                for i in range(n_agents):
                    trajs[e][i].append(Transition(prev, joint[r, i], logps[r, i], rewards[i], 0.0, done, masks[r][i]))
            graphs[e] = g
            if not done:
                still.append(e)
        active = still
    results = []
    for e, env in enumerate(envs):
        summary = env.summary()
        results.append(EpisodeResult(int(steps[e]), returns[e].copy(), bool(summary["success"]),
                                     summary["makespan"], trajs[e] if record else None))
    if record:
        for i, b in enumerate(bindings):
            where = []
            for e in range(len(envs)):
                t = trajs[e][i]
                keep = t.decision_mask() if decisions_only else np.ones(len(t), dtype=bool)
                where.extend((e, k) for k in np.flatnonzero(keep))
            if not where:
                continue
            v = values(b.nets, [trajs[e][i].observations[k] for e, k in where])
            for (e, k), val in zip(where, v):
                trajs[e][i].values[k] = float(val)
    return results


def collect_episode(env, bindings: Sequence[AgentBinding], rng: np.random.Generator, **kw) -> EpisodeResult:
    return collect_episodes([env], bindings, rng, **kw)[0]


@dataclass
class TrainSchedule:
    episodes: int = 1000
    eval_every: int = 50
    seed: int = 0
    envs_per_update: int = 4
    eval_episodes: int = 1
    stop_success: float | None = None  # stop once greedy success rate reaches this
    keep_best: bool = True


@dataclass
class TrainResult:
    curve: list[dict]
    evals: list[dict]
    log: list[dict]
    bindings: list[AgentBinding]
    best_bindings: list[AgentBinding] | None
    best_eval: dict | None
    episodes_run: int


CURVE_COLUMNS = ("episode", "agent_id", "return", "episode_steps", "success_flag", "makespan")
EVAL_COLUMNS = ("episode", "success_rate", "mean_makespan", "mean_steps", "mean_return")
LOG_COLUMNS = ("episode", "agent_id", "policy_loss", "value_loss", "entropy", "clip_fraction", "mean_return")


def evaluate(env_factory: Callable, bindings: Sequence[AgentBinding], episodes: int, seed: int = 0,
             greedy: bool = True) -> tuple[dict, list[EpisodeResult]]:
    rng = np.random.default_rng(seed)
    envs = [env_factory() for _ in range(episodes)]
    res = collect_episodes(envs, bindings, rng, greedy=greedy, record=False,
                           seeds=[seed + k for k in range(episodes)])
    spans = [r.makespan for r in res if r.makespan is not None]
    row = {
        "success_rate": float(np.mean([r.success for r in res])),
        "mean_makespan": float(np.mean(spans)) if spans else None,
        "mean_steps": float(np.mean([r.steps for r in res])),
        "mean_return": float(np.mean([r.returns.mean() for r in res])),
    }
    return row, res


def _eval_score(row: dict) -> tuple:
    span = row["mean_makespan"]
    return (row["success_rate"], -(span if span is not None else np.inf), row["mean_return"])


def _snapshot(bindings: Sequence[AgentBinding]) -> list[AgentBinding]:
    return [AgentBinding(b.agent_id, b.nets.copy(), b.action_space) for b in bindings]


def train(env_factory: Callable, bindings: list[AgentBinding], ppo_config: PPOConfig,
          schedule: TrainSchedule) -> TrainResult:
    """Alternate batched episode collection with per-agent PPO updates.

    All randomness derives from ``schedule.seed``.
    """
    sampling_ss, shuffle_ss, env_ss = np.random.SeedSequence(schedule.seed).spawn(3)
    sample_rng = np.random.default_rng(sampling_ss)
    shuffle_rngs = [np.random.default_rng(s) for s in shuffle_ss.spawn(len(bindings))]
    env_seed_rng = np.random.default_rng(env_ss)
    curve, evals, logs = [], [], []
    best, best_row = None, None
    done = 0
    next_eval = schedule.eval_every if schedule.eval_every > 0 else None
    while done < schedule.episodes:
        k = min(schedule.envs_per_update, schedule.episodes - done)
        envs = [env_factory() for _ in range(k)]
        env_seeds = [int(s) for s in env_seed_rng.integers(0, 2**31 - 1, size=k)]
        results = collect_episodes(envs, bindings, sample_rng, seeds=env_seeds,
                                   decisions_only=ppo_config.decisions_only)
        for j, r in enumerate(results):
            for i in range(len(bindings)):
                curve.append({"episode": done + j + 1, "agent_id": i, "return": float(r.returns[i]),
                              "episode_steps": r.steps, "success_flag": int(r.success),
                              "makespan": "" if r.makespan is None else r.makespan})
        done += k
        for i, b in enumerate(bindings):
            parts = []
            for r in results:
                t = r.trajectories[i]
                if ppo_config.decisions_only:
                    t = t.decisions(ppo_config.gamma, ppo_config.lambda_gae)
                else:
                    t.compute_advantages(ppo_config.gamma, ppo_config.lambda_gae)
                parts.append(t)
            batch = TrajectoryBatch()
            for t in parts:
                batch.extend(t)
            if len(batch) == 0:
                continue
            batch.advantages = np.concatenate([t.advantages for t in parts])
            batch.value_targets = np.concatenate([t.value_targets for t in parts])
            stats = ppo_update(b.nets, batch, ppo_config, shuffle_rngs[i])
            logs.append({"episode": done, "agent_id": i, "policy_loss": stats.policy_loss,
                         "value_loss": stats.value_loss, "entropy": stats.entropy,
                         "clip_fraction": stats.clip_fraction,
                         "mean_return": float(np.mean([r.returns[i] for r in results]))})
        if next_eval is not None and (done >= next_eval or done >= schedule.episodes):
            while next_eval <= done:
                next_eval += schedule.eval_every
            row, _ = evaluate(env_factory, bindings, schedule.eval_episodes, seed=schedule.seed)
            row = {"episode": done, **row}
            evals.append(row)
            log.info("episode %d eval %s", done, row)
            if schedule.keep_best and (best_row is None or _eval_score(row) > _eval_score(best_row)):
                best, best_row = _snapshot(bindings), row
            if schedule.stop_success is not None and row["success_rate"] >= schedule.stop_success:
                break
    return TrainResult(curve, evals, logs, bindings, best, best_row, done)


def save_checkpoint(bindings: Sequence[AgentBinding], directory) -> None:
    """One text file per agent and component plus ``agents.json`` metadata."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = []
    for b in bindings:
        for name, params in b.nets.components().items():
            save_params(params, d / f"agent{b.agent_id}_{name}.txt")
        meta.append({"agent_id": b.agent_id, "action_space": b.action_space,
                     "rounds": b.nets.encoder.rounds if b.nets.encoder else None,
                     "readout_nodes": list(b.nets.readout_nodes)})
    (d / "agents.json").write_text(json.dumps(meta, indent=1) + "\n")


def load_checkpoint(directory, env=None) -> list[AgentBinding]:
    from .message_passing import EncoderParams

    d = Path(directory)
    meta = json.loads((d / "agents.json").read_text())
    out = []
    for m in meta:
        i = m["agent_id"]
        comp = {name: load_params(d / f"agent{i}_{name}.txt") for name in ("policy", "value", "message", "update")
                if (d / f"agent{i}_{name}.txt").exists()}
        encoder = EncoderParams(comp["message"], comp["update"], m["rounds"]) if "message" in comp else None
        nets = AgentNets(comp["policy"], comp["value"], m["action_space"], encoder, tuple(m["readout_nodes"]))
        if env is not None:
            if env.action_sizes[i] != nets.action_count:
                raise ValueError(f"agent{i}_policy: action width {nets.action_count} != environment {env.action_sizes[i]}")
            if encoder is not None and encoder.node_dim != env.node_dim:
                raise ValueError(f"agent{i}_update: node width {encoder.node_dim} != environment {env.node_dim}")
            if encoder is not None and encoder.edge_dim != env.edge_dim:
                raise ValueError(f"agent{i}_message: edge width {encoder.edge_dim} != environment {env.edge_dim}")
        out.append(AgentBinding(i, nets, m["action_space"]))
    return out
