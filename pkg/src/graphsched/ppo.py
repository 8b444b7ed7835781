"""Actor-critic PPO with masked categorical actions.

An agent owns a policy head, a value head and, optionally, a private graph
encoder. With an encoder, observations are :class:`Graph` objects and the
agent's observation vector is the concatenation of the encoded rows of its
``readout_nodes``; gradients flow back through the encoder. Without one,
observations are plain vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph, batch_graphs
from .message_passing import EncoderParams, NodeEmbeddings, encode, encoder_backward
from .nn import AdamState, DenseNetParams, GradientBundle, apply_update, backward, forward, init_dense


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    # learn only at ticks with two or more legal actions; forced ticks fold
    # their rewards into the preceding decision
    decisions_only: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.lambda_gae <= 1.0:
            raise ValueError(f"lambda_gae must lie in [0, 1], got {self.lambda_gae}")
        for name in ("clip_eps", "lr", "max_grad_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")
        if self.value_coef < 0 or self.entropy_coef < 0:
            raise ValueError("loss coefficients must be non-negative")


@dataclass
class AgentNets:
    policy_net: DenseNetParams
    value_net: DenseNetParams
    action_count: int
    encoder: EncoderParams | None = None
    readout_nodes: tuple[int, ...] = ()
    opt: dict[str, AdamState] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.policy_net.out_dim != self.action_count:
            raise ValueError(f"policy output width {self.policy_net.out_dim} != action_count {self.action_count}")
        if self.value_net.out_dim != 1:
            raise ValueError("value_net must have a single output")
        if self.value_net.in_dim != self.policy_net.in_dim:
            raise ValueError("policy and value heads must read the same observation width")
        if self.encoder is not None:
            want = len(self.readout_nodes) * self.encoder.node_dim
            if want != self.policy_net.in_dim:
                raise ValueError(f"readout width {want} != policy input width {self.policy_net.in_dim}")
        self.readout_nodes = tuple(int(n) for n in self.readout_nodes)

    def components(self) -> dict[str, DenseNetParams]:
        out = {"policy": self.policy_net, "value": self.value_net}
        if self.encoder is not None:
            out["message"] = self.encoder.message_net
            out["update"] = self.encoder.update_net
        return out

    def set_component(self, name: str, params: DenseNetParams) -> None:
        if name == "policy":
            self.policy_net = params
        elif name == "value":
            self.value_net = params
        elif name == "message":
            self.encoder.message_net = params
        elif name == "update":
            self.encoder.update_net = params
        else:
            raise KeyError(name)

    def copy(self) -> AgentNets:
        return AgentNets(self.policy_net.copy(), self.value_net.copy(), self.action_count,
                         None if self.encoder is None else self.encoder.copy(), self.readout_nodes)


def make_agent_nets(
    obs_dim: int,
    action_count: int,
    hidden: Sequence[int] = (64, 64),
    activation: str = "tanh",
    seed: int = 0,
    encoder: EncoderParams | None = None,
    readout_nodes: Sequence[int] = (),
) -> AgentNets:
    s = np.random.SeedSequence(seed).generate_state(2)
    policy = init_dense([obs_dim, *hidden, action_count], activation, int(s[0]))
    # small final policy layer keeps the initial policy near uniform
    policy.weights[-1] *= 0.01
    value = init_dense([obs_dim, *hidden, 1], activation, int(s[1]))
    return AgentNets(policy, value, action_count, encoder, tuple(readout_nodes))


@dataclass
class Observation:
    """Encoded observations plus what is needed to backpropagate into the encoder."""

    x: np.ndarray  # (B, obs_dim)
    union: Graph | None = None
    embeddings: NodeEmbeddings | None = None
    rows: np.ndarray | None = None  # (B, len(readout_nodes)) union node ids


def observe(nets: AgentNets, observations, keep_cache: bool = False) -> Observation:
    if nets.encoder is None:
        x = np.asarray(observations, dtype=np.float64)
        return Observation(x[None, :] if x.ndim == 1 else x)
    graphs = [observations] if isinstance(observations, Graph) else list(observations)
    union, offsets = batch_graphs(graphs)
    emb = encode(union, nets.encoder, keep_cache=keep_cache)
    rows = offsets[:, None] + np.asarray(nets.readout_nodes, dtype=np.int64)[None, :]
    x = emb.H[rows].reshape(len(graphs), -1)
    return Observation(x, union, emb, rows)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities with illegal entries at ``-inf``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("action mask has no legal entry")
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    with np.errstate(divide="ignore"):
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def _categorical(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.exp(logp)
    c = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[0]) * c[:, -1]
    a = (c <= u[:, None]).sum(axis=-1)
    # guard against landing on a trailing masked entry through rounding
    a = np.minimum(a, p.shape[1] - 1)
    bad = p[np.arange(len(a)), a] == 0.0
    if bad.any():
        a[bad] = np.argmax(p[bad], axis=-1)
    return a


def policy_step(nets: AgentNets, observations, masks, rng: np.random.Generator | None, greedy: bool = False):
    """Batched action selection. Returns ``(actions, log_probs)``."""
    obs = observe(nets, observations)
    logits, _ = forward(nets.policy_net, obs.x)
    logp = masked_log_softmax(logits, np.asarray(masks).reshape(logits.shape))
    if greedy:
        a = np.argmax(logp, axis=-1)
    else:
        a = _categorical(logp, rng)
    return a, logp[np.arange(len(a)), a]


def values(nets: AgentNets, observations, chunk: int = 512) -> np.ndarray:
    obs_list = observations if isinstance(observations, list) else list(observations)
    out = []
    for i in range(0, len(obs_list), chunk):
        part = obs_list[i:i + chunk]
        if nets.encoder is None:
            part = np.asarray(part)
        x = observe(nets, part).x
        out.append(forward(nets.value_net, x)[0][:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def sample_action(nets: AgentNets, observation, mask, rng: np.random.Generator) -> tuple[int, float, float]:
    """Sample one action under ``mask``; returns ``(action, log_prob, value)``."""
    obs = observe(nets, observation)
    logits, _ = forward(nets.policy_net, obs.x)
    logp = masked_log_softmax(logits, np.asarray(mask, dtype=bool)[None, :])
    a = int(_categorical(logp, rng)[0])
    v = float(forward(nets.value_net, obs.x)[0][0, 0])
    return a, float(logp[0, a]), v


def discounted_returns(rewards, dones, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != dones.shape:
        raise ValueError("rewards and dones differ in length")
    out = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae_advantages(rewards, values, dones, gamma: float, lambda_gae: float,
                   discounts=None) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates.

    ``values`` has one more entry than ``rewards``: the bootstrap value of the
    state after the last transition (ignored when that transition is done).
    ``discounts`` optionally replaces ``gamma`` per transition, for steps that
    span several ticks.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if v.shape != (r.size + 1,) or d.shape != r.shape:
        raise ValueError(f"need len(values) == len(rewards) + 1 == len(dones) + 1, got {v.size}, {r.size}, {d.size}")
    g = np.full(r.shape, float(gamma)) if discounts is None else np.asarray(discounts, dtype=np.float64)
    adv = np.zeros_like(r)
    nonterminal = 1.0 - d.astype(np.float64)
    running = 0.0
    for t in range(r.size - 1, -1, -1):
        delta = r[t] + g[t] * v[t + 1] * nonterminal[t] - v[t]
        running = delta + g[t] * lambda_gae * nonterminal[t] * running
        adv[t] = running
    return adv, adv + v[:-1]


@dataclass
class Transition:
    observation: object
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool
    action_mask: np.ndarray


@dataclass
class TrajectoryBatch:
    observations: list = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)

    def append(self, t: Transition) -> None:
        if not t.action_mask[t.action]:
            raise ValueError(f"action {t.action} is masked out")
        self.observations.append(t.observation)
        self.actions.append(int(t.action))
        self.log_probs.append(float(t.log_prob))
        self.rewards.append(float(t.reward))
        self.values.append(float(t.value))
        self.dones.append(bool(t.done))
        self.masks.append(np.asarray(t.action_mask, dtype=bool))

    def extend(self, other: TrajectoryBatch) -> None:
        for name in ("observations", "actions", "log_probs", "rewards", "values", "dones", "masks"):
            getattr(self, name).extend(getattr(other, name))
        self.advantages = self.value_targets = None

    def compute_advantages(self, gamma: float, lambda_gae: float, bootstrap: float = 0.0) -> None:
        v = np.append(np.asarray(self.values, dtype=np.float64), bootstrap)
        self.advantages, self.value_targets = gae_advantages(self.rewards, v, self.dones, gamma, lambda_gae)

    def decision_mask(self) -> np.ndarray:
        return np.array([m.sum() > 1 for m in self.masks], dtype=bool)

    def decisions(self, gamma: float, lambda_gae: float) -> TrajectoryBatch:
        """Batch of decision ticks only, with advantages already computed.

        Rewards from the ticks that follow a decision, up to the next decision
        or the end of the episode, are discounted into that decision's reward;
        the step discount becomes ``gamma ** ticks``. Rewards before an
        episode's first decision belong to no decision and are dropped.
        """
        idx = np.flatnonzero(self.decision_mask())
        out = TrajectoryBatch()
        if idx.size == 0:
            out.advantages = out.value_targets = np.zeros(0)
            return out
        rewards, discounts, dones = [], [], []
        bounds = np.append(idx, len(self))
        for t0, t1 in zip(bounds[:-1], bounds[1:]):
            total, g, done = 0.0, 1.0, False
            for t in range(t0, t1):
                total += g * self.rewards[t]
                g *= gamma
                if self.dones[t]:
                    done = True
                    break
            rewards.append(total)
            discounts.append(g)
            dones.append(done)
        for k, t in enumerate(idx):
            out.observations.append(self.observations[t])
            out.actions.append(self.actions[t])
            out.log_probs.append(self.log_probs[t])
            out.values.append(self.values[t])
            out.masks.append(self.masks[t])
        out.rewards, out.dones = rewards, dones
        v = np.append(np.asarray(out.values, dtype=np.float64), 0.0)
        out.advantages, out.value_targets = gae_advantages(rewards, v, dones, gamma, lambda_gae, discounts)
        return out


@dataclass
class LossTerms:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    total: float


def ppo_loss(nets: AgentNets, observations, actions, masks, old_log_probs, advantages, value_targets,
             config: PPOConfig) -> tuple[LossTerms, dict[str, GradientBundle]]:
    """Minibatch PPO loss and its gradients for every component of ``nets``.

    loss = mean(-min(r*A, clip(r)*A)) + value_coef*mean((v - target)^2) - entropy_coef*mean(H)
    """
    actions = np.asarray(actions, dtype=np.int64)
    masks = np.asarray(masks, dtype=bool)
    old = np.asarray(old_log_probs, dtype=np.float64)
    A = np.asarray(advantages, dtype=np.float64)
    target = np.asarray(value_targets, dtype=np.float64)
    B = actions.size
    rows = np.arange(B)

    obs = observe(nets, observations, keep_cache=nets.encoder is not None)
    logits, pcache = forward(nets.policy_net, obs.x)
    v_out, vcache = forward(nets.value_net, obs.x)
    v = v_out[:, 0]

    logp_all = masked_log_softmax(logits, masks)
    p = np.exp(logp_all)
    plogp = np.where(masks, p * np.where(masks, logp_all, 0.0), 0.0)
    ent = -plogp.sum(axis=1)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old)
    clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)
    surr1, surr2 = ratio * A, clipped * A
    unclipped_active = surr1 <= surr2
    policy_loss = float(-np.minimum(surr1, surr2).mean())
    value_loss = float(((v - target) ** 2).mean())
    entropy = float(ent.mean())
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    terms = LossTerms(policy_loss, value_loss, entropy,
                      float((np.abs(ratio - 1.0) > config.clip_eps).mean()),
                      float((old - logp).mean()), total)
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite PPO loss: policy={policy_loss} value={value_loss} entropy={entropy} "
            f"max|logit|={np.abs(logits).max()} max|v|={np.abs(v).max()}"
        )

    # d loss / d logp for the taken action
    g_logp = np.where(unclipped_active, -ratio * A, 0.0) / B
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    g_logits = g_logp[:, None] * (onehot - p)
    # d H / d z_k = -p_k (log p_k + H), zero on masked entries
    dH = -(plogp + p * ent[:, None])
    g_logits -= (config.entropy_coef / B) * dH
    g_v = (2.0 * config.value_coef / B) * (v - target)

    gp = backward(nets.policy_net, pcache, g_logits)
    gv = backward(nets.value_net, vcache, g_v[:, None])
    grads = {"policy": gp, "value": gv}
    if nets.encoder is not None:
        g_x = gp.input + gv.input
        G = np.zeros_like(obs.embeddings.H)
        np.add.at(G, obs.rows.reshape(-1), g_x.reshape(-1, nets.encoder.node_dim))
        eg = encoder_backward(obs.union, nets.encoder, obs.embeddings, G)
        grads["message"] = eg.message
        grads["update"] = eg.update
    return terms, grads


def clip_grad_norm(grads: dict[str, GradientBundle], max_norm: float) -> float:
    norm = float(np.sqrt(sum(g.sq_norm() for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g.scale_(scale)
    return norm


def apply_grads(nets: AgentNets, grads: dict[str, GradientBundle], lr: float, mode: str = "adam") -> None:
    for name, g in grads.items():
        params = nets.components()[name]
        new, state = apply_update(params, g, nets.opt.get(name), lr, mode)
        nets.set_component(name, new)
        if state is not None:
            nets.opt[name] = state


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    var = adv.var()
    if adv.size < 2 or var < 1e-8:
        return adv.copy()
    return (adv - adv.mean()) / np.sqrt(var)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float
    clip_fraction_per_epoch: list[float]
    minibatches: int


def ppo_update(nets: AgentNets, batch: TrajectoryBatch, config: PPOConfig,
               rng: np.random.Generator | None = None) -> UpdateStats:
    """Run ``config.epochs`` passes of shuffled minibatch PPO on ``batch`` in place."""
    n = len(batch)
    if n == 0:
        raise ValueError("empty trajectory batch")
    if batch.advantages is None:
        batch.compute_advantages(config.gamma, config.lambda_gae)
    rng = rng if rng is not None else np.random.default_rng(0)
    adv = normalize_advantages(batch.advantages)
    targets = np.asarray(batch.value_targets)
    actions = np.asarray(batch.actions)
    old = np.asarray(batch.log_probs)
    masks = np.asarray(batch.masks)
    obs_is_graph = nets.encoder is not None
    obs_arr = None if obs_is_graph else np.asarray(batch.observations, dtype=np.float64)

    sums = np.zeros(6)
    count = 0
    per_epoch = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        clip_sum, clip_n = 0.0, 0
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            obs = [batch.observations[i] for i in idx] if obs_is_graph else obs_arr[idx]
            terms, grads = ppo_loss(nets, obs, actions[idx], masks[idx], old[idx], adv[idx], targets[idx], config)
            norm = clip_grad_norm(grads, config.max_grad_norm)
            apply_grads(nets, grads, config.lr)
            sums += (terms.policy_loss, terms.value_loss, terms.entropy, terms.clip_fraction, terms.approx_kl, norm)
            count += 1
            clip_sum += terms.clip_fraction * idx.size
            clip_n += idx.size
        per_epoch.append(clip_sum / clip_n)
    m = sums / count
    return UpdateStats(*(float(x) for x in m), per_epoch, count)
