from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphsched.message_passing import init_encoder
from graphsched.nn import DenseNetParams
from graphsched.ppo import (
    AgentNets,
    PPOConfig,
    TrajectoryBatch,
    Transition,
    _categorical,
    apply_grads,
    discounted_returns,
    gae_advantages,
    make_agent_nets,
    masked_log_softmax,
    normalize_advantages,
    policy_step,
    ppo_loss,
    ppo_update,
)

from conftest import random_graph


# --- sampling -------------------------------------------------------------

def test_single_legal_action_is_forced(rng):
    nets = make_agent_nets(3, 4, (5,), seed=0)
    mask = np.array([[False, False, True, False]])
    a, logp = policy_step(nets, rng.standard_normal((1, 3)), mask, rng)
    assert a[0] == 2 and logp[0] == 0.0


def test_uniform_sampling_frequencies():
    logp = np.log(np.full((100_000, 4), 0.25))
    a = _categorical(logp, np.random.default_rng(0))
    freq = np.bincount(a, minlength=4) / a.size
    assert np.all(np.abs(freq - 0.25) <= 0.01)


def test_masked_actions_never_sampled():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((50_000, 5)) * 3
    mask = np.array([True, False, True, False, True])
    a = _categorical(masked_log_softmax(logits, np.broadcast_to(mask, logits.shape)), rng)
    assert mask[a].all()


def test_all_false_mask_raises():
    with pytest.raises(ValueError):
        masked_log_softmax(np.zeros((1, 3)), np.zeros((1, 3), dtype=bool))


# --- returns and advantages -----------------------------------------------

def test_discounted_returns_examples():
    assert np.allclose(discounted_returns([1, 1, 1], [0, 0, 0], 0.5), [1.75, 1.5, 1.0])
    assert np.array_equal(discounted_returns([3, -1, 2], [0, 0, 0], 0.0), [3, -1, 2])
    assert np.array_equal(discounted_returns([1, 1], [1, 0], 0.9), [1, 1])


def test_gae_lambda_zero_is_td_error(rng):
    r, v = rng.standard_normal(6), rng.standard_normal(7)
    adv, _ = gae_advantages(r, v, np.zeros(6, bool), 0.9, 0.0)
    assert np.allclose(adv, r + 0.9 * v[1:] - v[:-1], atol=1e-14)


def test_gae_lambda_one_zero_values_is_returns(rng):
    r = rng.standard_normal(6)
    d = np.array([0, 0, 1, 0, 0, 0], bool)
    adv, _ = gae_advantages(r, np.zeros(7), d, 0.95, 1.0)
    assert np.allclose(adv, discounted_returns(r, d, 0.95), atol=1e-14)


def brute_force_gae(r, v, d, gamma, lam):
    """A_t = sum_l (gamma*lam)^l delta_{t+l}, truncated at the first done."""
    T = len(r)
    out = np.zeros(T)
    for t in range(T):
        total = 0.0
        for l in range(T - t):
            k = t + l
            nxt = 0.0 if d[k] else v[k + 1]
            delta = r[k] + gamma * nxt - v[k]
            total += (gamma * lam) ** l * delta
            if d[k]:
                break
        out[t] = total
    return out


@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_gae_matches_double_sum(seed, gamma, lam):
    rng = np.random.default_rng(seed)
    r, v = rng.standard_normal(5), rng.standard_normal(6)
    d = rng.random(5) < 0.3
    adv, targets = gae_advantages(r, v, d, gamma, lam)
    assert np.allclose(adv, brute_force_gae(r, v, d, gamma, lam), atol=1e-12)
    assert np.allclose(targets, adv + v[:-1])


def test_gae_rejects_bad_lengths():
    with pytest.raises(ValueError):
        gae_advantages([1, 2], [0, 0], [0, 0], 0.9, 0.9)


def test_normalization_guard():
    assert np.array_equal(normalize_advantages(np.full(4, 3.0)), np.full(4, 3.0))
    n = normalize_advantages(np.array([1.0, 2.0, 3.0]))
    assert abs(n.mean()) < 1e-15 and abs(n.std() - 1) < 1e-12


# --- decision-only view ---------------------------------------------------

def _batch(rewards, masks, dones):
    b = TrajectoryBatch()
    for t, (r, m, d) in enumerate(zip(rewards, masks, dones)):
        m = np.asarray(m, bool)
        b.append(Transition(np.zeros(1), int(np.flatnonzero(m)[0]), 0.0, r, float(t), d, m))
    return b


def test_decisions_fold_forced_ticks():
    both, one = [True, True], [True, False]
    b = _batch([1.0, 2.0, 4.0, 8.0], [both, one, one, both], [0, 0, 0, 1])
    d = b.decisions(0.5, 1.0)
    assert len(d) == 2
    assert d.rewards == [1.0 + 0.5 * 2.0 + 0.25 * 4.0, 8.0]
    assert d.dones == [False, True]
    # A_0 = r0' + gamma^3 * v(3) - v(0) + gamma^3 * A_1 with lambda 1
    a1 = 8.0 - 3.0
    assert d.advantages[1] == pytest.approx(a1)
    assert d.advantages[0] == pytest.approx(3.0 + 0.125 * 3.0 - 0.0 + 0.125 * a1)


def test_decisions_drop_rewards_before_first_decision():
    both, one = [True, True], [True, False]
    d = _batch([5.0, 1.0], [one, both], [0, 1]).decisions(0.9, 0.9)
    assert d.rewards == [1.0]


# --- loss -----------------------------------------------------------------

def linear_nets(W: np.ndarray, u: np.ndarray) -> AgentNets:
    pol = DenseNetParams([W.shape[1], 2], "identity", [W.copy()], [np.zeros(2)])
    val = DenseNetParams([W.shape[1], 1], "identity", [u.copy()[None, :]], [np.zeros(1)])
    return AgentNets(pol, val, 2)


def test_hand_derived_update_two_action_linear():
    W = np.array([[0.3, -0.2], [0.1, 0.4]])
    u = np.array([0.5, -0.5])
    x = np.array([1.0, 2.0])
    nets = linear_nets(W, u)
    cfg = PPOConfig(entropy_coef=0.0, value_coef=0.5, lr=0.1)
    z = W @ x
    p = np.exp(z) / np.exp(z).sum()
    a, A, target = 1, 1.5, 2.0
    old = np.log(p[a])
    terms, grads = ppo_loss(nets, x[None], [a], [[True, True]], [old], [A], [target], cfg)
    # ratio 1: dL/dW = -A (onehot(a) - p) x^T ; dL/du = 2 * 0.5 * (u.x - target) x
    gW = -A * np.outer(np.eye(2)[a] - p, x)
    gu = (u @ x - target) * x
    assert np.allclose(grads["policy"].weights[0], gW, atol=1e-12)
    assert np.allclose(grads["value"].weights[0][0], gu, atol=1e-12)
    apply_grads(nets, grads, 0.1, mode="sgd")
    assert np.allclose(nets.policy_net.weights[0], W - 0.1 * gW, atol=1e-6)
    assert np.allclose(nets.value_net.weights[0][0], u - 0.1 * gu, atol=1e-6)
    assert terms.policy_loss == pytest.approx(-A)


def test_ratio_one_equals_vanilla_policy_gradient(rng):
    nets = make_agent_nets(3, 4, (5,), seed=2)
    X = rng.standard_normal((6, 3))
    masks = np.ones((6, 4), bool)
    actions = rng.integers(0, 4, 6)
    from graphsched.nn import forward

    logp = masked_log_softmax(forward(nets.policy_net, X)[0], masks)[np.arange(6), actions]
    A = rng.standard_normal(6)
    terms, _ = ppo_loss(nets, X, actions, masks, logp, A, np.zeros(6), PPOConfig())
    assert terms.policy_loss == pytest.approx(float(np.mean(-A)))
    assert terms.clip_fraction == 0.0


def test_zero_advantages_leave_only_value_and_entropy(rng):
    nets = make_agent_nets(3, 4, (5,), seed=2)
    X = rng.standard_normal((5, 3))
    cfg = PPOConfig(entropy_coef=0.0)
    terms, grads = ppo_loss(nets, X, np.zeros(5, int), np.ones((5, 4), bool),
                            np.full(5, -1.0), normalize_advantages(np.zeros(5)), np.ones(5), cfg)
    assert terms.policy_loss == 0.0
    assert all(not a.any() for _, a in grads["policy"].blocks())


def _total_loss(nets, *args):
    return ppo_loss(nets, *args)[0].total


@pytest.mark.parametrize("use_encoder", [False, True])
def test_loss_gradient_matches_finite_differences(use_encoder):
    rng = np.random.default_rng(11)
    cfg = PPOConfig(entropy_coef=0.05, clip_eps=0.2)
    B, n_act = 4, 3
    if use_encoder:
        enc = init_encoder(2, 1, 3, (4,), "tanh", 2, 0)
        graphs = [random_graph(rng, 4, 2, 1) for _ in range(B)]
        nodes = (0,)
        nets = make_agent_nets(2, n_act, (4,), seed=1, encoder=enc, readout_nodes=nodes)
        obs = graphs
    else:
        nets = make_agent_nets(3, n_act, (4,), seed=1)
        obs = rng.standard_normal((B, 3))
    nets.policy_net.weights[-1] *= 100  # leave the near-uniform init
    masks = np.array([[1, 1, 1], [1, 0, 1], [0, 1, 1], [1, 1, 0]], bool)
    actions = np.array([0, 2, 1, 1])
    # old log-probs spread the ratios across both clip branches, away from the kinks
    old = np.log(np.array([0.2, 0.5, 0.3, 0.6]))
    A = np.array([1.0, -0.7, 0.4, -1.2])
    targets = rng.standard_normal(B)
    args = (obs, actions, masks, old, A, targets, cfg)
    _, grads = ppo_loss(nets, *args)
    h = 1e-6
    for name, params in nets.components().items():
        for (bname, block), (_, g) in zip(params.blocks(), grads[name].blocks()):
            flat = block.reshape(-1)
            for i in range(flat.size):
                o = flat[i]
                flat[i] = o + h
                lp = _total_loss(nets, *args)
                flat[i] = o - h
                lm = _total_loss(nets, *args)
                flat[i] = o
                num = (lp - lm) / (2 * h)
                assert abs(num - g.reshape(-1)[i]) <= 1e-6 + 1e-4 * abs(num), (name, bname, i)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_update_raises_on_nonfinite_values(rng):
    nets = make_agent_nets(2, 2, (3,), seed=0)
    b = TrajectoryBatch()
    b.append(Transition(np.array([np.inf, 0.0]), 0, 0.0, 1.0, 0.0, True, np.ones(2, bool)))
    with pytest.raises(FloatingPointError):
        ppo_update(nets, b, PPOConfig())


def test_update_rejects_empty_batch():
    with pytest.raises(ValueError):
        ppo_update(make_agent_nets(2, 2, (3,)), TrajectoryBatch(), PPOConfig())


def test_append_rejects_masked_action():
    b = TrajectoryBatch()
    with pytest.raises(ValueError):
        b.append(Transition(np.zeros(1), 1, 0.0, 0.0, 0.0, False, np.array([True, False])))


@pytest.mark.parametrize("field, value", [("gamma", 1.5), ("lr", 0.0), ("epochs", 0), ("entropy_coef", -1.0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        PPOConfig(**{field: value})
