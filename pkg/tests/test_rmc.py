from __future__ import annotations

import numpy as np
import pytest

from graphsched.envs import rmc
from graphsched.envs.rmc import RmcConfig, RmcEnv


def bfs_makespan(cfg: RmcConfig) -> int:
    """Fewest steps to meet both targets, by breadth-first search over joint actions."""
    s, _ = rmc.reset(cfg)
    if s.completed_at is not None:
        return 0
    frontier, seen, depth = [s], {s.key()}, 0
    while frontier:
        depth += 1
        nxt = []
        for st in frontier:
            for a in np.flatnonzero(rmc.legal_mask(st, 0)):
                for b in np.flatnonzero(rmc.legal_mask(st, 1)):
                    n, _, _, info = rmc.step(st, [a, b], cfg)
                    if info.success:
                        return depth
                    if n.key() not in seen:
                        seen.add(n.key())
                        nxt.append(n)
        frontier = nxt
    raise AssertionError("targets unreachable")


def random_rollout(cfg: RmcConfig, steps: int, seed: int):
    rng = np.random.default_rng(seed)
    env = RmcEnv(cfg)
    env.reset(seed)
    yield env.state
    for _ in range(steps):
        joint = [int(rng.choice(np.flatnonzero(env.legal_mask(i)))) for i in range(2)]
        _, _, done, _ = env.step(joint)
        yield env.state
        if done:
            return


def test_initial_graph():
    env = RmcEnv()
    g = env.reset(0)
    assert (g.num_nodes, g.num_edges) == (9, 14)
    assert np.array_equal(g.node_features[rmc.IB1], [20, 0, 1, 0])
    assert env.num_agents == 2 and env.action_sizes == [128, 128]


def test_routes_and_flags():
    assert [rmc.NODE_NAMES[n] for n in rmc.ROUTES[0]] == ["IB1", "M1", "MB1", "M2", "MB2", "M3", "MB3", "OB"]
    assert [rmc.NODE_NAMES[n] for n in rmc.ROUTES[1]] == ["IB2", "M2", "MB2", "M3", "MB3", "M1", "MB1", "OB"]
    for n in rmc.MACHINES:
        assert tuple(rmc.NODE_FLAGS[n]) == (1, 0)
    for n in (rmc.MB1, rmc.MB2, rmc.MB3, rmc.OB):
        assert tuple(rmc.NODE_FLAGS[n]) == (0, 1)
    assert tuple(rmc.NODE_FLAGS[rmc.IB1]) == (1, 0)
    assert np.array_equal(rmc.EDGE_ATTRS.sum(axis=1), np.ones(14))
    assert rmc.EDGE_ATTRS[:7, 0].all() and rmc.EDGE_ATTRS[7:, 1].all()


def test_zero_targets_terminal_immediately():
    env = RmcEnv(RmcConfig(target_wp1=0, target_wp2=0))
    env.reset(0)
    _, _, done, _ = env.step([0, 0])
    assert done and env.state.step == 1
    assert env.summary()["makespan"] == 0


def test_initial_mask_by_enumeration():
    state, _ = rmc.reset(RmcConfig())
    for agent in range(2):
        legal = set()
        for a in range(128):
            edges = [rmc.ROUTE_EDGES[agent][k] for k in range(7) if (a >> k) & 1]
            # the only occupied sender at reset is the input station
            if all(s == rmc.ROUTES[agent][0] for s, _ in edges):
                legal.add(a)
        assert legal == {0, 1}
        assert set(np.flatnonzero(rmc.legal_mask(state, agent))) == legal


def test_empty_floor_only_noop():
    cfg = RmcConfig(target_wp1=1, target_wp2=1)
    state, _ = rmc.reset(cfg)
    state.counts[:] = 0
    state.counts[rmc.OB] = [1, 0]
    for agent in range(2):
        assert np.flatnonzero(rmc.legal_mask(state, agent)).tolist() == [0]


def test_mask_never_empty_on_rollout():
    for s in random_rollout(RmcConfig(), 300, 4):
        assert rmc.legal_mask(s, 0)[0] and rmc.legal_mask(s, 1)[0]


def test_noop_step():
    state, _ = rmc.reset(RmcConfig())
    nxt, r, done, _ = rmc.step(state, [0, 0], RmcConfig())
    assert np.array_equal(nxt.counts, state.counts) and np.array_equal(nxt.timers, state.timers)
    assert nxt.step == 1 and not done
    assert np.allclose(r, [-0.01, -0.01])


def test_final_delivery_reward():
    cfg = RmcConfig()
    state, _ = rmc.reset(cfg)
    state.counts[:] = 0
    state.counts[rmc.OB, 0] = 19
    state.counts[rmc.MB3, 0] = 1
    state.counts[rmc.IB2, 1] = 20
    a = 1 << 6  # MB3 -> OB is the last WP1 edge
    _, r, done, info = rmc.step(state, [a, 0], cfg)
    assert r[0] == pytest.approx(1.0 - 0.01 + 10.0)
    assert r[1] == pytest.approx(-0.01)
    assert info.delivered == (1, 0) and not done


def test_illegal_action_rejected():
    state, _ = rmc.reset(RmcConfig())
    with pytest.raises(ValueError, match="agent 0"):
        rmc.step(state, [2, 0], RmcConfig())


def test_processing_time_blocks_machine():
    cfg = RmcConfig(target_wp1=2, target_wp2=0, processing_ticks=(3, 1, 1))
    s, _ = rmc.reset(cfg)
    s, *_ = rmc.step(s, [1, 0], cfg)
    assert s.timers[0] == 3
    legal = [np.flatnonzero(rmc.legal_mask(s, 0)).tolist()]
    s, *_ = rmc.step(s, [0, 0], cfg)
    assert not rmc.legal_mask(s, 0)[2]  # M1 -> MB1 not ready yet
    s, *_ = rmc.step(s, [0, 0], cfg)
    assert rmc.legal_mask(s, 0)[2]
    assert legal == [[0]]  # IB1 -> M1 blocked while M1 is occupied


def test_move_cap():
    cfg = RmcConfig(target_wp1=2, target_wp2=2, move_cap_per_tick=1)
    s, _ = rmc.reset(cfg)
    s, _, _, info = rmc.step(s, [1, 1], cfg)
    assert len(info.moves) == 1 and info.moves[0][0] == 0


def test_one_piece_makespan_matches_search():
    cfg = RmcConfig(target_wp1=1, target_wp2=0)
    assert bfs_makespan(cfg) == 7


def test_random_policy_never_beats_search():
    cfg = RmcConfig(target_wp1=2, target_wp2=2)
    best = bfs_makespan(cfg)
    for seed in range(10):
        states = list(random_rollout(cfg, 500, seed))
        assert states[-1].completed_at is not None
        assert states[-1].completed_at >= best


def test_conservation_1000_steps():
    cfg = RmcConfig(max_steps=1000)
    for s in random_rollout(cfg, 1000, 0):
        assert np.array_equal(rmc.piece_totals(s), [20, 20])
        assert (s.counts >= 0).all()
        assert all(s.counts[m].sum() <= 1 for m in rmc.MACHINES)


def test_trace_written(tmp_path):
    env = RmcEnv(RmcConfig(target_wp1=1, target_wp2=1))
    env.reset(0)
    env.step([1, 1])
    env.write_trace(tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[0].startswith("step,")
