"""Dispatching-rule baselines, an exhaustive mini-instance oracle, and run comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .envs import imm as imm_mod
from .envs.imm import ImmConfig, ImmEnv, ImmInstance
from .envs.rmc import RmcEnv, piece_totals


class DispatchRule(str, Enum):
    FIFO = "FIFO"  # longest-waiting job first
    SPT = "SPT"  # shortest processing time at this machine first
    RANDOM = "RANDOM"  # uniform over legal jobs

    @classmethod
    def parse(cls, tag: str) -> DispatchRule:
        try:
            return cls(tag.upper())
        except ValueError:
            raise ValueError(f"unknown rule {tag!r}; valid rules: {', '.join(r.value for r in cls)}") from None


@dataclass
class RunSummary:
    policy: str
    seed: int
    makespan: int | None
    steps: int
    success: bool
    valid: bool = True


REPORT_COLUMNS = ("policy", "seed", "makespan", "steps", "success")


def select_job(rule: DispatchRule, state, instance: ImmInstance, machine: int, rng: np.random.Generator) -> int:
    """Rule decision for 0-based ``machine``; ties go to the lowest job id."""
    mask = imm_mod.legal_mask(state, instance, machine)
    jobs = np.flatnonzero(mask[:-1])
    if jobs.size == 0:
        return mask.size - 1
    if rule is DispatchRule.RANDOM:
        return int(rng.choice(jobs))
    lay = imm_mod.layout(instance)
    if rule is DispatchRule.FIFO:
        key = state.arrival[jobs]
    else:
        key = lay.times[jobs, state.stage[jobs]]
    # lexsort: last key is primary
    return int(jobs[np.lexsort((jobs, key))[0]])


def run_dispatch(env, rule: DispatchRule | str, seed: int = 0) -> RunSummary:
    """Play one episode with every decision taken by ``rule``."""
    rule = DispatchRule.parse(rule) if isinstance(rule, str) else rule
    rng = np.random.default_rng(seed)
    env.reset(seed)
    if isinstance(env, ImmEnv):
        done = False
        while not done:
            joint = [select_job(rule, env.state, env.instance, k, rng) for k in range(env.num_agents)]
            _, _, done, _ = env.step(joint)
        report = imm_mod.validate_schedule(env.trace, env.instance)
        s = env.summary()
        return RunSummary(rule.value, seed, s["makespan"], s["steps"], s["success"], report.valid)
    if isinstance(env, RmcEnv):
        if rule is not DispatchRule.RANDOM:
            raise ValueError(f"rule {rule.value} is not defined for the robot cell; valid rules: RANDOM")
        totals = piece_totals(env.state)
        done, valid = False, True
        while not done:
            joint = [int(rng.choice(np.flatnonzero(env.legal_mask(i)))) for i in range(2)]
            _, _, done, _ = env.step(joint)
            valid &= bool(np.array_equal(piece_totals(env.state), totals))
        s = env.summary()
        return RunSummary(rule.value, seed, s["makespan"], s["steps"], s["success"], valid)
    raise TypeError(f"unsupported environment {type(env).__name__}")


@dataclass
class OptimalSchedule:
    makespan: int
    starts: list[tuple[int, int, int]]  # (tick, machine id 1-based, job id)
    branch_states: int = 0  # states with a real choice; 0 means contention-free


def brute_force_optimal(instance: ImmInstance, step_cap: int = 500, max_states: int = 2_000_000) -> OptimalSchedule:
    """Exact minimum makespan over every schedule the environment can produce.

    Branches only at ticks where some idle machine has two or more waiting
    jobs, trying every combination of choices across such machines.
    """
    lay = imm_mod.layout(instance)
    cfg = ImmConfig(max_steps=step_cap + 1, terminal_scale=0.0)
    memo: dict[tuple, tuple[float, tuple | None]] = {}

    def choices(state):
        per = []
        for k in range(lay.m):
            mask = imm_mod.legal_mask(state, instance, k)
            per.append(np.flatnonzero(mask).tolist())
        return per

    def advance(state):
        # run through ticks with no real decision
        while state.completed_at is None:
            per = choices(state)
            if any(len(c) > 1 for c in per):
                return state, per
            if state.step >= step_cap:
                return state, None
            state, *_ = imm_mod.step(state, [c[0] for c in per], instance, cfg)
        return state, None

    def solve(state) -> float:
        state, per = advance(state)
        if state.completed_at is not None:
            return state.completed_at
        if per is None:
            return math.inf
        key = state.key()
        hit = memo.get(key)
        if hit is not None:
            return state.step + hit[0]
        if len(memo) >= max_states:
            raise RuntimeError(f"state budget of {max_states} exceeded")
        best, best_joint = math.inf, None
        for joint in np.array(np.meshgrid(*per, indexing="ij")).reshape(lay.m, -1).T:
            nxt, *_ = imm_mod.step(state, joint.tolist(), instance, cfg)
            val = solve(nxt)
            if val < best:
                best, best_joint = val, tuple(joint.tolist())
        memo[key] = (best - state.step, best_joint)
        return best

    start, _ = imm_mod.reset(instance)
    best = solve(start)
    if not math.isfinite(best) or best > step_cap:
        raise RuntimeError(f"no schedule completes within the step cap of {step_cap}")
    # replay the stored decisions to recover the schedule
    state, starts = start, []
    while state.completed_at is None:
        per = choices(state)
        if any(len(c) > 1 for c in per):
            joint = list(memo[state.key()][1])
        else:
            joint = [c[0] for c in per]
        state, _, _, info = imm_mod.step(state, joint, instance, cfg)
        starts.extend((state.step, k + 1, j) for k, j in enumerate(joint) if j != lay.noop)
    return OptimalSchedule(int(best), starts, len(memo))


def compare(runs: Sequence[RunSummary]) -> list[dict]:
    """Per-policy aggregate rows, sorted by policy name."""
    if not runs:
        raise ValueError("compare needs at least one run")
    rows = []
    for policy in sorted({r.policy for r in runs}):
        rs = [r for r in runs if r.policy == policy]
        spans = sorted(r.makespan for r in rs if r.makespan is not None)
        rows.append({
            "policy": policy,
            "runs": len(rs),
            "mean_makespan": math.fsum(spans) / len(spans) if spans else None,
            "min_makespan": spans[0] if spans else None,
            "max_makespan": spans[-1] if spans else None,
            "success_rate": sum(r.success for r in rs) / len(rs),
        })
    return rows


def write_report(runs: Sequence[RunSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in runs:
            w.writerow([r.policy, r.seed, "" if r.makespan is None else r.makespan, r.steps, int(r.success)])


def write_comparison(rows: Sequence[dict], path) -> None:
    cols = ["policy", "runs", "mean_makespan", "min_makespan", "max_makespan", "success_rate"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in cols})


def generate_mini_instance(seed: int, max_jobs: int = 3, max_machines: int = 3, low: int = 1, high: int = 6) -> ImmInstance:
    """Random instance with at most ``max_jobs`` jobs and ``max_machines`` machines;
    each job visits a random non-empty ordered subset of machines."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, max_machines + 1))
    n = int(rng.integers(1, max_jobs + 1))
    jobs = []
    for j in range(n):
        k = int(rng.integers(1, m + 1))
        seq = tuple(int(x) + 1 for x in rng.permutation(m)[:k])
        times = tuple(int(t) for t in rng.integers(low, high + 1, size=k))
        jobs.append(imm_mod.JobSpec(j, seq, times))
    return ImmInstance(tuple(jobs), m, seed)
