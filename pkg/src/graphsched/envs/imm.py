"""Injection molding machines: a job shop with per-machine dispatch agents.

Node layout for ``m`` machines::

    0 IB | 1..m machines M1..Mm | m+1..2m buffers MB1..MBm | 2m+1 OB

Buffers sit in front of their machine. At reset every job is staged at IB;
jobs count as waiting in their first machine's buffer for dispatch purposes
and physically move there at the end of the first tick.

Machine agent ``k`` (0-based; machine id ``k+1``) chooses an action in
``[0, num_slots]``: a job id to load, or ``num_slots`` for no-op.

Instance file format::

    jobs=<n> machines=<m> seed=<s>
    <job_id>; <m_1>,<m_2>,...; <t_1>,<t_2>,...

Machine ids in files are 1-based and may be written ``2`` or ``M2``.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..graph import Graph, build_graph

AT_IB, IN_BUFFER, ON_MACHINE, DONE = 0, 1, 2, 3

SHIPPED_INSTANCE = Path(__file__).resolve().parent.parent / "data" / "imm_30x4.txt"
SHIPPED_SEED = 2021


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class JobSpec:
    job_id: int
    machine_sequence: tuple[int, ...]  # 1-based machine ids
    processing_times: tuple[int, ...]

    def __post_init__(self):
        if len(self.machine_sequence) != len(self.processing_times):
            raise InstanceError(f"job {self.job_id}: sequence and times differ in length")
        if not self.machine_sequence:
            raise InstanceError(f"job {self.job_id}: empty machine sequence")
        if len(set(self.machine_sequence)) != len(self.machine_sequence):
            raise InstanceError(f"job {self.job_id}: machine visited twice in {self.machine_sequence}")
        if min(self.processing_times) < 1:
            raise InstanceError(f"job {self.job_id}: processing times must be positive")

    @property
    def total_time(self) -> int:
        return sum(self.processing_times)


@dataclass(frozen=True)
class ImmInstance:
    jobs: tuple[JobSpec, ...]
    num_machines: int = 4
    seed: int | None = None

    def __post_init__(self):
        ids = [j.job_id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate job id")
        if not self.jobs:
            raise InstanceError("instance has no jobs")
        for j in self.jobs:
            if j.job_id < 0:
                raise InstanceError(f"negative job id {j.job_id}")
            if max(j.machine_sequence) > self.num_machines or min(j.machine_sequence) < 1:
                raise InstanceError(f"job {j.job_id}: machine id outside 1..{self.num_machines}")

    @property
    def num_jobs(self) -> int:
        return len(self.jobs)

    @property
    def num_slots(self) -> int:
        """Width of job one-hot vectors: largest job id + 1."""
        return max(j.job_id for j in self.jobs) + 1

    def job(self, job_id: int) -> JobSpec:
        return self._by_id[job_id]

    @property
    def _by_id(self) -> dict[int, JobSpec]:
        return {j.job_id: j for j in self.jobs}

    def machine_loads(self) -> np.ndarray:
        load = np.zeros(self.num_machines, dtype=np.int64)
        for j in self.jobs:
            for m, t in zip(j.machine_sequence, j.processing_times):
                load[m - 1] += t
        return load


_MACHINE_RE = re.compile(r"^[Mm]?(\d+)$")


def parse_instance(text: str, source: str = "<string>") -> ImmInstance:
    lines = [(n, ln.strip()) for n, ln in enumerate(text.splitlines(), 1)]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise InstanceError(f"{source}: empty instance file")
    n0, header = lines[0]
    fields = dict(kv.split("=", 1) for kv in header.split() if "=" in kv)
    try:
        n_jobs = int(fields["jobs"])
        n_machines = int(fields["machines"])
        seed = int(fields["seed"]) if "seed" in fields else None
    except (KeyError, ValueError) as exc:
        raise InstanceError(f"{source}:{n0}: bad header {header!r}") from exc
    jobs = []
    seen: set[int] = set()
    for n, ln in lines[1:]:
        parts = [p.strip() for p in ln.split(";")]
        try:
            if len(parts) != 3:
                raise InstanceError("expected 'job_id; machines; times'")
            job_id = int(parts[0])
            seq = []
            for tok in parts[1].split(","):
                m = _MACHINE_RE.match(tok.strip())
                if not m:
                    raise InstanceError(f"bad machine token {tok.strip()!r}")
                seq.append(int(m.group(1)))
            times = tuple(int(t) for t in parts[2].split(","))
            if job_id in seen:
                raise InstanceError(f"duplicate job id {job_id}")
            if sorted(seq) != list(range(1, n_machines + 1)):
                raise InstanceError(f"machine sequence {seq} is not a permutation of 1..{n_machines}")
            jobs.append(JobSpec(job_id, tuple(seq), times))
            seen.add(job_id)
        except (InstanceError, ValueError) as exc:
            raise InstanceError(f"{source}:{n}: {exc}") from exc
    if len(jobs) != n_jobs:
        raise InstanceError(f"{source}: header declares {n_jobs} jobs, found {len(jobs)}")
    return ImmInstance(tuple(jobs), n_machines, seed)


def load_instance(path) -> ImmInstance:
    path = Path(path)
    return parse_instance(path.read_text(), str(path))


def format_instance(instance: ImmInstance) -> str:
    seed = "" if instance.seed is None else f" seed={instance.seed}"
    lines = [f"jobs={instance.num_jobs} machines={instance.num_machines}{seed}"]
    for j in instance.jobs:
        lines.append(f"{j.job_id}; {','.join(map(str, j.machine_sequence))}; {','.join(map(str, j.processing_times))}")
    return "\n".join(lines) + "\n"


def save_instance(instance: ImmInstance, path) -> None:
    Path(path).write_text(format_instance(instance))


def generate_instance(
    num_jobs: int = 30,
    num_machines: int = 4,
    seed: int = SHIPPED_SEED,
    low: int = 5,
    high: int = 25,
    pin_job1: bool = True,
) -> ImmInstance:
    """Random instance: uniform machine permutations, uniform integer times in
    ``[low, high]``. With ``pin_job1`` job 1 gets sequence M2,M3,M1,M4 and
    times 14,12,20,10."""
    rng = np.random.default_rng(seed)
    jobs = []
    for j in range(num_jobs):
        seq = tuple(int(m) + 1 for m in rng.permutation(num_machines))
        times = tuple(int(t) for t in rng.integers(low, high + 1, size=num_machines))
        if pin_job1 and j == 1 and num_machines == 4:
            seq, times = (2, 3, 1, 4), (14, 12, 20, 10)
        jobs.append(JobSpec(j, seq, times))
    return ImmInstance(tuple(jobs), num_machines, seed)


def lower_bound(instance: ImmInstance) -> int:
    """max(busiest machine's total work, longest job's total work)."""
    return int(max(instance.machine_loads().max(), max(j.total_time for j in instance.jobs)))


@dataclass(frozen=True)
class ImmConfig:
    max_steps: int = 3000
    completion_bonus: float = 1.0
    step_penalty: float = 0.01
    terminal_scale: float = 50.0
    # when False a no-op is accepted even if a job could be loaded
    enforce_masks: bool = True


@dataclass
class ImmState:
    stage: np.ndarray  # (slots,) operations completed per job; -1 for unused slots
    where: np.ndarray  # (slots,) AT_IB / IN_BUFFER / ON_MACHINE / DONE
    machine_job: np.ndarray  # (m,) job on machine or -1
    machine_left: np.ndarray  # (m,) remaining ticks
    arrival: np.ndarray  # (slots,) tick the job entered its current buffer
    step: int = 0
    completed_at: int | None = None

    def copy(self) -> ImmState:
        return ImmState(self.stage.copy(), self.where.copy(), self.machine_job.copy(),
                        self.machine_left.copy(), self.arrival.copy(), self.step, self.completed_at)

    def key(self) -> tuple:
        return (self.stage.tobytes(), self.where.tobytes(), self.machine_job.tobytes(), self.machine_left.tobytes())


@dataclass
class TraceRow:
    step: int  # tick number, 1-based
    machine_id: int  # 1-based
    action: int
    loaded: int = -1
    completed: int = -1
    buffer_size: int = 0


class _Layout:
    """Per-instance lookup tables."""

    def __init__(self, instance: ImmInstance):
        self.instance = instance
        self.m = instance.num_machines
        self.slots = instance.num_slots
        self.width = max(self.slots, 2)
        self.noop = self.slots
        self.job_ids = np.array(sorted(j.job_id for j in instance.jobs), dtype=np.int64)
        self.valid = np.zeros(self.slots, dtype=bool)
        self.valid[self.job_ids] = True
        L = max(len(j.machine_sequence) for j in instance.jobs)
        self.seq = np.full((self.slots, L + 1), -1, dtype=np.int64)  # 0-based machine per stage
        self.times = np.zeros((self.slots, L + 1), dtype=np.int64)
        self.n_ops = np.zeros(self.slots, dtype=np.int64)
        for j in instance.jobs:
            n = len(j.machine_sequence)
            self.seq[j.job_id, :n] = np.array(j.machine_sequence) - 1
            self.times[j.job_id, :n] = j.processing_times
            self.n_ops[j.job_id] = n
        self.ib = 0
        self.ob = 2 * self.m + 1
        self.num_nodes = 2 * self.m + 2

    def machine_node(self, k: int) -> int:
        return 1 + k

    def buffer_node(self, k: int) -> int:
        return 1 + self.m + k


_layouts: dict[int, _Layout] = {}


def layout(instance: ImmInstance) -> _Layout:
    key = id(instance)
    lay = _layouts.get(key)
    if lay is None or lay.instance is not instance:
        lay = _layouts[key] = _Layout(instance)
    return lay


def reset(instance: ImmInstance, seed: int | None = None) -> tuple[ImmState, Graph]:
    lay = layout(instance)
    stage = np.where(lay.valid, 0, -1)
    where = np.where(lay.valid, AT_IB, DONE)
    st = ImmState(stage, where, np.full(lay.m, -1), np.zeros(lay.m, dtype=np.int64),
                  np.zeros(lay.slots, dtype=np.int64))
    return st, to_graph(st, instance)


def waiting_jobs(state: ImmState, instance: ImmInstance, machine: int) -> np.ndarray:
    """Job ids waiting for 0-based ``machine`` (IB-staged jobs count as waiting
    for their first machine)."""
    lay = layout(instance)
    cur = lay.seq[np.arange(lay.slots), np.maximum(state.stage, 0)]
    waiting = lay.valid & ((state.where == IN_BUFFER) | (state.where == AT_IB)) & (cur == machine)
    return np.flatnonzero(waiting)


def legal_mask(state: ImmState, instance: ImmInstance, machine: int) -> np.ndarray:
    """Mask of width ``num_slots + 1`` for 0-based ``machine``; last entry is no-op."""
    lay = layout(instance)
    mask = np.zeros(lay.slots + 1, dtype=bool)
    if state.machine_job[machine] < 0:
        mask[waiting_jobs(state, instance, machine)] = True
    if not mask.any():
        mask[lay.noop] = True
    return mask


def to_graph(state: ImmState, instance: ImmInstance) -> Graph:
    lay = layout(instance)
    W, m = lay.width, lay.m
    nf = np.zeros((lay.num_nodes, W))
    at_ib = np.flatnonzero(lay.valid & (state.where == AT_IB))
    if at_ib.size:
        nf[lay.ib, at_ib[0]] = 1.0
    for k in range(m):
        j = state.machine_job[k]
        if j >= 0:
            nf[lay.machine_node(k), 0] = j + 1
            nf[lay.machine_node(k), 1] = state.machine_left[k]
    senders, receivers, jobs = [], [], []
    for j in lay.job_ids:
        w = state.where[j]
        if w == DONE:
            nf[lay.ob, j] += 1.0
            continue
        s = state.stage[j]
        nxt = lay.seq[j, s]
        if w == AT_IB:
            src, dst = lay.ib, lay.buffer_node(nxt)
        elif w == IN_BUFFER:
            nf[lay.buffer_node(nxt), j] += 1.0
            src, dst = lay.buffer_node(nxt), lay.machine_node(nxt)
        else:
            k = lay.seq[j, s]
            after = lay.seq[j, s + 1] if s + 1 < lay.n_ops[j] else -1
            src = lay.machine_node(k)
            dst = lay.ob if after < 0 else lay.buffer_node(after)
        senders.append(src)
        receivers.append(dst)
        jobs.append(j)
    ea = np.zeros((len(jobs), W))
    ea[np.arange(len(jobs)), jobs] = 1.0
    ei = np.array([senders, receivers], dtype=np.int64).reshape(2, -1)
    return build_graph(nf, ei, ea)


@dataclass
class StepInfo:
    completed_ops: np.ndarray  # (m,) operations finished per machine this tick
    loaded: list[int]
    finished: list[int]
    success: bool
    rows: list[TraceRow] = field(default_factory=list)


def step(state: ImmState, joint: Sequence[int], instance: ImmInstance, config: ImmConfig):
    """Advance one tick. Returns ``(next_state, rewards, done, info)``."""
    lay = layout(instance)
    m = lay.m
    joint = [int(a) for a in joint]
    if len(joint) != m:
        raise ValueError(f"expected {m} selections, got {len(joint)}")
    for k, a in enumerate(joint):
        mask = legal_mask(state, instance, k)
        if not 0 <= a <= lay.noop:
            raise ValueError(f"machine {k + 1}: action {a} out of range")
        if a == lay.noop and not config.enforce_masks:
            continue
        if not mask[a]:
            raise ValueError(f"machine {k + 1}: action {a} is illegal in the current state")
    s = state.copy()
    tick = s.step + 1
    rows = [TraceRow(tick, k + 1, joint[k]) for k in range(m)]
    loaded = []
    for k, a in enumerate(joint):
        if a == lay.noop:
            continue
        s.machine_job[k] = a
        s.machine_left[k] = lay.times[a, s.stage[a]]
        s.where[a] = ON_MACHINE
        rows[k].loaded = a
        loaded.append(a)
    busy = s.machine_job >= 0
    s.machine_left[busy] -= 1
    completed = np.zeros(m, dtype=np.int64)
    finished = []
    for k in np.flatnonzero(busy & (s.machine_left == 0)):
        j = s.machine_job[k]
        s.machine_job[k] = -1
        s.stage[j] += 1
        completed[k] += 1
        rows[k].completed = int(j)
        if s.stage[j] >= lay.n_ops[j]:
            s.where[j] = DONE
            finished.append(int(j))
        else:
            s.where[j] = IN_BUFFER
            s.arrival[j] = tick
    staged = lay.valid & (s.where == AT_IB)
    s.where[staged] = IN_BUFFER
    s.arrival[staged] = tick - 1
    s.step = tick
    unfinished_before = bool((state.where[lay.valid] != DONE).any())
    rewards = config.completion_bonus * completed.astype(np.float64)
    if unfinished_before:
        rewards -= config.step_penalty
    success = bool((s.where[lay.valid] == DONE).all())
    if success and s.completed_at is None:
        s.completed_at = tick
        rewards += config.terminal_scale * lower_bound(instance) / tick
    for k in range(m):
        rows[k].buffer_size = int(waiting_jobs(s, instance, k).size)
    done = success or tick >= config.max_steps
    return s, rewards, done, StepInfo(completed, loaded, finished, success, rows)


def makespan(state_or_trace) -> int | None:
    """First tick with every job finished; ``None`` for an unfinished run."""
    if isinstance(state_or_trace, ImmState):
        return state_or_trace.completed_at
    return _trace_makespan(state_or_trace)


def _trace_makespan(trace: Sequence[TraceRow]) -> int | None:
    finished = [r.step for r in trace if r.completed >= 0]
    return max(finished) if finished else None


def job_census(state: ImmState, instance: ImmInstance) -> dict[str, int]:
    lay = layout(instance)
    w = state.where[lay.valid]
    on_machine = int((state.machine_job >= 0).sum())
    return {
        "ib": int((w == AT_IB).sum()),
        "buffer": int((w == IN_BUFFER).sum()),
        "machine": int((w == ON_MACHINE).sum()),
        "done": int((w == DONE).sum()),
        "machine_slots": on_machine,
    }


@dataclass
class ScheduleReport:
    valid: bool
    code: str | None = None  # machine_overlap | stage_order | duration | precedence | incomplete
    step: int | None = None
    message: str = ""


def validate_schedule(trace: Sequence[TraceRow], instance: ImmInstance, require_complete: bool = False) -> ScheduleReport:
    """Check a tick trace against the job-shop constraints.

    Operations are reconstructed from load/complete pairs per machine. Codes:
    ``machine_overlap`` (a) a machine loads while holding a job, ``stage_order``
    (b) a job visits machines out of its sequence, ``duration`` (c) an
    operation does not last its processing time, ``precedence`` (d) a job is
    loaded before its previous operation completed.
    """
    lay = layout(instance)
    holding: dict[int, tuple[int, int]] = {}  # machine -> (job, load tick)
    next_stage = {int(j): 0 for j in lay.job_ids}
    last_done = {int(j): 0 for j in lay.job_ids}
    in_process: set[int] = set()
    rows = sorted(trace, key=lambda r: (r.step, r.machine_id))
    for r in rows:
        k = r.machine_id
        if r.loaded >= 0:
            j = r.loaded
            if k in holding:
                return ScheduleReport(False, "machine_overlap", r.step,
                                      f"M{k} loads job {j} while processing job {holding[k][0]}")
            if j not in next_stage:
                return ScheduleReport(False, "stage_order", r.step, f"unknown job {j}")
            s = next_stage[j]
            if s >= lay.n_ops[j] or lay.seq[j, s] + 1 != k:
                return ScheduleReport(False, "stage_order", r.step,
                                      f"job {j} loaded on M{k} at stage {s}")
            if j in in_process or r.step <= last_done[j]:
                return ScheduleReport(False, "precedence", r.step,
                                      f"job {j} loaded before its previous operation completed")
            holding[k] = (j, r.step)
            in_process.add(j)
        if r.completed >= 0:
            j = r.completed
            if holding.get(k, (None,))[0] != j:
                return ScheduleReport(False, "machine_overlap", r.step,
                                      f"M{k} completes job {j} it does not hold")
            _, start = holding.pop(k)
            s = next_stage[j]
            need = lay.times[j, s]
            if r.step - start + 1 != need:
                return ScheduleReport(False, "duration", r.step,
                                      f"job {j} stage {s} on M{k} took {r.step - start + 1}, needs {need}")
            next_stage[j] = s + 1
            last_done[j] = r.step
            in_process.discard(j)
    if require_complete:
        for j, s in next_stage.items():
            if s != lay.n_ops[j]:
                return ScheduleReport(False, "incomplete", None, f"job {j} finished {s} of {lay.n_ops[j]} operations")
    return ScheduleReport(True)


def write_trace(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "machine_id", "action", "loaded", "completed", "buffer_size"])
        for r in trace:
            w.writerow([r.step, r.machine_id, r.action, r.loaded, r.completed, r.buffer_size])


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        return [TraceRow(*(int(row[c]) for c in ("step", "machine_id", "action", "loaded", "completed", "buffer_size")))
                for row in csv.DictReader(fh)]


class ImmEnv:
    """Stateful wrapper exposing the multi-agent environment protocol."""

    name = "imm"

    def __init__(self, instance: ImmInstance | None = None, config: ImmConfig | None = None):
        self.instance = instance or load_instance(SHIPPED_INSTANCE)
        self.config = config or ImmConfig()
        self._lay = layout(self.instance)
        self.state: ImmState | None = None
        self.graph: Graph | None = None
        self.trace: list[TraceRow] = []

    @property
    def num_agents(self) -> int:
        return self._lay.m

    @property
    def action_sizes(self) -> list[int]:
        return [self._lay.slots + 1] * self._lay.m

    @property
    def node_dim(self) -> int:
        return self._lay.width

    @property
    def edge_dim(self) -> int:
        return self._lay.width

    @property
    def noop(self) -> int:
        return self._lay.noop

    def readout_nodes(self, agent: int) -> list[int]:
        return [self._lay.buffer_node(agent)]

    def reset(self, seed: int | None = None) -> Graph:
        self.state, self.graph = reset(self.instance, seed)
        self.trace = []
        return self.graph

    def legal_mask(self, agent: int) -> np.ndarray:
        return legal_mask(self.state, self.instance, agent)

    def step(self, actions):
        self.state, rewards, done, info = step(self.state, actions, self.instance, self.config)
        self.trace.extend(info.rows)
        self.graph = to_graph(self.state, self.instance)
        return self.graph, rewards, done, info

    def summary(self) -> dict:
        ms = makespan(self.state)
        return {"steps": self.state.step, "success": ms is not None, "makespan": ms}
