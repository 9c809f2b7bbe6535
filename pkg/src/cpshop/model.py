"""Interval-variable scheduling model with lazy horizon loading.

The model keeps one interval per operation. End bounds are always derived
from start bounds plus the fixed length, so only start bounds are stored.
Bounds propagation is chain-plus-machine-release: the start lower bound of
an unfixed operation is the max of its job predecessor's end bound and the
release time of its machine. This is exact for the chronological
lower-bound fixing performed by the dispatching environment.

Also provides solution validation and the polynomial solution compression
(earliest starts under the solution's machine sequences).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cpshop.instances import Instance

NOT_FIXED = -1


@dataclass(frozen=True)
class IntervalVar:
    """Snapshot of one operation's scheduling state."""

    start_lb: int
    start_ub: int
    length: int
    fixed: bool
    loaded: bool

    @property
    def end_lb(self) -> int:
        return self.start_lb + self.length

    @property
    def end_ub(self) -> int:
        return self.start_ub + self.length


@dataclass(frozen=True)
class Solution:
    """Start time per operation plus the resulting makespan."""

    instance_name: str
    starts: tuple[tuple[int, ...], ...]
    makespan: int


@dataclass(frozen=True)
class ValidationReport:
    feasible: bool
    violation: str | None = None

    def __bool__(self) -> bool:
        return self.feasible


class ModelState:
    """Mutable scheduling state over one instance.

    Single-owner: one ModelState per worker. The instance itself is
    immutable and may be shared freely.
    """

    def __init__(self, instance: Instance, horizon: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.instance = instance
        self.horizon = horizon
        jc = instance.job_count
        self.n_ops = np.array([len(ops) for ops in instance.jobs], dtype=np.int64)
        max_ops = int(self.n_ops.max())
        self.machine = np.full((jc, max_ops), -1, dtype=np.int64)
        self.proc = np.zeros((jc, max_ops), dtype=np.int64)
        for j, ops in enumerate(instance.jobs):
            for k, op in enumerate(ops):
                self.machine[j, k] = op.machine
                self.proc[j, k] = op.processing_time
        self.cursor = np.zeros(jc, dtype=np.int64)
        self.prev_end = np.zeros(jc, dtype=np.int64)
        self.release = np.zeros(instance.machine_count, dtype=np.int64)
        self.starts = np.full((jc, max_ops), NOT_FIXED, dtype=np.int64)
        self.loaded_until = np.minimum(self.n_ops, horizon)
        # finite stand-in for an unbounded start upper bound
        self.ub_sentinel = instance.total_processing_time
        self.fixed_count = 0

    # -- queries ---------------------------------------------------------

    @property
    def complete(self) -> bool:
        return self.fixed_count == int(self.n_ops.sum())

    def alive(self) -> np.ndarray:
        """Boolean mask of jobs that still have unfixed operations."""
        return self.cursor < self.n_ops

    def current_lbs(self) -> np.ndarray:
        """Start lower bound of each job's current operation.

        Finished jobs get the upper-bound sentinel.
        """
        alive = self.alive()
        k = np.where(alive, self.cursor, 0)
        mach = self.machine[np.arange(len(k)), k]
        lbs = np.maximum(self.prev_end, self.release[mach])
        return np.where(alive, lbs, self.ub_sentinel)

    def current_proc(self) -> np.ndarray:
        """Processing time of each job's current operation (0 if finished)."""
        alive = self.alive()
        k = np.where(alive, self.cursor, 0)
        p = self.proc[np.arange(len(k)), k]
        return np.where(alive, p, 0)

    def chain_lb(self, job: int, op_index: int) -> int:
        """Start lower bound of a loaded operation, chained from the cursor."""
        cur = int(self.cursor[job])
        if op_index < cur:
            return int(self.starts[job, op_index])
        if op_index >= self.loaded_until[job]:
            raise ValueError(f"operation ({job}, {op_index}) is not loaded")
        lb = max(int(self.prev_end[job]), int(self.release[self.machine[job, cur]]))
        for k in range(cur, op_index):
            end = lb + int(self.proc[job, k])
            lb = max(end, int(self.release[self.machine[job, k + 1]]))
        return lb

    def interval(self, job: int, op_index: int) -> IntervalVar:
        """Interval-variable view of one operation."""
        length = int(self.proc[job, op_index])
        if op_index < self.cursor[job]:
            s = int(self.starts[job, op_index])
            return IntervalVar(start_lb=s, start_ub=s, length=length, fixed=True, loaded=True)
        if op_index >= self.loaded_until[job]:
            return IntervalVar(
                start_lb=0, start_ub=self.ub_sentinel, length=length, fixed=False, loaded=False
            )
        return IntervalVar(
            start_lb=self.chain_lb(job, op_index),
            start_ub=self.ub_sentinel,
            length=length,
            fixed=False,
            loaded=True,
        )

    # -- transitions -----------------------------------------------------

    def fix_start(self, job: int) -> int:
        """Fix the current operation of ``job`` at its start lower bound.

        Updates the machine release, advances the job cursor, and loads
        the next operation of the job into the horizon window. Returns
        the fixed start time.
        """
        k = int(self.cursor[job])
        if k >= self.n_ops[job]:
            raise ValueError(f"job {job} has no unfixed operation left")
        m = int(self.machine[job, k])
        lb = max(int(self.prev_end[job]), int(self.release[m]))
        end = lb + int(self.proc[job, k])
        self.starts[job, k] = lb
        self.prev_end[job] = end
        self.release[m] = end
        self.cursor[job] = k + 1
        self.loaded_until[job] = min(int(self.n_ops[job]), k + 1 + self.horizon)
        self.fixed_count += 1
        return lb

    def solution(self) -> Solution:
        if not self.complete:
            raise ValueError("schedule is not complete")
        starts = tuple(
            tuple(int(s) for s in self.starts[j, : self.n_ops[j]])
            for j in range(self.instance.job_count)
        )
        makespan = int(self.prev_end.max())
        return Solution(instance_name=self.instance.name, starts=starts, makespan=makespan)


def new_model(instance: Instance, horizon: int) -> ModelState:
    """Build the model with the first ``horizon`` operations per job loaded."""
    return ModelState(instance, horizon)


def _check_dims(instance: Instance, solution: Solution) -> str | None:
    if len(solution.starts) != instance.job_count:
        return f"solution has {len(solution.starts)} jobs, instance has {instance.job_count}"
    for j, (row, ops) in enumerate(zip(solution.starts, instance.jobs)):
        if len(row) != len(ops):
            return f"job {j}: {len(row)} start times for {len(ops)} operations"
    return None


def validate(instance: Instance, solution: Solution) -> ValidationReport:
    """Check precedence, machine no-overlap, and the reported makespan."""
    dim_err = _check_dims(instance, solution)
    if dim_err is not None:
        return ValidationReport(False, dim_err)
    max_end = 0
    per_machine: dict[int, list[tuple[int, int, int, int]]] = {}
    for j, (row, ops) in enumerate(zip(solution.starts, instance.jobs)):
        for k, (s, op) in enumerate(zip(row, ops)):
            if s < 0:
                return ValidationReport(False, f"operation ({j},{k}) has negative start {s}")
            end = s + op.processing_time
            max_end = max(max_end, end)
            if k + 1 < len(row) and end > row[k + 1]:
                return ValidationReport(
                    False,
                    f"precedence violation in job {j}: op {k} ends at {end}, "
                    f"op {k + 1} starts at {row[k + 1]}",
                )
            per_machine.setdefault(op.machine, []).append((s, end, j, k))
    for m, entries in per_machine.items():
        entries.sort()
        for (s1, e1, j1, k1), (s2, e2, j2, k2) in zip(entries, entries[1:]):
            if e1 > s2:
                return ValidationReport(
                    False,
                    f"overlap on machine {m}: ops ({j1},{k1}) [{s1},{e1}) and "
                    f"({j2},{k2}) [{s2},{e2})",
                )
    if max_end != solution.makespan:
        return ValidationReport(
            False, f"reported makespan {solution.makespan} != recomputed {max_end}"
        )
    return ValidationReport(True)


def compress(instance: Instance, solution: Solution) -> Solution:
    """Pull every start to its earliest feasible time under the solution's
    per-machine operation order.

    The per-machine order and job order of the input are preserved; every
    output start is <= its input start and the makespan never increases.
    """
    report = validate(instance, solution)
    if not report:
        raise ValueError(f"cannot compress infeasible solution: {report.violation}")
    # sorting by input start gives a topological order of the precedence
    # graph (job chains + machine sequences): every predecessor starts
    # strictly earlier since processing times are positive
    order = sorted(
        (s, j, k)
        for j, row in enumerate(solution.starts)
        for k, s in enumerate(row)
    )
    new_starts = [list(row) for row in solution.starts]
    job_end = [0] * instance.job_count
    release = [0] * instance.machine_count
    makespan = 0
    for _, j, k in order:
        op = instance.jobs[j][k]
        s = max(job_end[j], release[op.machine])
        new_starts[j][k] = s
        end = s + op.processing_time
        job_end[j] = end
        release[op.machine] = end
        makespan = max(makespan, end)
    return Solution(
        instance_name=solution.instance_name,
        starts=tuple(tuple(row) for row in new_starts),
        makespan=makespan,
    )


def is_compressed(instance: Instance, solution: Solution) -> bool:
    """True iff compression leaves the solution unchanged."""
    return compress(instance, solution) == solution
