"""Dispatching environment over the interval model.

State: one interval per operation, a per-job window of the previous, the
current, and the next few operations, and a clock ``t``. An action either
dispatches a job (fixing its current operation at its start lower bound)
or is a No-Op that advances the clock to the next interval-end event.

The clock only ever advances. Whenever no job is dispatchable the clock
refreshes itself to the minimum end lower bound among current operations,
so in every non-terminal decision state at least one job action is
available and No-Op is purely voluntary. Because every dispatch happens
at the operation's start lower bound, terminal schedules are compressed
by construction.

Rewards are episodic: the terminal step carries ``-makespan``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cpshop.instances import Instance
from cpshop.model import ModelState, Solution, new_model

SLOT_REAL = 0
SLOT_SOURCE = 1
SLOT_SINK = 2

# feature indices of one interval encoding (f, lb, l, ct)
F_ASSIGNED = 0
F_LB = 1
F_LENGTH = 2
F_AT_T = 3


class ActionError(ValueError):
    """Raised when a masked or malformed action is submitted."""


@dataclass(frozen=True)
class Observation:
    """Per-job interval window plus clock and action mask.

    ``features[j, s]`` is the (f, lb, l, ct) encoding of slot ``s`` of job
    ``j``; slot 0 is the previous (last fixed) operation, slot 1 the
    current one, later slots the upcoming operations. ``kinds`` marks
    slots with no underlying operation as source (before the first
    operation) or sink (after the last loaded one); their features are
    zero and stand-in embeddings are the policy's responsibility.
    """

    features: np.ndarray
    kinds: np.ndarray
    mask: np.ndarray
    t: int
    time_scale: int

    @property
    def job_count(self) -> int:
        return self.features.shape[0]

    @property
    def noop_action(self) -> int:
        return self.job_count


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    done: bool
    reward: float | None
    makespan: int | None
    applied_actions: tuple[int, ...] = field(default_factory=tuple)


class JobShopEnv:
    """Single-owner dispatching environment for one instance."""

    def __init__(self, instance: Instance, horizon: int = 10, next_ops: int = 3):
        if next_ops < 0:
            raise ValueError("next_ops must be >= 0")
        self.instance = instance
        self.horizon = horizon
        self.next_ops = next_ops
        self.time_scale = instance.machine_load_bound()
        self.model: ModelState | None = None
        self.t = 0

    # -- lifecycle -------------------------------------------------------

    def reset(self) -> Observation:
        self.model = new_model(self.instance, self.horizon)
        self.t = int(self._current_end_lbs().min())
        return self.observe()

    def _require_model(self) -> ModelState:
        if self.model is None:
            raise RuntimeError("call reset() first")
        return self.model

    @property
    def done(self) -> bool:
        return self._require_model().complete

    @property
    def noop_action(self) -> int:
        return self.instance.job_count

    # -- clock -----------------------------------------------------------

    def _current_end_lbs(self) -> np.ndarray:
        model = self._require_model()
        ends = model.current_lbs() + model.current_proc()
        return ends[model.alive()]

    def current_time(self) -> int:
        if self.done:
            raise RuntimeError("terminal state has no current time")
        return self.t

    def _refresh_clock(self) -> None:
        """Advance the clock to the minimum current end lower bound when no
        job is dispatchable; this always re-enables at least one job."""
        model = self._require_model()
        if model.complete:
            return
        if not self._dispatchable().any():
            self.t = max(self.t, int(self._current_end_lbs().min()))

    def _advance_noop(self) -> None:
        model = self._require_model()
        events = np.concatenate([self._current_end_lbs(), model.release])
        later = events[events > self.t]
        if later.size == 0:
            raise ActionError("No-Op rejected: no later interval-end event to advance to")
        self.t = int(later.min())

    # -- masks and observations -----------------------------------------

    def _dispatchable(self) -> np.ndarray:
        model = self._require_model()
        return model.alive() & (model.current_lbs() <= self.t)

    def _noop_available(self) -> bool:
        """No-Op is offered exactly when a later interval-end event exists,
        so an accepted No-Op always advances the clock."""
        model = self._require_model()
        if not model.alive().any():
            return False
        if (self._current_end_lbs() > self.t).any():
            return True
        return bool((model.release > self.t).any())

    def action_mask(self) -> np.ndarray:
        if self.done:
            raise RuntimeError("terminal state has no actions")
        mask = np.zeros(self.instance.job_count + 1, dtype=bool)
        mask[: self.instance.job_count] = self._dispatchable()
        mask[self.noop_action] = self._noop_available()
        return mask

    def observe(self) -> Observation:
        model = self._require_model()
        jc = self.instance.job_count
        slots = 2 + self.next_ops
        feats = np.zeros((jc, slots, 4), dtype=np.float64)
        kinds = np.full((jc, slots), SLOT_SINK, dtype=np.int8)
        idx = np.arange(jc)
        alive = model.alive()

        # previous operation: the job's last fixed one, else a source slot
        has_prev = model.cursor > 0
        kinds[~has_prev, 0] = SLOT_SOURCE
        if has_prev.any():
            pj = idx[has_prev]
            pk = model.cursor[has_prev] - 1
            starts = model.starts[pj, pk]
            kinds[pj, 0] = SLOT_REAL
            feats[pj, 0, F_ASSIGNED] = 1.0
            feats[pj, 0, F_LB] = starts
            feats[pj, 0, F_LENGTH] = model.proc[pj, pk]
            feats[pj, 0, F_AT_T] = (starts == self.t).astype(np.float64)

        # current and upcoming operations, chained start lower bounds
        lb = model.current_lbs().astype(np.float64)
        for s in range(1, slots):
            off = s - 1
            k = model.cursor + off
            loaded = alive & (k < model.loaded_until)
            if not loaded.any():
                break
            lj = idx[loaded]
            lk = k[loaded]
            if off > 0:
                prev_end = lb[loaded] + model.proc[lj, lk - 1]
                lb = lb.copy()
                lb[loaded] = np.maximum(prev_end, model.release[model.machine[lj, lk]])
            kinds[lj, s] = SLOT_REAL
            feats[lj, s, F_LB] = lb[loaded]
            feats[lj, s, F_LENGTH] = model.proc[lj, lk]
            feats[lj, s, F_AT_T] = (lb[loaded] == self.t).astype(np.float64)

        if model.complete:
            mask = np.zeros(jc + 1, dtype=bool)
        else:
            mask = self.action_mask()
        return Observation(
            features=feats, kinds=kinds, mask=mask, t=self.t, time_scale=self.time_scale
        )

    # -- transitions -----------------------------------------------------

    def _result(self, applied: tuple[int, ...]) -> StepResult:
        model = self._require_model()
        if model.complete:
            makespan = model.solution().makespan
            return StepResult(
                observation=self.observe(),
                done=True,
                reward=-float(makespan),
                makespan=makespan,
                applied_actions=applied,
            )
        return StepResult(
            observation=self.observe(),
            done=False,
            reward=None,
            makespan=None,
            applied_actions=applied,
        )

    def step(self, action: int) -> StepResult:
        """Apply one action: a job index dispatches that job, the index
        ``job_count`` is the No-Op clock advance."""
        if self.done:
            raise ActionError("episode is over")
        model = self._require_model()
        mask = self.action_mask()
        if not 0 <= action <= self.noop_action:
            raise ActionError(f"action {action} out of range 0..{self.noop_action}")
        if not mask[action]:
            if action == self.noop_action:
                raise ActionError("No-Op rejected: it would skip the last remaining decision")
            raise ActionError(
                f"job {action} is not dispatchable at t={self.t} "
                f"(start lower bound {int(model.current_lbs()[action])})"
            )
        if action == self.noop_action:
            self._advance_noop()
        else:
            model.fix_start(action)
            self._refresh_clock()
        return self._result((action,))

    def step_vector(self, priority: list[int] | np.ndarray) -> StepResult:
        """Sweep a job priority order, dispatching every job that is
        dispatchable at the current clock value, until a fixpoint.

        Equivalent to replaying the returned ``applied_actions`` through
        :meth:`step`. An empty applicable set degrades to a No-Op advance.
        """
        if self.done:
            raise ActionError("episode is over")
        model = self._require_model()
        order = [int(a) for a in priority]
        if sorted(order) != list(range(self.instance.job_count)):
            raise ActionError("priority must be a permutation of all job indices")
        applied: list[int] = []
        t = self.t
        progressed = True
        while progressed:
            progressed = False
            for job in order:
                if model.cursor[job] >= model.n_ops[job]:
                    continue
                lb = max(
                    int(model.prev_end[job]),
                    int(model.release[model.machine[job, model.cursor[job]]]),
                )
                if lb <= t:
                    model.fix_start(job)
                    applied.append(job)
                    progressed = True
        if not applied:
            if self._noop_available():
                self._advance_noop()
                applied.append(self.noop_action)
        else:
            self._refresh_clock()
        return self._result(tuple(applied))

    def solution(self) -> Solution:
        return self._require_model().solution()
