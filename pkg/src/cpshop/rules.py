"""Dispatching policies: static priority rules, rollouts, and ensembles.

A policy maps an observation to one logit per action (jobs then No-Op).
Rollouts turn a policy into a complete schedule, either greedily or by
temperature-controlled sampling; the ensemble runs several sampled
rollouts at spread-out temperatures and keeps the best schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from cpshop.env import F_LB, F_LENGTH, JobShopEnv, Observation, SLOT_REAL
from cpshop.instances import Instance
from cpshop.model import Solution

RULES = ("fifo", "spt", "mtwr")


def pdr_logits(observation: Observation, rule: str) -> np.ndarray:
    """Logits of a static priority rule, computed from the observation only.

    * ``fifo``: earliest current start lower bound first.
    * ``spt``: shortest current processing time first.
    * ``mtwr``: most visible work remaining (current plus upcoming slots)
      first.

    The No-Op logit is minus infinity: a rule always dispatches. Ties are
    broken by the action mask consumer; greedy selection takes the lowest
    job index.
    """
    feats = observation.features
    real = observation.kinds == SLOT_REAL
    if rule == "fifo":
        prio = -feats[:, 1, F_LB]
    elif rule == "spt":
        prio = -feats[:, 1, F_LENGTH]
    elif rule == "mtwr":
        prio = (feats[:, 1:, F_LENGTH] * real[:, 1:]).sum(axis=1)
    else:
        raise ValueError(f"unknown rule {rule!r}, expected one of {RULES}")
    logits = np.empty(observation.job_count + 1, dtype=np.float64)
    logits[:-1] = prio
    logits[-1] = -np.inf
    return logits


class Policy(Protocol):
    def logits(self, observation: Observation) -> np.ndarray: ...


@dataclass(frozen=True)
class RulePolicy:
    """Wraps a static priority rule as a policy."""

    rule: str

    def logits(self, observation: Observation) -> np.ndarray:
        return pdr_logits(observation, self.rule)


def masked_argmax(logits: np.ndarray, mask: np.ndarray) -> int:
    """Highest-logit unmasked action; ties go to the lowest index."""
    if not mask.any():
        raise ValueError("empty action mask")
    masked = np.where(mask, logits, -np.inf)
    return int(np.argmax(masked))


def masked_softmax(logits: np.ndarray, mask: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Probabilities over unmasked actions at the given temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not mask.any():
        raise ValueError("empty action mask")
    scaled = np.where(mask, logits / temperature, -np.inf)
    peak = scaled.max()
    if np.isfinite(peak):
        scaled = scaled - peak
    weights = np.exp(scaled, where=np.isfinite(scaled), out=np.zeros_like(scaled))
    total = weights.sum()
    if total == 0:  # all unmasked logits were -inf: fall back to uniform
        weights = mask.astype(np.float64)
        total = weights.sum()
    return weights / total


@dataclass
class Rollout:
    solution: Solution
    makespan: int
    observations: list[Observation] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)


def rollout(
    instance: Instance,
    policy: Policy,
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    horizon: int = 10,
    next_ops: int = 3,
    record: bool = False,
    env: JobShopEnv | None = None,
    observation: Observation | None = None,
) -> Rollout:
    """Run one episode with single actions; greedy when ``rng`` is None.

    Pass ``env``/``observation`` to continue a partially dispatched
    episode instead of starting from a fresh reset.
    """
    if env is None:
        env = JobShopEnv(instance, horizon=horizon, next_ops=next_ops)
        obs = env.reset()
    else:
        obs = env.observe() if observation is None else observation
    out = Rollout(solution=None, makespan=0)  # type: ignore[arg-type]
    while not env.done:
        logits = policy.logits(obs)
        if rng is None:
            action = masked_argmax(logits, obs.mask)
        else:
            probs = masked_softmax(logits, obs.mask, temperature)
            action = int(rng.choice(len(probs), p=probs))
        if record:
            out.observations.append(obs)
            out.actions.append(action)
        result = env.step(action)
        obs = result.observation
    out.solution = env.solution()
    out.makespan = out.solution.makespan
    return out


def greedy_rollout(
    instance: Instance,
    policy: Policy,
    horizon: int = 10,
    next_ops: int = 3,
    use_vector: bool = False,
) -> Solution:
    """Dispatch the whole instance greedily under the policy.

    With ``use_vector`` the policy's job ranking is applied as a priority
    vector per decision point instead of one action at a time.
    """
    if not use_vector:
        return rollout(instance, policy, horizon=horizon, next_ops=next_ops).solution
    env = JobShopEnv(instance, horizon=horizon, next_ops=next_ops)
    obs = env.reset()
    while not env.done:
        logits = policy.logits(obs)
        order = np.argsort(-logits[:-1], kind="stable")
        obs = env.step_vector(order).observation
    return env.solution()


def actor_temperature(actor: int, actor_count: int) -> float:
    """Sampling temperature of actor ``actor`` (1-based) in an ensemble,
    spread linearly over (0.5, 2.0]."""
    if not 1 <= actor <= actor_count:
        raise ValueError("actor index out of range")
    return 1.5 * actor / actor_count + 0.5


@dataclass(frozen=True)
class EnsembleResult:
    solution: Solution
    makespans: tuple[int, ...]

    @property
    def best_makespan(self) -> int:
        return self.solution.makespan


def ensemble_solve(
    instance: Instance,
    policy: Policy,
    actor_count: int = 24,
    seed: int = 0,
    horizon: int = 10,
    next_ops: int = 3,
) -> EnsembleResult:
    """Sample one episode per actor at its own temperature, keep the best.

    Each actor draws from an independent stream derived from ``seed``, so
    results are reproducible and independent of actor scheduling.
    """
    if actor_count < 1:
        raise ValueError("actor_count must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(actor_count)
    best: Solution | None = None
    makespans = []
    for a in range(1, actor_count + 1):
        rng = np.random.default_rng(streams[a - 1])
        run = rollout(
            instance,
            policy,
            rng=rng,
            temperature=actor_temperature(a, actor_count),
            horizon=horizon,
            next_ops=next_ops,
        )
        makespans.append(run.makespan)
        if best is None or run.makespan < best.makespan:
            best = run.solution
    assert best is not None
    return EnsembleResult(solution=best, makespans=tuple(makespans))
