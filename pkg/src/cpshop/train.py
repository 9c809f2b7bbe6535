"""Expert-guided policy training.

One training wave per epoch:

1. Demo generation: every actor samples one episode per training
   instance; a shared cut index j per instance splits each episode into a
   prefix and a completion. The expert completes each prefix (warm
   started by the actor's own episode), giving per-actor improvement
   ratios i_a = expert makespan / actor makespan.
2. Feedback step: completion steps are tagged -i_a (actor's own) or +i_a
   (expert's), min-max scaled into advantages, and applied with a clipped
   surrogate under a KL budget. If no expert improved anything
   (all i_a = 1) the wave is skipped so nothing is penalized.
3. Initial step: the shared prefixes are credited with the negated,
   standardized expert makespans, reinforcing prefixes that led the
   expert to better schedules.

All randomness derives from (seed, epoch), so a resumed run continues
bit-identically.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cpshop import autodiff as ad
from cpshop.env import JobShopEnv, Observation
from cpshop.expert import ExpertConfig, complete_prefix
from cpshop.instances import Instance
from cpshop.model import Solution, compress
from cpshop.net import (
    Adam,
    NetPolicy,
    ObservationBatch,
    PolicyConfig,
    Tensor,
    action_log_probs,
    forward_logits,
    init_params,
    load_params,
    save_params,
)
from cpshop.rules import rollout


@dataclass
class Trajectory:
    """One full episode: per-step observations and actions, final makespan."""

    observations: list[Observation]
    actions: list[int]
    makespan: int


@dataclass
class ActorDemo:
    """One actor's contribution to a wave."""

    prefix: list[int]  # first j actions, shared root of both completions
    actor: Trajectory  # the actor's own full episode
    expert: Trajectory  # expert completion of the prefix
    ratio: float  # expert makespan / actor makespan, in (0, 1]


@dataclass
class DemoBatch:
    instance: Instance
    slice_index: int
    demos: list[ActorDemo]


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; clip/KL values are conventional choices."""

    epochs: int = 30
    actor_count: int = 8
    max_updates: int = 20  # K: updates per wave
    minibatch_size: int | None = 256
    clip_eps: float = 0.2
    kl_limit: float = 0.03
    lr: float = 1e-3
    horizon: int = 10
    next_ops: int = 3
    expert_evals_start: int = 1000
    expert_evals_step: int = 100
    expert_patience: int = 40
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.kl_limit <= 0:
            raise ValueError("kl_limit must be positive")
        if self.max_updates < 1:
            raise ValueError("max_updates must be >= 1")


@dataclass
class WaveStats:
    applied_updates: int = 0
    final_kl: float = 0.0
    samples: int = 0
    skipped: bool = False
    skip_reason: str | None = None


def minmax_scale(values) -> np.ndarray:
    """Affine map onto [0, 1]; an all-equal input maps to all zeros."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("minmax_scale needs at least one value")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


# -- trajectories --------------------------------------------------------


def sample_episode(
    instance: Instance,
    policy,
    rng: np.random.Generator,
    horizon: int,
    next_ops: int,
) -> Trajectory:
    run = rollout(
        instance, policy, rng=rng, temperature=1.0,
        horizon=horizon, next_ops=next_ops, record=True,
    )
    return Trajectory(observations=run.observations, actions=run.actions, makespan=run.makespan)


def realize_solution(
    env: JobShopEnv, solution: Solution, record: bool = True
) -> tuple[list[Observation], list[int]]:
    """Drive a (partially dispatched) environment to exactly reproduce a
    compressed solution, recording the action sequence taken.

    At every decision the unscheduled operation with the earliest target
    start whose job is up next is dispatched once the clock allows it;
    otherwise the clock is advanced with No-Op.
    """
    model = env.model
    observations: list[Observation] = []
    actions: list[int] = []
    obs = env.observe()
    while not env.done:
        best_job = -1
        best_start = None
        for j in range(env.instance.job_count):
            k = int(model.cursor[j])
            if k >= int(model.n_ops[j]):
                continue
            s = solution.starts[j][k]
            if best_start is None or s < best_start:
                best_start = s
                best_job = j
        action = best_job if obs.mask[best_job] else env.noop_action
        if record:
            observations.append(obs)
        actions.append(action)
        result = env.step(action)
        if action != env.noop_action:
            fixed = int(model.starts[best_job, int(model.cursor[best_job]) - 1])
            if fixed != best_start:
                raise ValueError(
                    f"solution not reachable: job {best_job} fixed at {fixed}, wanted {best_start}"
                )
        obs = result.observation
    return observations, actions


def solution_actions(
    instance: Instance, solution: Solution, horizon: int = 10, next_ops: int = 3
) -> list[int]:
    """Action sequence that reproduces a compressed solution from reset."""
    env = JobShopEnv(instance, horizon=horizon, next_ops=next_ops)
    env.reset()
    _, actions = realize_solution(env, compress(instance, solution), record=False)
    return actions


# -- demo generation -----------------------------------------------------


def generate_demos(
    instances: list[Instance],
    params: dict[str, Tensor],
    actor_count: int,
    expert_budget: ExpertConfig,
    seed,
    horizon: int = 10,
    next_ops: int = 3,
    config: PolicyConfig = PolicyConfig(),
) -> list[DemoBatch]:
    """One wave of partial expert demonstrations (deterministic in seed)."""
    if not instances:
        raise ValueError("generate_demos needs at least one instance")
    if actor_count < 1:
        raise ValueError("actor_count must be >= 1")
    policy = NetPolicy(params, config)
    root = np.random.SeedSequence(seed)
    batches = []
    for idx, instance in enumerate(instances):
        inst_seq = np.random.SeedSequence(entropy=root.entropy, spawn_key=(idx,))
        actor_seqs = inst_seq.spawn(actor_count + 1)
        episodes = [
            sample_episode(
                instance, policy, np.random.default_rng(actor_seqs[a]), horizon, next_ops
            )
            for a in range(actor_count)
        ]
        j_rng = np.random.default_rng(actor_seqs[actor_count])
        min_len = min(len(ep.actions) for ep in episodes)
        j = int(j_rng.integers(0, min_len + 1))
        demos = []
        for a, episode in enumerate(episodes):
            prefix = episode.actions[:j]
            try:
                expert_solution = complete_prefix(
                    instance,
                    prefix,
                    config=ExpertConfig(
                        time_limit=expert_budget.time_limit,
                        improve_evals=expert_budget.improve_evals,
                        patience=expert_budget.patience,
                        seed=int(np.random.default_rng(actor_seqs[a]).integers(2**31)),
                    ),
                    warm=rollout_solution_of(episode, instance),
                    horizon=horizon,
                    next_ops=next_ops,
                )
            except Exception as exc:
                raise RuntimeError(
                    f"expert failed on instance {instance.name!r}, actor {a}, "
                    f"slice {j}: {exc}"
                ) from exc
            env = JobShopEnv(instance, horizon=horizon, next_ops=next_ops)
            env.reset()
            prefix_obs: list[Observation] = []
            obs = env.observe()
            for action in prefix:
                prefix_obs.append(obs)
                obs = env.step(action).observation
            suffix_obs, suffix_actions = realize_solution(env, expert_solution)
            expert_traj = Trajectory(
                observations=prefix_obs + suffix_obs,
                actions=prefix + suffix_actions,
                makespan=expert_solution.makespan,
            )
            if expert_traj.makespan > episode.makespan:
                raise RuntimeError(
                    f"expert worsened actor {a} on {instance.name!r}: "
                    f"{expert_traj.makespan} > {episode.makespan}"
                )
            demos.append(
                ActorDemo(
                    prefix=prefix,
                    actor=episode,
                    expert=expert_traj,
                    ratio=expert_traj.makespan / episode.makespan,
                )
            )
        batches.append(DemoBatch(instance=instance, slice_index=j, demos=demos))
    return batches


def rollout_solution_of(episode: Trajectory, instance: Instance) -> Solution:
    """Reconstruct the schedule an episode produced (episodes are replayable)."""
    env = JobShopEnv(instance)
    env.reset()
    for action in episode.actions:
        env.step(action)
    return env.solution()


# -- surrogate updates ---------------------------------------------------


@dataclass
class _SampleSet:
    """Training samples grouped by job count for batched evaluation."""

    groups: list[tuple[ObservationBatch, np.ndarray, np.ndarray]] = field(default_factory=list)
    # per group: (batch, actions, advantages)

    @property
    def size(self) -> int:
        return sum(len(a) for _, a, _ in self.groups)


def _group_samples(samples: list[tuple[Observation, int, float]]) -> _SampleSet:
    by_jc: dict[int, list[tuple[Observation, int, float]]] = {}
    for obs, action, adv in samples:
        by_jc.setdefault(obs.job_count, []).append((obs, action, adv))
    out = _SampleSet()
    for jc in sorted(by_jc):
        rows = by_jc[jc]
        batch = ObservationBatch.from_observations([r[0] for r in rows])
        out.groups.append(
            (batch, np.array([r[1] for r in rows]), np.array([r[2] for r in rows]))
        )
    return out


def _surrogate_update_loop(
    params: dict[str, Tensor],
    optimizer: Adam,
    samples: _SampleSet,
    config: TrainConfig,
    rng: np.random.Generator,
) -> WaveStats:
    """Clipped-surrogate minimization with a KL(old || new) stop.

    The violating update stays applied; the loop just stops afterwards,
    so the number of applied updates never exceeds ``max_updates``.
    """
    stats = WaveStats(samples=samples.size)
    old_probs = []
    old_logp_actions = []
    for batch, actions, _ in samples.groups:
        logits = forward_logits(params, batch).data
        shifted = logits - np.nanmax(np.where(batch.masks, logits, -np.inf), axis=1, keepdims=True)
        e = np.exp(shifted, where=np.isfinite(shifted), out=np.zeros_like(shifted))
        probs = e / e.sum(axis=1, keepdims=True)
        old_probs.append(probs)
        old_logp_actions.append(
            np.log(probs[np.arange(len(actions)), actions])
        )
    sizes = [len(a) for _, a, _ in samples.groups]
    offsets = np.cumsum([0] + sizes)
    total = samples.size
    for _ in range(config.max_updates):
        if config.minibatch_size is None or config.minibatch_size >= total:
            chosen = np.arange(total)
        else:
            chosen = rng.choice(total, size=config.minibatch_size, replace=False)
        picked = np.zeros(total, dtype=bool)
        picked[chosen] = True
        losses = []
        optimizer.zero_grad()
        for g, (batch, actions, advs) in enumerate(samples.groups):
            sel = picked[offsets[g] : offsets[g + 1]]
            if not sel.any():
                continue
            sub = ObservationBatch(
                features=batch.features[sel], kinds=batch.kinds[sel], masks=batch.masks[sel]
            )
            logp = action_log_probs(params, sub, actions[sel])
            ratio = (logp - old_logp_actions[g][sel]).exp()
            adv = advs[sel]
            unclipped = (-adv) * ratio
            clipped = (-adv) * ad.clip(ratio, 1 - config.clip_eps, 1 + config.clip_eps)
            losses.append(ad.maximum(unclipped, clipped).sum())
        loss = losses[0] if len(losses) == 1 else ad.concat(
            [l.reshape(1) for l in losses]
        ).sum()
        loss = loss / float(picked.sum())
        if not np.isfinite(loss.data):
            raise RuntimeError(
                f"non-finite surrogate loss after {stats.applied_updates} updates "
                f"(samples={samples.size})"
            )
        loss.backward()
        optimizer.step()
        stats.applied_updates += 1
        # mean KL(pi_old || pi_new) over the whole wave
        kl_total = 0.0
        for g, (batch, _, _) in enumerate(samples.groups):
            new_logits = forward_logits(params, batch).data
            shifted = new_logits - np.nanmax(
                np.where(batch.masks, new_logits, -np.inf), axis=1, keepdims=True
            )
            e = np.exp(shifted, where=np.isfinite(shifted), out=np.zeros_like(shifted))
            new_logp = np.log(np.maximum(e / e.sum(axis=1, keepdims=True), 1e-300))
            p_old = old_probs[g]
            contrib = np.where(p_old > 0, p_old * (np.log(np.maximum(p_old, 1e-300)) - new_logp), 0.0)
            kl_total += contrib.sum()
        stats.final_kl = kl_total / total
        if stats.final_kl > config.kl_limit:
            break
    return stats


def train_feedback(
    params: dict[str, Tensor],
    demo_batches: list[DemoBatch],
    config: TrainConfig,
    optimizer: Adam | None = None,
    rng: np.random.Generator | None = None,
) -> WaveStats:
    """Reinforce expert completions against the actors' own (Alg.-style
    feedback wave). Exactly neutral when no expert found an improvement."""
    if not demo_batches or all(not b.demos for b in demo_batches):
        raise ValueError("train_feedback needs non-empty demos")
    optimizer = optimizer or Adam(params, lr=config.lr)
    rng = rng or np.random.default_rng(config.seed)
    if all(d.ratio == 1.0 for b in demo_batches for d in b.demos):
        return WaveStats(skipped=True, skip_reason="no expert improvement (all ratios 1)")
    raw: list[tuple[Observation, int, float]] = []
    for batch in demo_batches:
        j = batch.slice_index
        for demo in batch.demos:
            if demo.expert.actions == demo.actor.actions:
                continue  # identical trajectories teach nothing
            for obs, action in zip(demo.actor.observations[j:], demo.actor.actions[j:]):
                raw.append((obs, action, -demo.ratio))
            for obs, action in zip(demo.expert.observations[j:], demo.expert.actions[j:]):
                raw.append((obs, action, +demo.ratio))
    if not raw:
        return WaveStats(skipped=True, skip_reason="all completions identical")
    advantages = minmax_scale([r[2] for r in raw])
    samples = _group_samples(
        [(obs, action, adv) for (obs, action, _), adv in zip(raw, advantages)]
    )
    return _surrogate_update_loop(params, optimizer, samples, config, rng)


def train_initial(
    params: dict[str, Tensor],
    demo_batches: list[DemoBatch],
    config: TrainConfig,
    optimizer: Adam | None = None,
    rng: np.random.Generator | None = None,
) -> WaveStats:
    """Credit shared prefixes by the expert makespan they led to; better
    than the wave mean is reinforced, worse is penalized."""
    if not demo_batches or all(not b.demos for b in demo_batches):
        raise ValueError("train_initial needs non-empty demos")
    optimizer = optimizer or Adam(params, lr=config.lr)
    rng = rng or np.random.default_rng(config.seed)
    raw: list[tuple[Observation, int, float]] = []
    for batch in demo_batches:
        if len(batch.demos) < 2 or batch.slice_index == 0:
            continue
        makespans = np.array([d.expert.makespan for d in batch.demos], dtype=np.float64)
        std = makespans.std()
        if std == 0:
            continue
        scores = -(makespans - makespans.mean()) / std
        j = batch.slice_index
        for demo, score in zip(batch.demos, scores):
            for obs, action in zip(demo.actor.observations[:j], demo.actor.actions[:j]):
                raw.append((obs, action, float(score)))
    if not raw:
        warnings.warn("initial-solution wave skipped: no prefix spread", stacklevel=2)
        return WaveStats(skipped=True, skip_reason="no prefix spread")
    samples = _group_samples(raw)
    return _surrogate_update_loop(params, optimizer, samples, config, rng)


# -- training loop -------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    metrics: list[dict]
    best_epoch: int
    best_greedy_mean: float
    best_params: dict[str, Tensor]


METRIC_FIELDS = (
    "epoch", "instance", "greedy_makespan", "mean_expert_makespan",
    "mean_i", "applied_iters", "wall_s",
)


def _save_optimizer(optimizer: Adam, path: Path) -> None:
    arrays = {"t": np.array(optimizer.t)}
    for key, store in (("m", optimizer.m), ("v", optimizer.v)):
        for name, arr in store.items():
            arrays[f"{key}/{name}"] = arr
    np.savez(path, **arrays)


def _load_optimizer(optimizer: Adam, path: Path) -> None:
    with np.load(path, allow_pickle=False) as data:
        optimizer.t = int(data["t"])
        for key in data.files:
            if key.startswith("m/"):
                optimizer.m[key[2:]] = data[key]
            elif key.startswith("v/"):
                optimizer.v[key[2:]] = data[key]


def train_loop(
    instances: list[Instance],
    config: TrainConfig,
    out_dir: str | Path | None = None,
    params: dict[str, Tensor] | None = None,
    resume_epoch: int = 0,
    net_config: PolicyConfig | None = None,
) -> TrainResult:
    """Run epochs of demo generation and surrogate updates.

    Each epoch writes a checkpoint plus optimizer and metric state under
    ``out_dir``; restarting from ``resume_epoch`` with the same seed
    continues exactly where the interrupted run stopped.
    """
    if not instances:
        raise ValueError("train_loop needs at least one instance")
    op_counts = {inst.total_operations for inst in instances}
    if max(op_counts) > 2 * min(op_counts):
        warnings.warn(
            "training instances differ widely in operation count; "
            "shared slice indices may be degenerate",
            stacklevel=2,
        )
    net_config = net_config or PolicyConfig(next_ops=config.next_ops)
    if params is None:
        params = init_params(net_config, seed=config.seed)
    optimizer = Adam(params, lr=config.lr)
    out = Path(out_dir) if out_dir is not None else None
    metrics: list[dict] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_params(params, out / "epoch_000.ckpt", net_config)
        if resume_epoch > 0:
            _load_optimizer(optimizer, out / f"optimizer_{resume_epoch:03d}.npz")

    best_epoch = 0
    best_mean = np.inf
    best_params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}

    def greedy_means() -> list[int]:
        policy = NetPolicy(params, net_config)
        return [
            rollout(inst, policy, horizon=config.horizon, next_ops=config.next_ops).makespan
            for inst in instances
        ]

    if config.epochs == 0 or resume_epoch >= config.epochs:
        vals = greedy_means()
        return TrainResult(
            params=params,
            metrics=metrics,
            best_epoch=0,
            best_greedy_mean=float(np.mean(vals)),
            best_params=best_params,
        )

    for epoch in range(resume_epoch + 1, config.epochs + 1):
        t0 = time.monotonic()
        budget = ExpertConfig(
            improve_evals=config.expert_evals_start + config.expert_evals_step * (epoch - 1),
            patience=config.expert_patience,
        )
        demos = generate_demos(
            instances,
            params,
            config.actor_count,
            budget,
            seed=[config.seed, epoch],
            horizon=config.horizon,
            next_ops=config.next_ops,
            config=net_config,
        )
        update_rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, 1]))
        fb = train_feedback(params, demos, config, optimizer, update_rng)
        init_stats = train_initial(params, demos, config, optimizer, update_rng)
        wall = time.monotonic() - t0
        greedy = greedy_means()
        for inst, batch, gm in zip(instances, demos, greedy):
            expert_ms = [d.expert.makespan for d in batch.demos]
            ratios = [d.ratio for d in batch.demos]
            metrics.append(
                {
                    "epoch": epoch,
                    "instance": inst.name,
                    "greedy_makespan": gm,
                    "mean_expert_makespan": float(np.mean(expert_ms)),
                    "mean_i": float(np.mean(ratios)),
                    "applied_iters": fb.applied_updates + init_stats.applied_updates,
                    "wall_s": round(wall, 3),
                }
            )
        mean_greedy = float(np.mean(greedy))
        if mean_greedy < best_mean:
            best_mean = mean_greedy
            best_epoch = epoch
            best_params = {
                k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()
            }
        if out is not None:
            save_params(params, out / f"epoch_{epoch:03d}.ckpt", net_config)
            _save_optimizer(optimizer, out / f"optimizer_{epoch:03d}.npz")
            save_params(best_params, out / "best.ckpt", net_config)
            write_metrics(metrics, out / "metrics.csv")
    return TrainResult(
        params=params,
        metrics=metrics,
        best_epoch=best_epoch,
        best_greedy_mean=best_mean,
        best_params=best_params,
    )


def write_metrics(metrics: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        writer.writerows(metrics)
