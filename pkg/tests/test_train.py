import numpy as np
import pytest

from cpshop.env import JobShopEnv
from cpshop.expert import ExpertConfig
from cpshop.instances import generate_instance
from cpshop.model import validate
from cpshop.net import (
    Adam,
    NetPolicy,
    ObservationBatch,
    PolicyConfig,
    action_log_probs,
    init_params,
    load_params,
)
from cpshop.rules import RulePolicy, greedy_rollout, rollout
from cpshop.train import (
    ActorDemo,
    DemoBatch,
    TrainConfig,
    Trajectory,
    generate_demos,
    minmax_scale,
    sample_episode,
    solution_actions,
    train_feedback,
    train_initial,
    train_loop,
    write_metrics,
)


def clone(params):
    return {k: v.data.copy() for k, v in params.items()}


def params_equal(params, snapshot):
    return all((params[k].data == snapshot[k]).all() for k in params)


# -- scaling -----------------------------------------------------------


def test_minmax_scale_basic():
    assert minmax_scale([2.0, 4.0, 6.0]).tolist() == [0.0, 0.5, 1.0]


def test_minmax_scale_degenerate_goes_to_zero():
    assert minmax_scale([5.0, 5.0, 5.0]).tolist() == [0.0, 0.0, 0.0]


def test_minmax_scale_empty_rejected():
    with pytest.raises(ValueError):
        minmax_scale([])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        TrainConfig(kl_limit=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_updates=0)


# -- replaying solutions -----------------------------------------------


def test_solution_actions_replay_identity():
    rng = np.random.default_rng(0)
    for trial in range(10):
        inst = generate_instance(5, 5, seed=700 + trial)
        target = greedy_rollout(inst, RulePolicy(("fifo", "spt", "mtwr")[trial % 3]))
        actions = solution_actions(inst, target)
        env = JobShopEnv(inst)
        env.reset()
        for action in actions:
            env.step(action)
        assert env.solution() == target


def test_solution_actions_handles_delays():
    # a compressed but delaying schedule still replays exactly, using No-Op
    from cpshop.expert import improve

    inst = generate_instance(5, 5, seed=13)
    target = improve(inst, greedy_rollout(inst, RulePolicy("spt")), evals=800, seed=1)
    actions = solution_actions(inst, target)
    env = JobShopEnv(inst)
    env.reset()
    for action in actions:
        env.step(action)
    assert env.solution() == target


# -- demo generation ---------------------------------------------------


def small_demo_wave(seed=0, actor_count=3):
    inst = generate_instance(4, 4, seed=31)
    params = init_params(seed=seed)
    budget = ExpertConfig(improve_evals=150, patience=10)
    return inst, params, generate_demos([inst], params, actor_count, budget, seed=seed)


def test_generate_demos_shapes_and_ratios():
    inst, _, batches = small_demo_wave()
    assert len(batches) == 1
    batch = batches[0]
    assert len(batch.demos) == 3
    min_len = min(len(d.actor.actions) for d in batch.demos)
    assert 0 <= batch.slice_index <= min_len
    for demo in batch.demos:
        assert demo.prefix == demo.actor.actions[: batch.slice_index]
        assert demo.prefix == demo.expert.actions[: batch.slice_index]
        assert 0 < demo.ratio <= 1.0
        assert demo.expert.makespan <= demo.actor.makespan
        assert len(demo.actor.observations) == len(demo.actor.actions)
        assert len(demo.expert.observations) == len(demo.expert.actions)


def test_generate_demos_deterministic_in_seed():
    _, _, a = small_demo_wave(seed=5)
    _, _, b = small_demo_wave(seed=5)
    _, _, c = small_demo_wave(seed=6)
    assert a[0].slice_index == b[0].slice_index
    assert [d.actor.actions for d in a[0].demos] == [d.actor.actions for d in b[0].demos]
    assert [d.ratio for d in a[0].demos] == [d.ratio for d in b[0].demos]
    assert (
        a[0].slice_index != c[0].slice_index
        or [d.actor.actions for d in a[0].demos] != [d.actor.actions for d in c[0].demos]
    )


def test_generate_demos_rejects_empty():
    params = init_params(seed=0)
    with pytest.raises(ValueError):
        generate_demos([], params, 2, ExpertConfig(), seed=0)
    inst = generate_instance(3, 3, seed=1)
    with pytest.raises(ValueError):
        generate_demos([inst], params, 0, ExpertConfig(), seed=0)


# -- feedback wave -----------------------------------------------------


def identical_demo_batch(ratio=1.0):
    inst = generate_instance(3, 3, seed=41)
    params = init_params(seed=0)
    episode = sample_episode(inst, NetPolicy(params), np.random.default_rng(0), 10, 3)
    demo = ActorDemo(prefix=episode.actions[:1], actor=episode, expert=episode, ratio=ratio)
    return params, [DemoBatch(instance=inst, slice_index=1, demos=[demo])]


def test_feedback_wave_neutral_when_no_improvement():
    params, batches = identical_demo_batch(ratio=1.0)
    before = clone(params)
    stats = train_feedback(params, batches, TrainConfig())
    assert stats.skipped
    assert stats.applied_updates == 0
    assert params_equal(params, before)  # bit-exact neutrality


def test_feedback_wave_drops_identical_pairs():
    # improvement reported but trajectories identical: nothing to learn
    params, batches = identical_demo_batch(ratio=0.9)
    before = clone(params)
    stats = train_feedback(params, batches, TrainConfig())
    assert stats.skipped and stats.skip_reason == "all completions identical"
    assert params_equal(params, before)


def test_feedback_wave_updates_and_moves_toward_expert():
    inst, params, batches = small_demo_wave(seed=2)
    demos = [d for d in batches[0].demos if d.ratio < 1.0]
    if not demos:
        pytest.skip("no expert improvement with this seed")
    config = TrainConfig(max_updates=5, minibatch_size=None, lr=5e-3)
    j = batches[0].slice_index
    demo = demos[0]
    sub = ObservationBatch.from_observations(demo.expert.observations[j:])
    before_logp = action_log_probs(params, sub, demo.expert.actions[j:]).data.sum()
    stats = train_feedback(params, batches, config)
    assert not stats.skipped
    assert 1 <= stats.applied_updates <= 5
    after_logp = action_log_probs(params, sub, demo.expert.actions[j:]).data.sum()
    assert after_logp > before_logp


def test_kl_limit_stops_after_one_applied_update():
    inst, params, batches = small_demo_wave(seed=2)
    if all(d.ratio == 1.0 for d in batches[0].demos):
        pytest.skip("no expert improvement with this seed")
    config = TrainConfig(max_updates=10, minibatch_size=None, lr=0.5, kl_limit=1e-9)
    stats = train_feedback(params, batches, config)
    # the violating update stays applied, then the loop stops
    assert stats.applied_updates == 1
    assert stats.final_kl > config.kl_limit


def test_update_count_capped_by_max_updates():
    inst, params, batches = small_demo_wave(seed=2)
    if all(d.ratio == 1.0 for d in batches[0].demos):
        pytest.skip("no expert improvement with this seed")
    config = TrainConfig(max_updates=3, minibatch_size=None, lr=1e-6, kl_limit=10.0)
    stats = train_feedback(params, batches, config)
    assert stats.applied_updates == 3


def test_feedback_wave_rejects_empty():
    params = init_params(seed=0)
    with pytest.raises(ValueError):
        train_feedback(params, [], TrainConfig())


# -- initial-solution wave ---------------------------------------------


def two_prefix_demos():
    """Two actors whose episodes diverge at the first action, with expert
    makespans chosen so actor 0's prefix is the better one."""
    inst = generate_instance(4, 4, seed=53)
    params = init_params(seed=0)
    policy = NetPolicy(params)
    eps = []
    rng_id = 0
    while len(eps) < 2:
        ep = sample_episode(inst, policy, np.random.default_rng(rng_id), 10, 3)
        rng_id += 1
        if not eps or ep.actions[0] != eps[0].actions[0]:
            eps.append(ep)
    demos = []
    for ep, makespan in zip(eps, (100, 120)):
        expert = Trajectory(
            observations=ep.observations, actions=ep.actions, makespan=makespan
        )
        demos.append(ActorDemo(prefix=ep.actions[:1], actor=ep, expert=expert, ratio=0.9))
    return inst, params, [DemoBatch(instance=inst, slice_index=1, demos=demos)]


def test_initial_wave_reinforces_better_prefix():
    inst, params, batches = two_prefix_demos()
    demo_good, demo_bad = batches[0].demos
    obs = demo_good.actor.observations[0]
    sub = ObservationBatch.from_observations([obs])

    def probs():
        logits = np.asarray(
            action_log_probs(params, sub, [demo_good.actor.actions[0]]).data
        ), np.asarray(action_log_probs(params, sub, [demo_bad.actor.actions[0]]).data)
        return float(logits[0][0]), float(logits[1][0])

    good_before, bad_before = probs()
    stats = train_initial(params, batches, TrainConfig(max_updates=1, minibatch_size=None, lr=5e-3))
    assert not stats.skipped and stats.applied_updates == 1
    good_after, bad_after = probs()
    assert good_after > good_before  # lower expert makespan: reinforced
    assert bad_after < bad_before  # higher expert makespan: penalized


def test_initial_wave_skips_without_spread():
    params, batches = identical_demo_batch(ratio=0.9)
    before = clone(params)
    with pytest.warns(UserWarning, match="no prefix spread"):
        stats = train_initial(params, batches, TrainConfig())
    assert stats.skipped
    assert params_equal(params, before)


def test_initial_wave_skips_zero_slice():
    inst, params, batches = two_prefix_demos()
    batches[0].slice_index = 0
    with pytest.warns(UserWarning, match="no prefix spread"):
        stats = train_initial(params, batches, TrainConfig())
    assert stats.skipped


# -- training loop -----------------------------------------------------


def tiny_loop_config(epochs):
    return TrainConfig(
        epochs=epochs,
        actor_count=2,
        max_updates=3,
        minibatch_size=64,
        expert_evals_start=60,
        expert_evals_step=20,
        expert_patience=6,
        seed=0,
    )


def test_train_loop_epochs_zero_reports_untrained_mean():
    inst = generate_instance(3, 3, seed=61)
    result = train_loop([inst], tiny_loop_config(0))
    assert result.metrics == []
    assert result.best_epoch == 0
    assert np.isfinite(result.best_greedy_mean)


def test_train_loop_writes_artifacts_and_resumes_bit_exact(tmp_path):
    insts = [generate_instance(3, 3, seed=s) for s in (71, 72)]
    full_dir = tmp_path / "full"
    half_dir = tmp_path / "half"

    full = train_loop(insts, tiny_loop_config(2), out_dir=full_dir)
    assert (full_dir / "epoch_000.ckpt").exists()
    assert (full_dir / "epoch_002.ckpt").exists()
    assert (full_dir / "best.ckpt").exists()
    assert (full_dir / "metrics.csv").exists()
    header = (full_dir / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,instance,greedy_makespan,mean_expert_makespan,mean_i,applied_iters,wall_s"
    assert len(full.metrics) == 2 * 2  # epochs x instances

    train_loop(insts, tiny_loop_config(1), out_dir=half_dir)
    resumed_params, _ = load_params(half_dir / "epoch_001.ckpt")
    resumed = train_loop(
        insts, tiny_loop_config(2), out_dir=half_dir,
        params=resumed_params, resume_epoch=1,
    )
    assert params_equal(full.params, clone(resumed.params))


@pytest.mark.filterwarnings("ignore:initial-solution wave skipped")
def test_train_loop_tracks_best_epoch():
    insts = [generate_instance(3, 3, seed=81)]
    result = train_loop(insts, tiny_loop_config(2))
    greedy_by_epoch = {}
    for row in result.metrics:
        greedy_by_epoch.setdefault(row["epoch"], []).append(row["greedy_makespan"])
    means = {e: float(np.mean(v)) for e, v in greedy_by_epoch.items()}
    assert result.best_epoch in means
    assert result.best_greedy_mean == min(means.values())
    # best_params reproduce the recorded best epoch's greedy makespan
    policy = NetPolicy(result.best_params)
    got = float(np.mean([rollout(i, policy).makespan for i in insts]))
    assert got == result.best_greedy_mean


def test_train_loop_warns_on_mismatched_sizes():
    insts = [generate_instance(2, 2, seed=1), generate_instance(6, 6, seed=2)]
    with pytest.warns(UserWarning, match="operation count"):
        train_loop(insts, tiny_loop_config(0))


def test_write_metrics_roundtrip(tmp_path):
    rows = [
        {
            "epoch": 1, "instance": "a", "greedy_makespan": 10,
            "mean_expert_makespan": 9.5, "mean_i": 0.95,
            "applied_iters": 4, "wall_s": 0.5,
        }
    ]
    path = tmp_path / "metrics.csv"
    write_metrics(rows, path)
    lines = path.read_text().splitlines()
    assert lines[1] == "1,a,10,9.5,0.95,4,0.5"
