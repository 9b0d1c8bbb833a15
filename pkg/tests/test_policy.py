"""Tests for the task-parameter policy, its gradient and closed-loop execution."""

import numpy as np
import numpy.testing as npt
import pytest

from config.settings import DmpConfig, GoalSlot, PolicyConfig, PolicyMode, StartPoint
from src.core.errors import DimensionError, DomainError
from src.core.gradcheck import fd_directional
from src.core.params import from_vector, to_vector
from src.core.rng import make_rng
from src.policy.mila import (
    MilaExecutor,
    decode_output,
    encode_obs,
    init_policy,
    plan_episode,
    policy_forward,
    predict_task_params,
    start_point_policy,
    subtask_boundaries,
)
from src.sim.injectors import SubtaskOcclusion
from src.sim.world import SimWorld, sample_task
from src.training.loss import build_loss_context, covariance_loss, loss_value


def test_durations_stay_inside_bounds(tiny_policy):
    for raw in [-50.0, 0.0, 50.0]:
        tp, dtau = decode_output(tiny_policy, np.array([0.1, 0.2, 0.3, 0.4, raw]))
        assert tiny_policy.tau_min <= tp.tau <= tiny_policy.tau_max
        assert dtau >= 0.0
    tp, _ = decode_output(tiny_policy, np.array([0.1, 0.2, 0.3, 0.4, 0.0]))
    assert tp.tau == pytest.approx(0.5 * (tiny_policy.tau_min + tiny_policy.tau_max))
    npt.assert_allclose(tp.start, [0.1, 0.2])
    npt.assert_allclose(tp.goal, [0.3, 0.4])


def test_init_policy_validates_initial_duration(tiny_policy_config):
    with pytest.raises(DomainError):
        init_policy(tiny_policy_config, 2, tau_init=20.0)


def test_boundaries_round_and_clamp():
    boundaries, truncated = subtask_boundaries([1.0, 1.0, 1.0], 0.1, 25)
    assert boundaries == [10, 20, 24]
    assert truncated
    boundaries, truncated = subtask_boundaries([0.26, 0.5], 0.1, 25)
    assert boundaries == [3, 8]
    assert not truncated


def test_forward_reads_frames_at_predicted_boundaries(tiny_policy, synthetic_demo):
    forward = policy_forward(tiny_policy, synthetic_demo.frames, 0.1)
    taus = [tp.tau for tp in forward.task_params]
    expected, truncated = subtask_boundaries(taus, 0.1, synthetic_demo.n_frames)
    assert forward.subtasks[0].frame_index == 0
    assert [s.frame_index for s in forward.subtasks[1:]] == expected[:-1]
    assert forward.boundaries == expected
    assert forward.truncated == truncated


def test_encoder_output_is_bounded(tiny_policy, synthetic_demo):
    embedding = encode_obs(tiny_policy, synthetic_demo.frame(0))
    assert embedding.shape == (tiny_policy.embed_dim,)
    assert np.all(np.abs(embedding) < 1.0)
    npt.assert_array_equal(embedding, encode_obs(tiny_policy, synthetic_demo.frames[0]))


def test_predict_checks_subtask_and_frame_shape(tiny_policy, synthetic_demo):
    with pytest.raises(DomainError):
        predict_task_params(tiny_policy, synthetic_demo.frames[0], 3)
    with pytest.raises(DimensionError):
        predict_task_params(tiny_policy, np.zeros((3, 3, 4)), 0)


@pytest.mark.parametrize("goal_slot", [GoalSlot.EMBEDDING.value, GoalSlot.Z0.value])
def test_policy_gradient_matches_finite_differences(goal_slot, tiny_policy, synthetic_demo, random_repertoire, tiny_meta_config):
    ctx = build_loss_context(random_repertoire, tiny_meta_config)
    _, grads = covariance_loss(tiny_policy, synthetic_demo, ctx, goal_slot)
    template = tiny_policy

    def loss(vector):
        return loss_value(from_vector(template, vector), synthetic_demo, ctx, goal_slot)

    rng = make_rng(5)
    for _ in range(3):
        direction = rng.normal(size=to_vector(tiny_policy).size)
        direction /= np.linalg.norm(direction)
        numeric = fd_directional(loss, to_vector(tiny_policy), direction, h=1e-6)
        analytic = float(to_vector(grads) @ direction)
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_goal_slot_decides_where_goal_gradient_goes(tiny_policy, synthetic_demo, random_repertoire, tiny_meta_config):
    ctx = build_loss_context(random_repertoire, tiny_meta_config)
    _, with_embedding = covariance_loss(tiny_policy, synthetic_demo, ctx, GoalSlot.EMBEDDING.value)
    _, with_z0 = covariance_loss(tiny_policy, synthetic_demo, ctx, GoalSlot.Z0.value)
    npt.assert_array_equal(with_embedding.z0, 0.0)
    assert np.any(with_z0.z0 != 0.0)


def test_start_point_defaults():
    assert start_point_policy(PolicyMode.TRAINING.value) == StartPoint.PREDICTED
    assert start_point_policy(PolicyMode.EXECUTION.value) == StartPoint.MEASURED
    custom = PolicyConfig(exec_start_point=StartPoint.PREDICTED.value)
    assert start_point_policy(PolicyMode.EXECUTION.value, custom) == StartPoint.PREDICTED


def test_training_plan_rolls_out_every_subtask(tiny_policy, synthetic_demo, random_repertoire):
    plan = plan_episode(tiny_policy, synthetic_demo, random_repertoire, dmp=DmpConfig(substeps=10))
    assert len(plan.trajectories) == 3
    for tp, traj in zip(plan.task_params, plan.trajectories):
        npt.assert_allclose(traj.positions[0], tp.start)
    assert plan.concatenated().n_samples == sum(t.n_samples for t in plan.trajectories)


# =============================================================================
# EXECUTION
# =============================================================================


@pytest.fixture
def world_policy(world_config, tiny_policy_config):
    return init_policy(tiny_policy_config, world_config.grid_size, n_subtasks=3, seed=1, tau_init=1.0)


def test_executor_reads_one_frame_per_subtask(world_policy, expert_repertoire, world_config, dmp_config):
    world = SimWorld(sample_task(world_config, 2), world_config)
    calls = []
    plan = MilaExecutor(world_policy, expert_repertoire, dmp_config, world_config).run(
        world, subtask_hook=lambda c, tick, expected: calls.append((c, tick, expected))
    )
    assert [c for c, _, _ in calls] == [0, 1, 2]
    assert list(plan.frames_read) == world.trace.subtask_starts
    assert [tick for _, tick, _ in calls] == list(plan.frames_read)
    assert plan.boundaries[-1] == world.tick
    for tp, tick in zip(plan.task_params, plan.frames_read):
        npt.assert_allclose(tp.start, world.trace.states[tick].ee)


def test_executor_is_blind_to_occlusion_inside_subtasks(world_policy, expert_repertoire, world_config, dmp_config):
    spec = sample_task(world_config, 4)
    clean = SimWorld(spec, world_config)
    MilaExecutor(world_policy, expert_repertoire, dmp_config, world_config).run(clean)
    occluded = SimWorld(spec, world_config)
    occlusion = SubtaskOcclusion(fraction=1.0, seed=3)
    MilaExecutor(world_policy, expert_repertoire, dmp_config, world_config).run(occluded, occlusion, occlusion)
    assert occlusion.intervals
    npt.assert_array_equal(occluded.trace.ee_path(), clean.trace.ee_path())


def test_executor_needs_one_head_per_skill(tiny_policy_config, expert_repertoire, world_config, dmp_config):
    params = init_policy(tiny_policy_config, world_config.grid_size, n_subtasks=2, tau_init=1.0)
    with pytest.raises(DimensionError):
        MilaExecutor(params, expert_repertoire, dmp_config, world_config)
