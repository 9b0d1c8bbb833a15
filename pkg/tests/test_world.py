"""Tests for the planar tabletop world."""

from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from config.settings import WorldConfig
from src.core.errors import ConfigError, DomainError, NonFiniteStateError
from src.sim.world import (
    OBJECT_CH,
    SimWorld,
    TaskSpec,
    grasp_state,
    held_out_code,
    initial_state,
    latin_square_specs,
    release_state,
    render_observation,
    sample_task,
    step_dynamics,
)


@pytest.fixture
def spec():
    return TaskSpec(0.5, [0.3, 0.5], [0.7, 0.5], [0.7, 0.8], [0.5, 0.1])


# =============================================================================
# TASKS
# =============================================================================


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_sampled_layouts_respect_separation_and_margin(world_config, seed):
    spec = sample_task(world_config, seed)
    assert spec.min_separation() >= world_config.min_separation
    for p in [spec.object_pos, spec.basket_pos, spec.marker_pos]:
        assert np.all(p >= world_config.margin) and np.all(p <= 1 - world_config.margin)
    lo, hi = world_config.train_codes
    assert lo <= spec.object_code <= hi


def test_sampling_is_deterministic(world_config):
    a = sample_task(world_config, 9, split="test")
    b = sample_task(world_config, 9, split="test")
    assert a.to_dict() == b.to_dict()
    lo, hi = world_config.test_codes
    assert lo <= a.object_code <= hi


def test_impossible_separation_raises():
    config = WorldConfig(min_separation=2.0, max_tries=5)
    with pytest.raises(ConfigError):
        sample_task(config, 0)


def test_object_code_must_be_in_unit_interval():
    with pytest.raises(DomainError):
        TaskSpec(1.5, [0.3, 0.5], [0.7, 0.5], [0.7, 0.8], [0.5, 0.1])


def test_spec_dict_round_trip(spec):
    restored = TaskSpec.from_dict(spec.to_dict())
    npt.assert_array_equal(restored.basket_pos, spec.basket_pos)
    assert restored.object_code == spec.object_code


def test_latin_square_groups_share_their_held_out_code(world_config):
    groups = latin_square_specs(world_config, n_groups=3, trials_per_group=4, seed=7)
    assert [len(g) for g in groups] == [4, 4, 4]
    for g, trials in enumerate(groups):
        codes = {t.object_code for t in trials}
        assert codes == {held_out_code(world_config, 7, g)}
        lo, hi = world_config.test_codes
        assert lo <= codes.pop() <= hi


def test_latin_square_spreads_objects_over_distinct_cells(world_config):
    trials = latin_square_specs(world_config, n_groups=1, trials_per_group=4, seed=3)[0]
    edges = np.linspace(world_config.margin, 1 - world_config.margin, 5)
    rows = {int(np.searchsorted(edges, t.object_pos[1]) - 1) for t in trials}
    cols = {int(np.searchsorted(edges, t.object_pos[0]) - 1) for t in trials}
    assert len(rows) == 4 and len(cols) == 4


# =============================================================================
# RENDERING
# =============================================================================


def test_render_shape_and_range(spec, world_config):
    obs = render_observation(initial_state(spec), spec, world_config)
    assert obs.grid.shape == (4, 4, 4)
    assert obs.grid.min() >= 0.0 and obs.grid.max() <= 1.0
    assert obs.flat.shape == (64,)


def test_object_channel_scales_with_code(spec, world_config):
    dark = replace(spec, object_code=0.0)
    obs = render_observation(initial_state(dark), dark, world_config)
    npt.assert_array_equal(obs.grid[..., OBJECT_CH], 0.0)
    bright = render_observation(initial_state(spec), spec, world_config)
    assert bright.grid[..., OBJECT_CH].max() > 0.0


# =============================================================================
# DYNAMICS
# =============================================================================


def test_speed_limit_clamps_long_moves(spec, world_config):
    state = step_dynamics(initial_state(spec), np.array([0.5, 0.9]), world_config)
    assert state.clamped
    step = np.linalg.norm(state.ee - spec.ee_start)
    assert step == pytest.approx(world_config.max_speed * world_config.delta)
    assert state.tick == 1


def test_commands_outside_the_workspace_are_clamped(spec, world_config):
    state = initial_state(spec)
    state = replace(state, ee=np.array([0.99, 0.5]))
    moved = step_dynamics(state, np.array([1.01, 0.5]), world_config)
    assert moved.clamped
    assert moved.ee[0] == pytest.approx(1.0)


def test_non_finite_command_raises(spec, world_config):
    with pytest.raises(NonFiniteStateError):
        step_dynamics(initial_state(spec), np.array([np.nan, 0.5]), world_config)


def test_grasp_only_within_radius(spec):
    far, distance = grasp_state(initial_state(spec), 0.03)
    assert not far.holding and distance > 0.03
    near = replace(initial_state(spec), ee=spec.object_pos + np.array([0.01, 0.0]))
    held, _ = grasp_state(near, 0.03)
    assert held.holding
    npt.assert_allclose(held.object_pos, near.ee)


def test_held_object_follows_and_drops_into_basket(spec, world_config):
    state = replace(initial_state(spec), ee=spec.object_pos.copy())
    state, _ = grasp_state(state, 0.03)
    for _ in range(20):
        state = step_dynamics(state, spec.basket_pos, world_config)
    npt.assert_allclose(state.object_pos, state.ee)
    state, distance = release_state(state, world_config)
    assert state.object_in_basket and distance < world_config.basket_inner_radius
    npt.assert_allclose(state.object_pos, spec.basket_pos)


def test_paddle_pushes_basket_ahead(world_config):
    spec = TaskSpec(0.5, [0.2, 0.2], [0.4, 0.5], [0.8, 0.5], [0.3, 0.5])
    state = replace(initial_state(spec), released=True)
    for _ in range(10):
        state = step_dynamics(state, np.array([0.6, 0.5]), world_config)
    npt.assert_allclose(state.ee, [0.6, 0.5])
    npt.assert_allclose(state.basket_pos, [0.6 + world_config.push_radius, 0.5], atol=1e-12)


def test_basket_untouched_before_release(world_config):
    spec = TaskSpec(0.5, [0.2, 0.2], [0.4, 0.5], [0.8, 0.5], [0.3, 0.5])
    state = initial_state(spec)
    for _ in range(10):
        state = step_dynamics(state, np.array([0.6, 0.5]), world_config)
    npt.assert_allclose(state.basket_pos, spec.basket_pos)


def test_sim_world_records_trace_and_displacements(spec, world_config):
    world = SimWorld(spec, world_config)
    world.mark_subtask_start()
    world.command(np.array([0.5, 0.12]))
    world.displace(np.array([0.05, 0.0]))
    world.command(np.array([0.55, 0.14]))
    assert world.tick == 2
    assert len(world.trace.states) == 3
    assert world.trace.perturbation_ticks == [1]
    assert world.trace.subtask_starts == [0]
    npt.assert_allclose(world.trace.states[1].ee, [0.55, 0.12])
    assert world.trace.ee_path().shape == (3, 2)
