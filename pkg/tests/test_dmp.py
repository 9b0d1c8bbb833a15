"""Tests for the discrete movement primitives."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from src.core.errors import DomainError, FitError, InstabilityError, NonFiniteStateError
from src.core.gradcheck import relative_error
from src.core.rng import make_rng
from src.sim.expert import min_jerk, template_trajectory
from src.skills.dmp import (
    TaskParams,
    Trajectory,
    basis_features,
    basis_layout,
    execute_online,
    fit_forcing_weights,
    make_primitive,
    phase,
    phase_response,
    reproduction_rmse,
    rollout,
    rollout_with_sensitivities,
    sample_count,
)


@pytest.fixture
def wiggly():
    return make_primitive("wiggly", make_rng(1).normal(0.0, 30.0, size=(2, 12)))


@pytest.fixture
def task():
    return TaskParams(np.array([0.2, 0.7]), np.array([0.8, 0.3]), 1.0)


# =============================================================================
# PHASE & BASIS
# =============================================================================


def test_phase_decays_to_one_percent_at_tau():
    assert phase(0.0, 2.0) == pytest.approx(1.0)
    assert phase(2.0, 2.0) == pytest.approx(0.01)
    npt.assert_allclose(phase(np.array([0.0, 1.0]), 1.0), [1.0, 0.01])


@pytest.mark.parametrize("t,tau", [(0.5, 0.0), (0.5, -1.0), (-0.1, 1.0)])
def test_phase_rejects_bad_arguments(t, tau):
    with pytest.raises(DomainError):
        phase(t, tau)


def test_basis_features_are_normalized():
    centers, widths = basis_layout(15)
    for s in [1.0, 0.5, 0.03, 0.0]:
        features = basis_features(s, centers, widths)
        assert features.shape == (15,)
        assert features.sum() == pytest.approx(1.0)
        assert np.all(features >= 0)


def test_neighbouring_bases_cross_at_half():
    centers, widths = basis_layout(10)
    midpoint = 0.5 * (centers[0] + centers[1])
    assert math.exp(-widths[0] * (midpoint - centers[0]) ** 2) == pytest.approx(0.5)


def test_sample_count_includes_both_endpoints():
    assert sample_count(1.0, 0.01) == 101
    assert sample_count(2.0, 0.02) == 101
    assert sample_count(0.05, 0.1) == 2


def test_task_params_reject_non_positive_duration():
    with pytest.raises(DomainError):
        TaskParams(np.zeros(2), np.ones(2), 0.0)


# =============================================================================
# ROLLOUT
# =============================================================================


def test_unforced_rollout_converges_to_goal(task):
    prim = make_primitive("flat", np.zeros((2, 10)))
    traj = rollout(prim, task, dt=0.01, n_samples=301)
    npt.assert_allclose(traj.positions[0], task.start)
    npt.assert_allclose(traj.positions[-1], task.goal, atol=1e-6)
    npt.assert_allclose(traj.velocities[-1], 0.0, atol=1e-4)


def test_random_rollouts_end_at_the_goal():
    rng = make_rng(21)
    worst = 0.0
    for _ in range(1000):
        prim = make_primitive("random", rng.normal(0.0, 1.0, size=(2, 20)))
        tp = TaskParams(rng.uniform(0.3, 0.7, size=2), rng.uniform(0.3, 0.7, size=2), rng.uniform(0.5, 5.0))
        traj = rollout(prim, tp, dt=1.0 / 30.0)
        worst = max(worst, float(np.linalg.norm(traj.positions[-1] - tp.goal)))
    assert worst < 1e-3


def test_doubling_tau_and_dt_gives_identical_samples(wiggly, task):
    slow = TaskParams(task.start, task.goal, 2.0 * task.tau)
    fast_traj = rollout(wiggly, task, dt=0.01)
    slow_traj = rollout(wiggly, slow, dt=0.02)
    assert fast_traj.n_samples == slow_traj.n_samples
    npt.assert_allclose(slow_traj.positions, fast_traj.positions, rtol=1e-10, atol=1e-12)


def test_rollout_is_affine_in_start_and_goal(wiggly, task):
    a, b = phase_response(wiggly, 11, substeps_per_sample=100)
    traj = rollout(wiggly, task, dt=0.1, n_samples=11, substeps=100)
    npt.assert_allclose(traj.positions, a * task.start + b * task.goal, atol=1e-10)


def test_sensitivities_match_finite_differences(wiggly, task):
    traj, sens = rollout_with_sensitivities(wiggly, task, dt=0.02)
    h = 1e-6
    for d in range(2):
        bump = np.eye(2)[d] * h
        plus = rollout(wiggly, TaskParams(task.start, task.goal + bump, task.tau), 0.02).positions
        minus = rollout(wiggly, TaskParams(task.start, task.goal - bump, task.tau), 0.02).positions
        npt.assert_allclose(sens.d_pos_d_goal[:, d], ((plus - minus) / (2 * h))[:, d], atol=1e-6)

    step = 1e-5
    n = traj.n_samples
    plus = rollout(wiggly, TaskParams(task.start, task.goal, task.tau + step), 0.02, n_samples=n).positions
    minus = rollout(wiggly, TaskParams(task.start, task.goal, task.tau - step), 0.02, n_samples=n).positions
    npt.assert_allclose(sens.d_pos_d_tau, (plus - minus) / (2 * step), rtol=1e-3, atol=1e-5)


def _fd_columns(positions_at, h: float) -> np.ndarray:
    """Column d is the central difference of dimension d along unit vector d."""
    columns = []
    for d in range(2):
        bump = np.eye(2)[d] * h
        columns.append((positions_at(bump)[:, d] - positions_at(-bump)[:, d]) / (2 * h))
    return np.column_stack(columns)


def test_sensitivities_match_finite_differences_on_random_cases():
    rng = make_rng(5)
    dt = 0.02
    for _ in range(50):
        prim = make_primitive("random", rng.normal(0.0, 30.0, size=(2, 12)))
        tp = TaskParams(rng.uniform(0.0, 1.0, size=2), rng.uniform(0.0, 1.0, size=2), rng.uniform(0.5, 2.0))
        traj, sens = rollout_with_sensitivities(prim, tp, dt)
        n = traj.n_samples

        d_start = _fd_columns(lambda b: rollout(prim, TaskParams(tp.start + b, tp.goal, tp.tau), dt, n_samples=n).positions, 1e-5)
        d_goal = _fd_columns(lambda b: rollout(prim, TaskParams(tp.start, tp.goal + b, tp.tau), dt, n_samples=n).positions, 1e-5)
        assert relative_error(sens.d_pos_d_start, d_start) < 1e-4
        assert relative_error(sens.d_pos_d_goal, d_goal) < 1e-4

        step = 1e-6 * tp.tau
        plus = rollout(prim, TaskParams(tp.start, tp.goal, tp.tau + step), dt, n_samples=n).positions
        minus = rollout(prim, TaskParams(tp.start, tp.goal, tp.tau - step), dt, n_samples=n).positions
        assert relative_error(sens.d_pos_d_tau, (plus - minus) / (2 * step)) < 1e-3


def test_unstable_integration_raises():
    prim = make_primitive("stiff", np.zeros((2, 5)))
    tp = TaskParams(np.zeros(2), np.ones(2), 0.01)
    with pytest.raises(InstabilityError):
        rollout(prim, tp, dt=1.0, n_samples=50, substeps=1)


# =============================================================================
# ONLINE EXECUTION
# =============================================================================


def test_online_execution_on_perfect_tracker_matches_rollout(wiggly, task):
    offline = rollout(wiggly, task, dt=0.02)
    online = execute_online(wiggly, task, lambda p: p, 0.02, horizon_factor=1.0, stop_within_tol=False)
    assert online.n_samples == offline.n_samples
    npt.assert_allclose(online.positions, offline.positions, atol=1e-9)


def test_online_execution_absorbs_a_displacement(wiggly, task):
    ticks = {"n": 0}

    def world(command):
        ticks["n"] += 1
        return command + (np.array([0.1, -0.1]) if ticks["n"] == 20 else 0.0)

    traj = execute_online(wiggly, task, world, 0.02, horizon_factor=3.0)
    assert np.linalg.norm(traj.positions[-1] - task.goal) < 1e-3


def test_online_execution_rejects_non_finite_measurements(wiggly, task):
    with pytest.raises(NonFiniteStateError):
        execute_online(wiggly, task, lambda p: np.full(2, np.nan), 0.02)


def test_online_execution_recovers_from_a_kick_at_half_duration():
    rng = make_rng(13)
    dt = 0.02
    for _ in range(20):
        prim = make_primitive("random", rng.normal(0.0, 5.0, size=(2, 12)))
        tp = TaskParams(rng.uniform(0.2, 0.8, size=2), rng.uniform(0.2, 0.8, size=2), rng.uniform(0.5, 2.0))
        angle = rng.uniform(0.0, 2.0 * np.pi)
        kick = 0.2 * np.array([np.cos(angle), np.sin(angle)])
        kick_tick = int(round(0.5 * tp.tau / dt))
        ticks = {"n": 0}

        def world(command, kick=kick, kick_tick=kick_tick, ticks=ticks):
            ticks["n"] += 1
            return command + (kick if ticks["n"] == kick_tick else 0.0)

        traj = execute_online(prim, tp, world, dt, horizon_factor=1.5, goal_tol=1e-3)
        assert ticks["n"] > kick_tick
        assert traj.duration <= 1.5 * tp.tau + dt
        assert np.linalg.norm(traj.positions[-1] - tp.goal) < 1e-3


# =============================================================================
# FITTING
# =============================================================================


def test_fit_reproduces_a_minimum_jerk_motion():
    demo = template_trajectory("reach", np.array([0.2, 0.3]), np.array([0.7, 0.6]), 2.0, 1.0 / 300.0)
    prim = fit_forcing_weights(demo, n_basis=20, skill_id="reach")
    assert reproduction_rmse(prim, demo) < 5e-3


def test_fit_gives_zero_weights_on_a_motionless_dimension():
    t = np.linspace(0.0, 1.0, 101)
    p, dp = min_jerk(t)
    positions = np.column_stack([p, np.full_like(p, 0.4)])
    velocities = np.column_stack([dp, np.zeros_like(dp)])
    prim = fit_forcing_weights(Trajectory(0.01, positions, velocities), n_basis=10)
    npt.assert_array_equal(prim.weights[1], 0.0)
    assert np.any(prim.weights[0] != 0.0)


def test_fit_rejects_short_and_degenerate_demos():
    short = Trajectory(0.1, np.linspace(0, 1, 10).reshape(5, 2), np.zeros((5, 2)))
    with pytest.raises(FitError):
        fit_forcing_weights(short, n_basis=20)
    still = Trajectory(0.1, np.ones((30, 2)), np.zeros((30, 2)))
    with pytest.raises(FitError):
        fit_forcing_weights(still, n_basis=10)
