"""Tests for the covariance-weighted imitation loss."""

import numpy as np
import numpy.testing as npt
import pytest

from config.settings import MetaConfig
from src.core.errors import DimensionError
from src.core.gradcheck import fd_gradient
from src.skills.dmp import TaskParams, phase_response, rollout
from src.skills.gmr import scaled_profile
from src.skills.repertoire import SkillRepertoire
from src.training.loss import build_loss_context, episode_loss, interpolate_demo

from tests.conftest import SKILLS

DELTA = 0.05


@pytest.fixture
def meta():
    return MetaConfig(n_phase_samples=21, phase_substeps=50)


def _pack(tps):
    return np.concatenate([np.concatenate([tp.start, tp.goal, [tp.tau]]) for tp in tps])


def _unpack(vector):
    return [TaskParams(vector[5 * c : 5 * c + 2], vector[5 * c + 2 : 5 * c + 4], vector[5 * c + 4]) for c in range(3)]


def expert_episode(repertoire: SkillRepertoire):
    """Three chained rollouts sampled every DELTA, and the parameters that made them."""
    points = [np.array([0.5, 0.1]), np.array([0.3, 0.6]), np.array([0.7, 0.5]), np.array([0.72, 0.85])]
    ticks = [30, 24, 20]
    tps = []
    positions = [points[0][None]]
    for c, skill in enumerate(SKILLS):
        tp = TaskParams(points[c], points[c + 1], ticks[c] * DELTA)
        traj = rollout(repertoire.primitive(skill), tp, DELTA, ticks[c] + 1)
        positions.append(traj.positions[1:])
        tps.append(tp)
    return tps, np.vstack(positions)


def test_interpolation_holds_the_last_sample():
    positions = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 2.0]])
    values, slopes, clamped = interpolate_demo(positions, 0.5, np.array([0.25, 0.75, 1.5]))
    npt.assert_allclose(values, [[0.5, 1.0], [1.5, 2.0], [2.0, 2.0]])
    npt.assert_allclose(slopes, [[2.0, 4.0], [2.0, 0.0], [0.0, 0.0]])
    assert clamped


def test_true_parameters_beat_a_shifted_goal(expert_repertoire, meta):
    ctx = build_loss_context(expert_repertoire, meta)
    tps, positions = expert_episode(expert_repertoire)
    truth, _ = episode_loss(tps, positions, DELTA, ctx)
    shifted = list(tps)
    shifted[1] = TaskParams(tps[1].start, tps[1].goal + np.array([0.05, 0.0]), tps[1].tau)
    worse, _ = episode_loss(shifted, positions, DELTA, ctx)
    assert truth.total < 1e-4
    assert worse.total > 10 * truth.total


def test_unweighted_loss_is_the_plain_squared_error(random_repertoire, meta):
    ctx = build_loss_context(random_repertoire, meta, identity_profiles=True)
    tps, positions = expert_episode(random_repertoire)
    tps = [TaskParams(tp.start + 0.01, tp.goal - 0.02, tp.tau * 1.1) for tp in tps]
    loss, _ = episode_loss(tps, positions, DELTA, ctx)

    expected = 0.0
    t_c = 0.0
    u = np.linspace(0.0, 1.0, meta.n_phase_samples)
    for skill, tp in zip(SKILLS, tps):
        a, b = phase_response(random_repertoire.primitive(skill), meta.n_phase_samples, meta.phase_substeps)
        values, _, _ = interpolate_demo(positions, DELTA, t_c + u * tp.tau)
        expected += np.sum((values - a * tp.start - b * tp.goal) ** 2)
        t_c += tp.tau
    assert loss.total == pytest.approx(expected / positions.shape[0])


def test_scaling_every_covariance_scales_the_loss(random_repertoire, meta):
    tps, positions = expert_episode(random_repertoire)
    tps = [TaskParams(tp.start, tp.goal + 0.03, tp.tau) for tp in tps]
    base = build_loss_context(random_repertoire, meta)
    scaled = SkillRepertoire(
        random_repertoire.primitives, {s: scaled_profile(p, 4.0) for s, p in random_repertoire.profiles.items()}
    )
    loss, _ = episode_loss(tps, positions, DELTA, base)
    quarter, _ = episode_loss(tps, positions, DELTA, build_loss_context(scaled, meta))
    assert quarter.total == pytest.approx(loss.total / 4.0)


def test_gamma_weights_subtasks(random_repertoire, meta):
    tps, positions = expert_episode(random_repertoire)
    tps = [TaskParams(tp.start, tp.goal + 0.03, tp.tau) for tp in tps]
    plain, _ = episode_loss(tps, positions, DELTA, build_loss_context(random_repertoire, meta))
    weighted, _ = episode_loss(tps, positions, DELTA, build_loss_context(random_repertoire, meta, gamma=[2.0, 1.0, 0.0]))
    n = positions.shape[0]
    assert weighted.total == pytest.approx((2.0 * plain.per_subtask[0] + plain.per_subtask[1]) / n)


def test_task_parameter_gradient_matches_finite_differences(random_repertoire, meta):
    ctx = build_loss_context(random_repertoire, meta)
    tps, positions = expert_episode(random_repertoire)
    tps = [TaskParams(tp.start + 0.02, tp.goal - 0.03, tp.tau * 0.93) for tp in tps]
    _, grads = episode_loss(tps, positions, DELTA, ctx)
    analytic = np.concatenate([np.concatenate([g[0], g[1], [g[2]]]) for g in grads])

    def loss(vector):
        return episode_loss(_unpack(vector), positions, DELTA, ctx)[0].total

    numeric = fd_gradient(loss, _pack(tps), h=1e-6)
    npt.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_overlong_durations_flag_truncation(random_repertoire, meta):
    ctx = build_loss_context(random_repertoire, meta)
    tps, positions = expert_episode(random_repertoire)
    long = [TaskParams(tp.start, tp.goal, 3.0) for tp in tps]
    loss, _ = episode_loss(long, positions, DELTA, ctx)
    assert loss.truncated


def test_context_checks_sizes(random_repertoire, meta):
    with pytest.raises(DimensionError):
        build_loss_context(random_repertoire, meta, gamma=[1.0, 1.0])
    ctx = build_loss_context(random_repertoire, meta, skills=["place"], gamma=[1.0])
    assert ctx.n_subtasks == 1
    with pytest.raises(DimensionError):
        episode_loss([TaskParams(np.zeros(2), np.ones(2), 1.0)] * 2, np.zeros((10, 2)), DELTA, ctx)


def test_identity_context_uses_unit_precision(expert_repertoire, meta):
    ctx = build_loss_context(expert_repertoire, meta, identity_profiles=True)
    npt.assert_allclose(ctx.precisions[0], np.repeat(np.eye(2)[None], meta.n_phase_samples, axis=0))
