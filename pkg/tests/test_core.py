"""Tests for the network, optimizer, parameter containers and seeded streams."""

import numpy as np
import numpy.testing as npt
import pytest

from src.core.errors import DimensionError, FiniteDifferenceError, NonFiniteGradientError
from src.core.gradcheck import fd_directional, fd_gradient, relative_error
from src.core.mlp import init_mlp, mlp_backward, mlp_forward
from src.core.optim import init_opt_state, opt_step
from src.core.params import add_scaled, from_vector, global_norm, mean_containers, to_vector, zeros_like
from src.core.rng import child_seed, make_rng, split_rng


@pytest.fixture
def net():
    return init_mlp([5, 4, 3], ["tanh", "identity"], seed=0)


def test_mlp_gradient_matches_finite_differences(net):
    rng = make_rng(1)
    x = rng.normal(size=(7, 5))
    target = rng.normal(size=(7, 3))

    def loss(vector):
        out, _ = mlp_forward(from_vector(net, vector), x)
        return 0.5 * float(np.sum((out - target) ** 2))

    out, tape = mlp_forward(net, x)
    grads, _ = mlp_backward(net, tape, out - target)
    assert relative_error(to_vector(grads), fd_gradient(loss, to_vector(net))) < 1e-6


def test_mlp_input_gradient(net):
    x = make_rng(2).normal(size=5)
    out, tape = mlp_forward(net, x)
    _, d_input = mlp_backward(net, tape, np.ones(3))

    def total(v):
        return float(np.sum(mlp_forward(net, v)[0]))

    npt.assert_allclose(d_input, fd_gradient(total, x), atol=1e-8)


def test_mlp_rejects_bad_shapes(net):
    with pytest.raises(DimensionError):
        mlp_forward(net, np.zeros(4))
    out, tape = mlp_forward(net, np.zeros(5))
    with pytest.raises(DimensionError):
        mlp_backward(net, tape, np.zeros(2))
    other = init_mlp([5, 6, 3], ["tanh", "identity"], seed=0)
    with pytest.raises(DimensionError):
        mlp_backward(other, tape, np.zeros(3))


def test_adam_moves_against_the_gradient():
    params = np.array([1.0, -2.0])
    state = init_opt_state(params, lr=0.1)
    updated, state = opt_step(state, params, np.array([0.5, -0.5]))
    npt.assert_allclose(updated, [0.9, -1.9], atol=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_is_a_no_op(net):
    state = init_opt_state(net)
    updated, state = opt_step(state, net, zeros_like(net))
    npt.assert_array_equal(to_vector(updated), to_vector(net))
    assert state.step == 1


def test_adam_rejects_non_finite_gradients(net):
    grads = zeros_like(net)
    bad = add_scaled(grads, from_vector(net, np.full(to_vector(net).size, np.nan)), 1.0)
    with pytest.raises(NonFiniteGradientError) as info:
        opt_step(init_opt_state(net), net, bad)
    assert info.value.layer == "layer0.weight"


def test_vector_round_trip_and_container_helpers(net):
    vector = to_vector(net)
    npt.assert_array_equal(to_vector(from_vector(net, vector)), vector)
    with pytest.raises(DimensionError):
        from_vector(net, vector[:-1])
    doubled = add_scaled(net, net, 1.0)
    assert global_norm(doubled) == pytest.approx(2.0 * global_norm(net))
    npt.assert_allclose(to_vector(mean_containers([net, doubled])), 1.5 * vector)


def test_finite_difference_reports_the_failing_coordinate():
    def loss(v):
        return float("nan") if v[1] > 0.5 else float(np.sum(v))

    with pytest.raises(FiniteDifferenceError) as info:
        fd_gradient(loss, np.array([0.0, 0.5]), h=0.1)
    assert info.value.coordinate == 1


def test_directional_derivative_of_a_quadratic():
    value = fd_directional(lambda v: float(v @ v), np.array([1.0, 2.0]), np.array([1.0, 0.0]))
    assert value == pytest.approx(2.0)


def test_child_streams_are_reproducible_and_distinct():
    assert child_seed(3, "policy", 1) == child_seed(3, "policy", 1)
    assert child_seed(3, "policy", 1) != child_seed(3, "policy", 2)
    assert 0 <= child_seed(3, "x") < 2**63
    npt.assert_array_equal(split_rng(4, "a").random(3), split_rng(4, "a").random(3))
    assert not np.array_equal(split_rng(4, "a").random(3), split_rng(4, "b").random(3))
