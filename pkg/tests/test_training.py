#!/usr/bin/env python3
"""
Test script for the loss evaluator, bias least squares, trial grid and the
projected Adam descent
"""

import logging
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from small_runs import SMALL, small_config, small_context, small_data
from sgnn.architecture import build_context
from sgnn.data_io import Dataset
from sgnn.exceptions import NonConvergenceError
from sgnn.models import GermPolicy, HyperparameterVector, TrainConfig
from sgnn.training import (
    LossEvaluator,
    TrainTrace,
    adam_projected_descent,
    beta_ls_gradient,
    beta_ls_objective,
    delta_max,
    finite_difference_gradient,
    fit_bias_least_squares,
    projection_box,
    train,
    trial_grid_search,
)


def _theta(n_h=0, n_b=3):
    return HyperparameterVector(h1=0.1, h2=0.1, zeta_s=0.1, beta1=np.zeros(n_h), beta2=np.zeros(n_h),
                                beta_bias=np.zeros(n_b))


# --- loss evaluator -------------------------------------------------------

def test_crn_loss_is_repeatable():
    context = small_context("crn")
    train_set, _ = small_data()
    evaluator = LossEvaluator(context)
    theta = context.config.initial_theta()
    first = evaluator.loss(theta, train_set)
    second = LossEvaluator(context).loss(theta, train_set)
    assert first == second
    assert evaluator.next_stream() == 0 and evaluator.next_stream() == 0


def test_independent_streams_advance():
    context = small_context("independent")
    evaluator = LossEvaluator(context)
    assert evaluator.config.germ_policy == GermPolicy.INDEPENDENT
    assert [evaluator.next_stream() for _ in range(3)] == [1, 2, 3]


def test_failing_candidate_is_penalized(monkeypatch):
    context = small_context()
    train_set, _ = small_data()
    evaluator = LossEvaluator(context)

    def diverge(*args, **kwargs):
        raise NonConvergenceError("forced")

    monkeypatch.setattr(evaluator, "outputs", diverge)
    assert evaluator.loss(context.config.initial_theta(), train_set) == evaluator.config.penalty


def test_single_point_loss_is_finite():
    context = small_context()
    train_set, _ = small_data()
    one = Dataset(train_set.inputs[:1], train_set.outputs[:1])
    assert np.isfinite(LossEvaluator(context).loss(context.config.initial_theta(), one))


# --- bias least squares ---------------------------------------------------

def test_bias_least_squares_recovers_coefficients():
    rng = np.random.default_rng(0)
    basis, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    beta_true = np.array([0.3, -0.2, 0.1])
    z = 0.5 * rng.standard_normal((6, 10))
    targets = np.tanh(z + (basis @ beta_true)[:, None])
    beta = fit_bias_least_squares(targets, z, basis, tol=1e-10, max_steps=20_000)
    np.testing.assert_allclose(beta, beta_true, atol=1e-4)


def test_bias_least_squares_closed_form():
    targets = np.array([[0.2], [-0.5], [0.7]])
    beta = fit_bias_least_squares(targets, np.zeros((3, 1)), np.eye(3), tol=1e-12, max_steps=20_000)
    np.testing.assert_allclose(beta, np.arctanh(targets[:, 0]), atol=1e-6)


def test_bias_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    basis = rng.standard_normal((5, 2))
    z = rng.standard_normal((5, 4))
    targets = np.tanh(rng.standard_normal((5, 4)))
    beta = np.array([0.2, -0.1])
    analytic = beta_ls_gradient(beta, targets, z, basis)
    h = 1e-6
    numeric = np.array([
        (beta_ls_objective(beta + h * e, targets, z, basis) - beta_ls_objective(beta - h * e, targets, z, basis))
        / (2.0 * h) for e in np.eye(2)])
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6)


# --- projection and stopping ----------------------------------------------

def test_projection_box_example():
    values = np.linspace(-2.0, 2.0, 9)[:, None]
    assert projection_box(0.1, values) == pytest.approx(0.05)


def test_projection_box_empty_interior():
    values = np.linspace(-2.0, 2.0, 9)[:, None]
    assert projection_box(0.1, values, c_lower=0.2) == 0.0


def test_projection_box_without_basis():
    assert projection_box(0.1, np.zeros((9, 0))) == float("inf")


def test_projection_box_upper_clamp():
    values = np.ones((4, 2))
    assert projection_box(0.5, values, c_lower=0.0, c_upper=0.6) == pytest.approx(0.05)


def test_delta_max():
    constant = [np.array([0.5, 0.5])] * 4
    assert delta_max(constant, 3) == 0.0
    # one step of norm 2 ending inside the unit ball
    end = np.array([0.3, 0.4])
    start = end - np.array([2.0, 0.0])
    assert delta_max([start, start, start, end], 3) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        delta_max(constant[:3], 3)


# --- projected Adam -------------------------------------------------------

def test_adam_reaches_quadratic_minimum():
    target = np.array([0.1, -0.05, 0.08])

    def objective(theta, stream):
        return float(np.sum((theta.beta_bias - target) ** 2))

    config = TrainConfig(max_iters=4000, adam_step_bias=5e-4, delta_tol=1e-12)
    best, trace = adam_projected_descent(_theta(), objective, config)
    np.testing.assert_allclose(best.beta_bias, target, atol=1e-3)
    assert len(trace) >= 2
    assert objective(best, 0) == min(trace.losses)


def test_adam_respects_projection():
    def objective(theta, stream):
        return float(np.sum((theta.beta1 - 1.0) ** 2) + np.sum((theta.beta2 + 1.0) ** 2))

    config = TrainConfig(max_iters=200, adam_step_anisotropy=0.01, delta_tol=1e-12)
    best, trace = adam_projected_descent(_theta(n_h=1, n_b=0), objective, config, bounds=(0.05, 0.03))
    assert best.beta1[0] == pytest.approx(0.05)
    assert best.beta2[0] == pytest.approx(-0.03)
    frame = trace.to_frame()
    assert frame["beta1_1"].abs().max() <= 0.05 + 1e-15
    assert list(frame.columns[:3]) == ["iteration", "loss", "delta_max"]


def test_finite_difference_streams():
    streams = []

    def objective(theta, stream):
        streams.append(stream)
        return float(theta.beta_bias @ theta.beta_bias)

    counter = iter(range(1, 100))
    gradient = finite_difference_gradient(objective, _theta(n_b=2).with_bias([1.0, -2.0]), TrainConfig(),
                                          lambda: next(counter))
    np.testing.assert_allclose(gradient, [2.0, -4.0], rtol=1e-6)
    assert streams == [1, 2, 3, 4]


def test_finite_difference_clips_to_box():
    evaluated = []

    def objective(theta, stream):
        evaluated.append((theta.beta1[0], theta.beta2[0]))
        if abs(theta.beta1[0]) > 0.05 or abs(theta.beta2[0]) > 0.0:
            return 1e9
        return float((theta.beta1[0] - 1.0) ** 2)

    theta = _theta(n_h=1, n_b=0).with_free([0.05, 0.0])
    gradient = finite_difference_gradient(objective, theta, TrainConfig(), lambda: 0, np.array([0.05, 0.0]))
    # one-sided at the face, zero-width box gives no slope
    assert gradient[0] == pytest.approx(2.0 * (0.05 - 1.0), rel=1e-5)
    assert gradient[1] == 0.0
    assert max(abs(b1) for b1, _ in evaluated) <= 0.05
    assert all(b2 == 0.0 for _, b2 in evaluated)


def test_gradient_on_box_face_is_not_penalized(caplog):
    context = build_context(small_config(n_h=1, c_lower=0.05))
    train_set, _ = small_data()
    evaluator = LossEvaluator(context)
    config = evaluator.config
    start = context.config.initial_theta()
    bounds = (projection_box(start.h1, context.basis1, config.c_lower, config.c_upper),
              projection_box(start.h2, context.basis2, config.c_lower, config.c_upper))
    assert 0.0 < bounds[0] < np.inf
    limits = np.concatenate([[bounds[0]], [bounds[1]], np.full(start.n_b, np.inf)])
    theta = start.with_free(np.concatenate([[bounds[0] * (1.0 - 1e-9)], [0.0], start.beta_bias]))
    assert evaluator.loss(theta, train_set) < config.penalty

    with caplog.at_level(logging.WARNING, logger="sgnn.training"):
        gradient = finite_difference_gradient(evaluator.objective(train_set), theta, config,
                                              evaluator.next_stream, limits)
    assert "penalized" not in caplog.text
    assert np.all(np.isfinite(gradient))
    assert np.abs(gradient).max() < config.penalty


def test_crn_cancels_noise_of_inert_coordinates():
    train_set, _ = small_data()
    base = small_context("crn").config.initial_theta()
    gradients = {}
    for policy in ("crn", "independent"):
        evaluator = LossEvaluator(small_context(policy))

        def objective(theta, stream):
            return evaluator.loss(theta.with_bias(base.beta_bias), train_set, stream)

        gradients[policy] = finite_difference_gradient(objective, base, evaluator.config, evaluator.next_stream)
    assert np.all(gradients["crn"] == 0.0)
    assert np.any(gradients["independent"] != 0.0)


def test_trace_csv(tmp_path):
    trace = TrainTrace(n_h=1, n_b=2)
    trace.append(_theta(n_h=1, n_b=2), 1.5, np.nan)
    frame = pd.read_csv(trace.write_csv(tmp_path / "trace.csv"))
    assert list(frame.columns) == ["iteration", "loss", "delta_max", "h1", "h2", "zeta_s",
                                   "beta1_1", "beta2_1", "beta_1", "beta_2"]


# --- trial grid and full training -----------------------------------------

def test_grid_axes():
    axes = TrainConfig(grid_points=6).grid_axes()
    assert np.prod([axis.size for axis in axes]) == 216
    single = TrainConfig(grid_points=1).grid_axes()
    assert [axis.tolist() for axis in single] == [[0.065], [0.034], [0.040]]


def test_trial_grid_search_small():
    context = small_context()
    train_set, _ = small_data()
    result = trial_grid_search(LossEvaluator(context), train_set)
    assert len(result.losses) == SMALL["grid_points"] ** 3
    assert result.best_index == int(np.argmin(result.losses))
    assert result.betas.shape == (8, context.config.n_hat)
    assert list(result.table.columns) == ["node", "h1", "h2", "zeta_s", "loss"]
    assert result.theta.n_b == context.config.n_hat


def test_train_small_run():
    context = small_context()
    train_set, _ = small_data()
    result = train(context, train_set)
    assert 2 <= len(result.trace) <= SMALL["max_iters"] + 1
    assert result.loss == min(result.trace.losses)
    assert result.trace.losses[0] == pytest.approx(result.grid.losses[result.grid.best_index])
    assert result.selectors[0].size == SMALL["n_in"]


def _longer_run():
    context = small_context()
    return context, context.config.train_config().model_copy(update={"max_iters": 4})


def test_train_is_deterministic():
    context, config = _longer_run()
    train_set, _ = small_data()
    first = train(context, train_set, config)
    second = train(context, train_set, config)
    assert np.array_equal(np.array(first.trace.thetas), np.array(second.trace.thetas))
    assert first.trace.losses == second.trace.losses
    assert np.array_equal(first.theta.full_vector(), second.theta.full_vector())


def test_descent_improves_on_trial_optimum():
    context, config = _longer_run()
    train_set, _ = small_data()
    result = train(context, train_set, config)
    assert result.loss < result.grid.losses.min()


def test_train_config_from_run_config():
    config = small_config(max_iters=7, beta_ls_observed=True)
    train_config = config.train_config()
    assert train_config.max_iters == 7
    assert train_config.beta_ls_observed
    assert train_config.n_sim == SMALL["n_sim"]


if __name__ == "__main__":
    print("🧪 Testing training...")
    test_crn_loss_is_repeatable()
    test_independent_streams_advance()
    test_single_point_loss_is_finite()
    test_bias_least_squares_recovers_coefficients()
    test_bias_least_squares_closed_form()
    test_bias_gradient_matches_finite_differences()
    test_projection_box_example()
    test_projection_box_empty_interior()
    test_projection_box_without_basis()
    test_projection_box_upper_clamp()
    test_delta_max()
    test_adam_reaches_quadratic_minimum()
    test_adam_respects_projection()
    test_finite_difference_streams()
    test_finite_difference_clips_to_box()
    test_crn_cancels_noise_of_inert_coordinates()
    test_trace_csv(Path(tempfile.mkdtemp()))
    test_grid_axes()
    test_trial_grid_search_small()
    test_train_small_run()
    test_train_is_deterministic()
    test_descent_improves_on_trial_optimum()
    test_train_config_from_run_config()
    print("✅ Training tests passed")
