#!/usr/bin/env python3
"""
Test script for the index partition, system assembly and the relaxed
fixed-point solver
"""

import numpy as np
import pytest

from small_runs import SMALL, small_context, small_data
from sgnn.architecture import bias_vector, build_architecture, realize_weights
from sgnn.exceptions import NonConvergenceError, PartitionError
from sgnn.models import Activation
from sgnn.solver import (
    SolverSettings,
    assemble_system,
    build_partition,
    extract_output,
    forward_dataset,
    forward_ensemble,
    solve_batch,
    solve_fixed_point,
    spectral_diagnostic,
)


def _random_weights(n, scale, seed):
    rng = np.random.default_rng(seed)
    W = rng.random((n, n)) * scale
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    return W


def test_partition_free_indices():
    partition = build_partition([1, 4], [0], 5)
    assert partition.j_free.tolist() == [0, 2, 3]
    assert partition.n_hat == 3


def test_reference_partition_size():
    partition = build_partition(np.arange(20), np.arange(100, 200), 200)
    assert partition.n_hat == 180
    np.testing.assert_array_equal(partition.j_free[partition.out_positions], np.arange(100, 200))


def test_partition_errors():
    with pytest.raises(PartitionError):
        build_partition([1, 2], [2, 3], 5)
    with pytest.raises(PartitionError):
        build_partition([5], [0], 5)
    with pytest.raises(PartitionError):
        build_partition([1, 1], [0], 5)


def test_gather_scatter():
    partition = build_partition([1, 4], [0, 3], 5)
    values = np.array([10.0, 11.0, 12.0, 13.0, 14.0])
    free, inputs = partition.gather(values)
    assert free.tolist() == [10.0, 12.0, 13.0]
    assert inputs.tolist() == [11.0, 14.0]
    np.testing.assert_array_equal(partition.scatter(free, inputs), values)


def test_assemble_zero_weights():
    partition = build_partition([1, 4], [0], 5)
    bias = np.array([0.1, -0.2, 0.3])
    W_hat, b_hat = assemble_system(np.zeros((5, 5)), partition, [0.4, 0.5], bias)
    np.testing.assert_array_equal(W_hat, 0.0)
    np.testing.assert_array_equal(b_hat, bias)
    _, zero = assemble_system(_random_weights(5, 1.0, 0), partition, [0.0, 0.0], np.zeros(3))
    np.testing.assert_array_equal(zero, 0.0)


def test_assemble_matches_selector_matrices():
    n, j_in = 6, [2, 5]
    partition = build_partition(j_in, [0, 1], n)
    W = _random_weights(n, 1.0, 1)
    x = np.array([0.3, -0.7])
    bias = np.array([0.1, 0.2, 0.3, 0.4])
    O_hat = np.eye(n)[partition.j_free]
    O_in = np.eye(n)[j_in]
    W_hat, b_hat = assemble_system(W, partition, x, bias)
    np.testing.assert_allclose(W_hat, O_hat @ W @ O_hat.T)
    np.testing.assert_allclose(b_hat, O_hat @ W @ O_in.T @ x + bias)


def test_assemble_shape_checks():
    partition = build_partition([1, 4], [0], 5)
    with pytest.raises(ValueError):
        assemble_system(np.zeros((5, 5)), partition, [0.0], np.zeros(3))
    with pytest.raises(ValueError):
        assemble_system(np.zeros((5, 5)), partition, [0.0, 0.0], np.zeros(2))


def test_zero_weights_closed_form():
    b_hat = np.array([0.2, -1.0, 3.0])
    a_hat, report = solve_fixed_point(np.zeros((3, 3)), b_hat, alpha=1.0)
    np.testing.assert_allclose(a_hat, np.tanh(b_hat))
    assert report.iterations <= 2 and report.converged


def test_zero_system():
    a_hat, report = solve_fixed_point(np.zeros((3, 3)), np.zeros(3))
    np.testing.assert_array_equal(a_hat, 0.0)
    assert report.iterations == 1


def test_reference_settings_converge():
    context = small_context()
    train_set, _ = small_data()
    theta = context.config.initial_theta()
    architecture = build_architecture(theta, context)
    etas = context.germs.weight_germs(0, SMALL["n_sim"], SMALL["m"])
    bias = bias_vector(theta, context)
    for W_sp in realize_weights(architecture, theta.zeta_s, etas):
        for x in train_set.inputs:
            W_hat, b_hat = assemble_system(W_sp, architecture.partition, x, bias)
            a_hat, report = solve_fixed_point(W_hat, b_hat, alpha=0.5, eps=0.01, max_iter=500)
            assert report.converged and report.iterations < 500
            # the step-norm stop bounds the equation residual by eps / alpha
            residual = np.linalg.norm(a_hat - np.tanh(W_hat @ a_hat + b_hat))
            assert residual < 0.01 / 0.5
            assert np.abs(a_hat).max() <= 1.0


def test_softsign_activation():
    b_hat = np.array([1.0, -3.0])
    a_hat, _ = solve_fixed_point(np.zeros((2, 2)), b_hat, alpha=1.0, activation=Activation.SOFTSIGN)
    np.testing.assert_allclose(a_hat, b_hat / (1.0 + np.abs(b_hat)))


def test_non_convergence_carries_report():
    W_hat = np.array([[0.0, 50.0], [50.0, 0.0]])
    with pytest.raises(NonConvergenceError) as caught:
        solve_fixed_point(W_hat, np.array([1.0, -1.0]), alpha=1.0, eps=1e-12, max_iter=5)
    assert caught.value.report is not None
    assert caught.value.report.iterations == 5


def test_invalid_relaxation():
    with pytest.raises(ValueError):
        solve_batch(np.zeros((2, 2)), np.zeros((2, 1)), SolverSettings(alpha=0.0))


def test_batch_matches_single_solves():
    W_hat = _random_weights(10, 0.05, 3)
    B_hat = np.random.default_rng(4).standard_normal((10, 4))
    A, reports = solve_batch(W_hat, B_hat, SolverSettings(eps=1e-8, max_iter=2000))
    for column in range(4):
        single, report = solve_fixed_point(W_hat, B_hat[:, column], eps=1e-8, max_iter=2000)
        np.testing.assert_allclose(A[:, column], single, atol=1e-7)
        assert abs(reports[column].iterations - report.iterations) <= 1


def test_extract_output():
    partition = build_partition([0], [3, 1], 4)
    a_hat = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(extract_output(a_hat, partition), [0.3, 0.1])
    full = build_partition([0], [1, 2, 3], 4)
    np.testing.assert_array_equal(extract_output(a_hat, full), a_hat)


def test_spectral_diagnostic():
    assert spectral_diagnostic(np.zeros((3, 3)), np.zeros(3), np.zeros(3)) == 0.0
    W_hat = np.array([[0.0, 0.5], [0.5, 0.0]])
    assert spectral_diagnostic(W_hat, np.zeros(2), np.zeros(2)) == pytest.approx(0.5, rel=1e-10)


def test_forward_ensemble():
    partition = build_partition([0], [2], 3)
    bias = np.array([0.3, -0.4])
    outputs = forward_ensemble(partition, bias, [1.0], [np.zeros((3, 3))], SolverSettings(alpha=1.0))
    assert outputs.shape == (1, 1)
    assert outputs[0, 0] == pytest.approx(np.tanh(-0.4), abs=1e-12)

    W = _random_weights(3, 0.3, 5)
    twice = forward_ensemble(partition, bias, [0.5], [W, W])
    np.testing.assert_array_equal(twice[:, 0], twice[:, 1])


def test_forward_dataset_matches_ensemble():
    partition = build_partition([0, 1], [4, 2], 6)
    bias = np.random.default_rng(6).standard_normal(4) * 0.2
    realizations = [_random_weights(6, 0.2, seed) for seed in (7, 8, 9)]
    inputs = np.random.default_rng(10).uniform(-1, 1, (5, 2))
    settings = SolverSettings(eps=1e-10, max_iter=2000)
    batched = forward_dataset(partition, bias, inputs, realizations, settings)
    assert batched.shape == (5, 2, 3)
    for k in range(5):
        single = forward_ensemble(partition, bias, inputs[k], realizations, settings)
        np.testing.assert_allclose(batched[k], single, atol=1e-8)


if __name__ == "__main__":
    print("🧪 Testing solver...")
    test_partition_free_indices()
    test_reference_partition_size()
    test_partition_errors()
    test_gather_scatter()
    test_assemble_zero_weights()
    test_assemble_matches_selector_matrices()
    test_assemble_shape_checks()
    test_zero_weights_closed_form()
    test_zero_system()
    test_reference_settings_converge()
    test_softsign_activation()
    test_non_convergence_carries_report()
    test_invalid_relaxation()
    test_batch_matches_single_solves()
    test_extract_output()
    test_spectral_diagnostic()
    test_forward_ensemble()
    test_forward_dataset_matches_ensemble()
    print("✅ Solver tests passed")
