#!/usr/bin/env python3
"""
Test script for the anisotropy and bias bases
"""

import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from sgnn.basis_fields import (
    build_anisotropy_bases,
    build_bias_basis,
    build_nonsmooth_basis,
    build_smooth_basis,
    smooth_basis_columns,
    write_basis_csv,
)
from sgnn.exceptions import BasisError
from sgnn.models import BasisKind, TorusParams


def _assert_orthonormal_zero_mean(values):
    n_h = values.shape[1]
    np.testing.assert_allclose(values.T @ values, np.eye(n_h), atol=1e-10)
    np.testing.assert_allclose(values.mean(axis=0), 0.0, atol=1e-10)


def test_nonsmooth_basis_properties():
    basis = build_nonsmooth_basis(1920, 10, seed=1)
    assert basis.values.shape == (1920, 10)
    _assert_orthonormal_zero_mean(basis.values)


def test_single_column_basis():
    basis = build_nonsmooth_basis(50, 1, seed=4)
    assert basis.n_h == 1
    assert np.linalg.norm(basis.values[:, 0]) == pytest.approx(1.0, abs=1e-12)
    assert abs(basis.values[:, 0].mean()) < 1e-12


def test_seeds_give_different_bases():
    first = build_nonsmooth_basis(200, 3, seed=1).values
    second = build_nonsmooth_basis(200, 3, seed=2).values
    assert not np.allclose(first, second)
    _assert_orthonormal_zero_mean(second)


def test_smooth_basis_properties():
    basis = build_smooth_basis(TorusParams(), 4)
    assert basis.kind == BasisKind.SMOOTH
    _assert_orthonormal_zero_mean(basis.values)


def test_first_smooth_column():
    params = TorusParams(n_u=80, n_v=24)
    raw = smooth_basis_columns(params, 1)
    u = 2.0 * np.pi * np.arange(80) / 80
    v = 2.0 * np.pi * np.arange(24) / 24
    uu, vv = np.meshgrid(u, v, indexing="ij")
    np.testing.assert_allclose(raw[:, 0], np.cos(uu.ravel()) * np.cos(vv.ravel()) / np.sqrt(np.pi))


def test_smooth_column_scale():
    """Riemann sum of |phi|^2 over [0, 2pi]^2 is c^2 pi^2 = pi for every column"""
    params = TorusParams(n_u=80, n_v=24)
    raw = smooth_basis_columns(params, 8)
    cell = (2.0 * np.pi / 80) * (2.0 * np.pi / 24)
    np.testing.assert_allclose(np.sum(raw ** 2, axis=0) * cell, np.pi, atol=1e-10)


def test_second_family_differs():
    params = TorusParams(n_u=20, n_v=8)
    first, second = build_anisotropy_bases(params, 3, BasisKind.SMOOTH, seed=0)
    assert not np.allclose(np.abs(first.values), np.abs(second.values))
    _assert_orthonormal_zero_mean(second.values)


def test_empty_anisotropy_bases():
    first, second = build_anisotropy_bases(TorusParams(n_u=6, n_v=4), 0, BasisKind.NONSMOOTH, seed=0)
    assert first.values.shape == (24, 0) and second.n_h == 0


def test_nonsmooth_pair_from_seed_sequence():
    params = TorusParams(n_u=10, n_v=5)
    sequence = np.random.SeedSequence(11, spawn_key=(4, 0))
    first, second = build_anisotropy_bases(params, 2, BasisKind.NONSMOOTH, sequence)
    again, _ = build_anisotropy_bases(params, 2, BasisKind.NONSMOOTH, np.random.SeedSequence(11, spawn_key=(4, 0)))
    np.testing.assert_array_equal(first.values, again.values)
    assert not np.allclose(first.values, second.values)


def test_bias_basis_identity_and_rank():
    np.testing.assert_array_equal(build_bias_basis(180, 180).values, np.eye(180))
    single = build_bias_basis(180, 1, seed=3)
    assert single.n_b == 1
    reduced = build_bias_basis(40, 7, seed=3)
    assert np.linalg.matrix_rank(reduced.values) == 7


def test_bias_basis_rejects_oversize():
    with pytest.raises(BasisError):
        build_bias_basis(10, 11)


def test_write_basis_csv(tmp_path):
    params = TorusParams(n_u=6, n_v=4)
    first, second = build_anisotropy_bases(params, 2, BasisKind.SMOOTH, seed=0)
    frame = pd.read_csv(write_basis_csv(tmp_path / "basis.csv", first, second))
    assert list(frame.columns) == ["node", "h1_1", "h1_2", "h2_1", "h2_2"]
    assert len(frame) == 24


if __name__ == "__main__":
    print("🧪 Testing basis fields...")
    test_nonsmooth_basis_properties()
    test_single_column_basis()
    test_seeds_give_different_bases()
    test_smooth_basis_properties()
    test_first_smooth_column()
    test_smooth_column_scale()
    test_second_family_differs()
    test_empty_anisotropy_bases()
    test_nonsmooth_pair_from_seed_sequence()
    test_bias_basis_identity_and_rank()
    test_bias_basis_rejects_oversize()
    test_write_basis_csv(Path(tempfile.mkdtemp()))
    print("✅ Basis field tests passed")
