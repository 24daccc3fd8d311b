#!/usr/bin/env python3
"""
Test script for the torus mesh, P1 basis evaluation and candidate sampling
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from sgnn.exceptions import MeshError
from sgnn.geometry import (
    SurfacePointSet,
    basis_matrix,
    build_torus_mesh,
    export_mesh,
    fe_basis_at,
    mesh_from_arrays,
    point_coordinates,
    sample_uniform_candidates,
)
from sgnn.models import SurfacePoint, TorusParams


def test_reference_mesh_counts():
    """80 x 24 torus has 1920 nodes and 3840 triangles"""
    mesh = build_torus_mesh(TorusParams(major_radius=2.0, minor_radius=0.7, n_u=80, n_v=24))
    assert mesh.n_nodes == 1920
    assert mesh.n_elements == 3840
    assert mesh.is_closed()


def test_tiny_mesh_is_closed():
    mesh = build_torus_mesh(TorusParams(n_u=3, n_v=3))
    assert (mesh.n_nodes, mesh.n_elements) == (9, 18)
    assert mesh.is_closed()
    # Euler characteristic of the torus
    assert mesh.n_nodes - len(mesh.edges()) + mesh.n_elements == 0


def test_area_converges_to_torus_area():
    exact = 4.0 * np.pi ** 2 * 2.0 * 0.7
    coarse = build_torus_mesh(TorusParams(n_u=40, n_v=12)).total_area
    fine = build_torus_mesh(TorusParams(n_u=160, n_v=48)).total_area
    assert abs(fine - exact) / exact < 0.005
    assert coarse < fine < exact


def test_fe_basis_at_node_and_centroid():
    mesh = build_torus_mesh(TorusParams(n_u=6, n_v=4))
    vertex = fe_basis_at(mesh, SurfacePoint(element_id=5, barycentric=(1.0, 0.0, 0.0))).toarray().ravel()
    expected = np.zeros(mesh.n_nodes)
    expected[mesh.triangles[5, 0]] = 1.0
    np.testing.assert_array_equal(vertex, expected)

    centroid = fe_basis_at(mesh, SurfacePoint(element_id=5, barycentric=(1 / 3, 1 / 3, 1 / 3))).toarray().ravel()
    np.testing.assert_allclose(centroid[mesh.triangles[5]], 1.0 / 3.0)
    assert np.count_nonzero(centroid) == 3


def test_fe_basis_rejects_invalid_element():
    mesh = build_torus_mesh(TorusParams(n_u=3, n_v=3))
    with pytest.raises(MeshError):
        fe_basis_at(mesh, SurfacePoint(element_id=18, barycentric=(1.0, 0.0, 0.0)))


def test_partition_of_unity():
    mesh = build_torus_mesh(TorusParams(n_u=20, n_v=8))
    rng = np.random.default_rng(0)
    points = sample_uniform_candidates(mesh, 1000, *rng.random((3, 1000)))
    sums = np.asarray(basis_matrix(mesh, points).sum(axis=1)).ravel()
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_candidate_count_and_determinism():
    mesh = build_torus_mesh(TorusParams())
    M = 2 * mesh.n_elements
    germs = np.random.default_rng(1).random((3, M))
    first = sample_uniform_candidates(mesh, M, *germs)
    second = sample_uniform_candidates(mesh, M, *germs)
    assert len(first) == 7680
    np.testing.assert_array_equal(first.element_ids, second.element_ids)
    np.testing.assert_array_equal(first.barycentric, second.barycentric)


def test_single_triangle_first_vertex():
    nodes = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    mesh = mesh_from_arrays(nodes, [[0, 1, 2]])
    points = sample_uniform_candidates(mesh, 1, [0.3], [0.0], [0.0])
    np.testing.assert_allclose(point_coordinates(mesh, points)[0], nodes[0])


def test_reflection_keeps_points_inside():
    nodes = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    mesh = mesh_from_arrays(nodes, [[0, 1, 2]])
    points = sample_uniform_candidates(mesh, 1, [0.5], [0.9], [0.8])
    np.testing.assert_allclose(points.barycentric[0], [0.7, 0.1, 0.2])


def test_empty_candidate_set():
    mesh = build_torus_mesh(TorusParams(n_u=3, n_v=3))
    assert len(sample_uniform_candidates(mesh, 0, [], [], [])) == 0


def test_candidates_follow_area():
    """Per-triangle counts against the area-weighted multinomial (chi-square)"""
    mesh = build_torus_mesh(TorusParams())
    M = 50_000
    points = sample_uniform_candidates(mesh, M, *np.random.default_rng(2).random((3, M)))
    counts = np.bincount(points.element_ids, minlength=mesh.n_elements)
    expected = M * mesh.areas / mesh.total_area
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    dof = mesh.n_elements - 1
    assert abs(chi2 - dof) < 5.0 * np.sqrt(2.0 * dof)


def test_point_set_round_trip():
    points = [SurfacePoint(element_id=2, barycentric=(0.2, 0.3, 0.5)),
              SurfacePoint(element_id=0, barycentric=(1.0, 0.0, 0.0))]
    batch = SurfacePointSet.from_points(points)
    assert list(batch) == points
    assert batch.take([1])[0] == points[1]


def test_export_mesh(tmp_path):
    mesh = build_torus_mesh(TorusParams(n_u=3, n_v=3))
    path = export_mesh(mesh, tmp_path / "torus.obj")
    lines = path.read_text().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 9
    faces = [line for line in lines if line.startswith("f ")]
    assert len(faces) == 18
    indices = np.array([[int(i) for i in line.split()[1:]] for line in faces])
    assert indices.min() == 1 and indices.max() == 9


if __name__ == "__main__":
    print("🧪 Testing geometry...")
    test_reference_mesh_counts()
    test_tiny_mesh_is_closed()
    test_area_converges_to_torus_area()
    test_fe_basis_at_node_and_centroid()
    test_fe_basis_rejects_invalid_element()
    test_partition_of_unity()
    test_candidate_count_and_determinism()
    test_single_triangle_first_vertex()
    test_reflection_keeps_points_inside()
    test_empty_candidate_set()
    test_candidates_follow_area()
    test_point_set_round_trip()
    test_export_mesh(Path(tempfile.mkdtemp()))
    print("✅ Geometry tests passed")
