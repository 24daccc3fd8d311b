"""
Finite-element torus mesh: construction, P1 basis evaluation, uniform
surface sampling and plain-text export.

Nodes are stored row-major in (u, v): node (i, j) has index i * n_v + j.
Each (u, v) grid cell is split along its (i, j) -> (i + 1, j + 1) diagonal.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import scipy.sparse as sp

from sgnn.exceptions import MeshError
from sgnn.models import SurfacePoint, TorusParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray
    cumulative_area: np.ndarray
    params: Optional[TorusParams] = None
    uv: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def total_area(self) -> float:
        return float(self.cumulative_area[-1]) if self.n_elements else 0.0

    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (n_elem, 3, 3)."""
        return self.nodes[self.triangles]

    def unit_normals(self) -> np.ndarray:
        p = self.corners()
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return cross / np.linalg.norm(cross, axis=1, keepdims=True)

    def centroids(self) -> np.ndarray:
        return self.corners().mean(axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (p, q) pairs."""
        t = self.triangles
        pairs = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(pairs, axis=1), axis=0)

    def is_closed(self) -> bool:
        """True when every edge belongs to exactly two triangles."""
        t = self.triangles
        pairs = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(pairs, axis=0, return_counts=True)
        return bool(np.all(counts == 2))


def _triangle_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def mesh_from_arrays(nodes, triangles, params: Optional[TorusParams] = None,
                     uv: Optional[np.ndarray] = None) -> Mesh:
    """Wrap raw node and connectivity arrays into a Mesh after index checks."""
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise MeshError("nodes must be an (n_o, 3) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (n_elem, 3) array")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nodes.shape[0]):
        raise MeshError("triangle index out of range")
    areas = _triangle_areas(nodes, triangles)
    return Mesh(nodes=nodes, triangles=triangles, areas=areas,
                cumulative_area=np.cumsum(areas), params=params, uv=uv)


def torus_point(params: TorusParams, u, v) -> np.ndarray:
    R, r = params.major_radius, params.minor_radius
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ring = R + r * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)], axis=-1)


def build_torus_mesh(params: TorusParams) -> Mesh:
    """
    Structured triangulation of the torus with n_u * n_v nodes and
    2 * n_u * n_v triangles, periodic in both directions.
    """
    n_u, n_v = params.n_u, params.n_v
    u = 2.0 * np.pi * np.arange(n_u) / n_u
    v = 2.0 * np.pi * np.arange(n_v) / n_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    nodes = torus_point(params, uu.ravel(), vv.ravel())

    i, j = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="ij")
    i, j = i.ravel(), j.ravel()
    ip, jp = (i + 1) % n_u, (j + 1) % n_v
    p00 = i * n_v + j
    p10 = ip * n_v + j
    p01 = i * n_v + jp
    p11 = ip * n_v + jp
    lower = np.stack([p00, p10, p11], axis=1)
    upper = np.stack([p00, p11, p01], axis=1)
    triangles = np.empty((2 * n_u * n_v, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    mesh = mesh_from_arrays(nodes, triangles, params=params,
                            uv=np.stack([uu.ravel(), vv.ravel()], axis=1))
    logger.debug("torus mesh n_o=%d n_elem=%d area=%.6f", mesh.n_nodes, mesh.n_elements, mesh.total_area)
    return mesh


@dataclass(frozen=True)
class SurfacePointSet:
    """
    A batch of surface points stored as arrays. Iterating or indexing yields
    SurfacePoint values.
    """
    element_ids: np.ndarray
    barycentric: np.ndarray

    def __len__(self) -> int:
        return int(self.element_ids.shape[0])

    def __getitem__(self, index: int) -> SurfacePoint:
        return SurfacePoint(element_id=int(self.element_ids[index]),
                            barycentric=tuple(float(w) for w in self.barycentric[index]))

    def __iter__(self) -> Iterator[SurfacePoint]:
        for k in range(len(self)):
            yield self[k]

    def take(self, indices) -> "SurfacePointSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SurfacePointSet(self.element_ids[indices].copy(), self.barycentric[indices].copy())

    @classmethod
    def from_points(cls, points) -> "SurfacePointSet":
        points = list(points)
        if not points:
            return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 3)))
        return cls(np.array([p.element_id for p in points], dtype=np.int64),
                   np.array([p.barycentric for p in points], dtype=float))


def _check_element(mesh: Mesh, element_id: int) -> None:
    if not 0 <= element_id < mesh.n_elements:
        raise MeshError(f"invalid element_id {element_id} for a mesh with {mesh.n_elements} triangles")


def fe_basis_at(mesh: Mesh, p: SurfacePoint) -> sp.csr_matrix:
    """P1 basis vector phi(x) as a 1 x n_o sparse row with three nonzeros."""
    _check_element(mesh, p.element_id)
    cols = mesh.triangles[p.element_id]
    return sp.csr_matrix((np.asarray(p.barycentric, dtype=float), (np.zeros(3, dtype=np.int64), cols)),
                         shape=(1, mesh.n_nodes))


def basis_matrix(mesh: Mesh, points: SurfacePointSet) -> sp.csr_matrix:
    """Rows phi(x_k) for a batch of points, shape (K, n_o)."""
    if len(points) and (points.element_ids.min() < 0 or points.element_ids.max() >= mesh.n_elements):
        raise MeshError("invalid element_id in point batch")
    rows = np.repeat(np.arange(len(points)), 3)
    cols = mesh.triangles[points.element_ids].ravel()
    return sp.csr_matrix((points.barycentric.ravel(), (rows, cols)), shape=(len(points), mesh.n_nodes))


def point_coordinates(mesh: Mesh, points: SurfacePointSet) -> np.ndarray:
    corners = mesh.nodes[mesh.triangles[points.element_ids]]
    return np.einsum("kc,kcd->kd", points.barycentric, corners)


def sample_uniform_candidates(mesh: Mesh, M: int, u_elem, u_a, u_b) -> SurfacePointSet:
    """
    Area-uniform points from three uniform germs: the element inverts the
    cumulative area on u_elem, the interior point uses (u_a, u_b) reflected
    into the triangle when u_a + u_b > 1.
    """
    u_elem = np.asarray(u_elem, dtype=float)
    u_a = np.asarray(u_a, dtype=float).copy()
    u_b = np.asarray(u_b, dtype=float).copy()
    if not (u_elem.shape == u_a.shape == u_b.shape == (M,)):
        raise ValueError(f"germs must have length M={M}")
    if M == 0:
        return SurfacePointSet(np.zeros(0, dtype=np.int64), np.zeros((0, 3)))

    elements = np.searchsorted(mesh.cumulative_area, u_elem * mesh.total_area, side="right")
    elements = np.minimum(elements, mesh.n_elements - 1)

    flip = u_a + u_b > 1.0
    u_a[flip], u_b[flip] = 1.0 - u_a[flip], 1.0 - u_b[flip]
    barycentric = np.stack([1.0 - u_a - u_b, u_a, u_b], axis=1)
    np.clip(barycentric, 0.0, None, out=barycentric)
    barycentric /= barycentric.sum(axis=1, keepdims=True)
    return SurfacePointSet(elements.astype(np.int64), barycentric)


def export_mesh(mesh: Mesh, path) -> Path:
    """Write `v x y z` lines then 1-based `f i j k` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for x, y, z in mesh.nodes:
            handle.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.triangles + 1:
            handle.write(f"f {a} {b} {c}\n")
    logger.info("Wrote mesh with %d nodes to %s", mesh.n_nodes, path)
    return path
