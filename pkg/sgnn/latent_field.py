"""
Latent anisotropic Gaussian field on the mesh.

The nodal field U solves (tau0 [g] + [kappa]) U = B with B centered Gaussian
of covariance [g], so that [C_U] = A^{-1} [g] A^{-1} with A = tau0 [g] + [kappa].
Its reduced form keeps the m leading eigenpairs and evaluates
psi^m(x) = [lambda^m]^{1/2} [Phi^m]^T phi(x) at any surface point.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from sgnn.basis_fields import BasisMatrix
from sgnn.exceptions import ClampViolationError, FieldError, MeshError
from sgnn.geometry import Mesh, SurfacePointSet, basis_matrix
from sgnn.models import MassMode, ReductionMethod, SurfacePoint

logger = logging.getLogger(__name__)

DENSE_GUARD = 4000


@dataclass(frozen=True)
class AnisotropySpec:
    h1: float
    h2: float
    beta1: np.ndarray
    beta2: np.ndarray
    basis1: BasisMatrix
    basis2: BasisMatrix
    c_lower: Tuple[float, float] = (1e-12, 1e-12)
    c_upper: Tuple[float, float] = (np.inf, np.inf)

    def nodal_coefficients(self) -> np.ndarray:
        """h^(1), h^(2) at every node, shape (n_o, 2)."""
        first = self.h1 + self.basis1.values @ np.asarray(self.beta1, dtype=float)
        second = self.h2 + self.basis2.values @ np.asarray(self.beta2, dtype=float)
        return np.stack([first, second], axis=1)

    def validate(self) -> np.ndarray:
        coefficients = self.nodal_coefficients()
        for k in range(2):
            if not self.c_lower[k] > 0:
                raise ClampViolationError(f"lower clamp of h^({k + 1}) must be positive")
            values = coefficients[:, k]
            bad = np.flatnonzero((values < self.c_lower[k]) | (values > self.c_upper[k]))
            if bad.size:
                raise ClampViolationError(
                    f"h^({k + 1}) leaves [{self.c_lower[k]}, {self.c_upper[k]}] at {bad.size} nodes "
                    f"(first node {bad[0]}, value {values[bad[0]]:.6g})")
        return coefficients


@dataclass(frozen=True)
class FemSystem:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    tau0: float = 1.0

    @property
    def n_nodes(self) -> int:
        return int(self.mass.shape[0])

    def operator(self) -> sp.csc_matrix:
        return (self.tau0 * self.mass + self.stiffness).tocsc()


@dataclass(frozen=True)
class ReducedField:
    phi_m: np.ndarray
    lambda_m: np.ndarray
    provenance: ReductionMethod
    trace_cu: Optional[float] = None
    sqrt_lambda: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sqrt_lambda", np.sqrt(np.maximum(self.lambda_m, 0.0)))

    @property
    def m(self) -> int:
        return int(self.lambda_m.shape[0])

    def nodal_psi(self) -> np.ndarray:
        """psi^m at every mesh node, shape (n_o, m)."""
        return self.phi_m * self.sqrt_lambda


def _element_matrices(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    rows = np.repeat(mesh.triangles[:, :, None], 3, axis=2)
    cols = np.repeat(mesh.triangles[:, None, :], 3, axis=1)
    return rows, cols


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows, cols = _element_matrices(mesh)
    n = mesh.n_nodes
    matrix = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    return matrix


def _check_areas(mesh: Mesh) -> None:
    bad = np.flatnonzero(mesh.areas <= 0.0)
    if bad.size:
        raise MeshError(f"degenerate triangle {bad[0]} with area {mesh.areas[bad[0]]:.3g}")


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix, element matrix (A/12)[[2,1,1],[1,2,1],[1,1,2]]."""
    _check_areas(mesh)
    reference = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * reference[None, :, :]
    return _assemble(mesh, local)


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Constant 3D gradients of the three P1 functions per triangle, shape (n_elem, 3, 3)."""
    p = mesh.corners()
    normals = mesh.unit_normals()
    opposite = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    return np.cross(normals[:, None, :], opposite) / (2.0 * mesh.areas)[:, None, None]


def tangent_frames(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orthonormal (e1, e2) per triangle: e1 is the azimuthal direction
    d x / d u at the centroid projected onto the triangle plane, e2 = n x e1.
    """
    normals = mesh.unit_normals()
    centroids = mesh.centroids()
    azimuth = np.arctan2(centroids[:, 1], centroids[:, 0])
    direction = np.stack([-np.sin(azimuth), np.cos(azimuth), np.zeros_like(azimuth)], axis=1)
    projected = direction - np.sum(direction * normals, axis=1, keepdims=True) * normals
    length = np.linalg.norm(projected, axis=1)

    fallback = length < 1e-12
    if np.any(fallback):
        p = mesh.corners()[fallback]
        edge = p[:, 1] - p[:, 0]
        projected[fallback] = edge
        length[fallback] = np.linalg.norm(edge, axis=1)
    e1 = projected / length[:, None]
    e2 = np.cross(normals, e1)
    return e1, e2


def assemble_stiffness(mesh: Mesh, spec: AnisotropySpec) -> sp.csr_matrix:
    """
    Anisotropic stiffness with K = h^(1) e1 (x) e1 + h^(2) e2 (x) e2 evaluated
    at each centroid (one-point quadrature, exact for P1 gradients).
    """
    _check_areas(mesh)
    nodal = spec.validate()
    centroid_h = nodal[mesh.triangles].mean(axis=1)

    gradients = barycentric_gradients(mesh)
    e1, e2 = tangent_frames(mesh)
    g1 = np.einsum("eab,eb->ea", gradients, e1)
    g2 = np.einsum("eab,eb->ea", gradients, e2)
    local = (centroid_h[:, 0, None, None] * g1[:, :, None] * g1[:, None, :]
             + centroid_h[:, 1, None, None] * g2[:, :, None] * g2[:, None, :])
    local *= mesh.areas[:, None, None]
    return _assemble(mesh, local)


def build_fem_system(mesh: Mesh, spec: AnisotropySpec, tau0: float = 1.0,
                     mass: Optional[sp.csr_matrix] = None) -> FemSystem:
    if mass is None:
        mass = assemble_mass(mesh)
    return FemSystem(mass=mass, stiffness=assemble_stiffness(mesh, spec), tau0=tau0)


def _factorize(system: FemSystem):
    try:
        return splu(system.operator())
    except RuntimeError as exc:
        raise FieldError(f"factorization of tau0[g] + [kappa] failed: {exc}") from exc


def covariance_direct(system: FemSystem, dense_guard: int = DENSE_GUARD) -> np.ndarray:
    """Dense [C_U] = A^{-1} [g] A^{-1}, symmetrized."""
    n = system.n_nodes
    if n > dense_guard:
        raise FieldError(f"dense covariance refused for n_o={n} > {dense_guard}; use svd_of_samples")
    lu = _factorize(system)
    left = lu.solve(system.mass.toarray())
    covariance = lu.solve(np.ascontiguousarray(left.T))
    covariance = 0.5 * (covariance + covariance.T)
    if not np.all(np.isfinite(covariance)):
        raise FieldError("covariance contains non-finite entries")
    return covariance


def sample_field_vectors(system: FemSystem, n_sim: int, germs: np.ndarray,
                         mass_mode: MassMode = MassMode.CHOLESKY,
                         dense_guard: int = DENSE_GUARD) -> np.ndarray:
    """
    Realizations of the nodal field, one per germ column:
    cholesky  (tau0[g] + [kappa]) u = [L_g]^T gamma with [g] = [L_g]^T [L_g],
    lumped    (tau0[g] + [kappa]) u = [g_diag]^{1/2} gamma,
    covariance  u = [L_C] gamma with [C_U] = [L_C][L_C]^T.
    """
    n = system.n_nodes
    germs = np.asarray(germs, dtype=float)
    if germs.shape != (n, n_sim):
        raise ValueError(f"germs must have shape ({n}, {n_sim}), got {germs.shape}")
    mass_mode = MassMode(mass_mode)

    if mass_mode == MassMode.COVARIANCE:
        covariance = covariance_direct(system, dense_guard)
        try:
            factor = la.cholesky(covariance, lower=True)
        except la.LinAlgError as exc:
            raise FieldError(f"covariance is not positive definite: {exc}") from exc
        return factor @ germs

    if mass_mode == MassMode.LUMPED:
        lumped = np.asarray(system.mass.sum(axis=1)).ravel()
        rhs = np.sqrt(lumped)[:, None] * germs
    else:
        if n > dense_guard:
            raise FieldError(f"dense mass factor refused for n_o={n} > {dense_guard}; use lumped mode")
        try:
            upper = la.cholesky(system.mass.toarray(), lower=False)
        except la.LinAlgError as exc:
            raise FieldError(f"mass matrix factorization failed: {exc}") from exc
        rhs = upper.T @ germs

    lu = _factorize(system)
    samples = lu.solve(np.ascontiguousarray(rhs))
    if not np.all(np.isfinite(samples)):
        raise FieldError("field samples contain non-finite entries")
    return samples


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def reduce(source: Union[FemSystem, np.ndarray], m: int,
           method: ReductionMethod = ReductionMethod.DIRECT_EIG,
           dense_guard: int = DENSE_GUARD) -> ReducedField:
    """
    Reduced-order representation of the nodal field.

    direct_eig expects a FemSystem (or a dense covariance) and keeps its top-m
    eigenpairs. svd_of_samples expects an n_o x n_sim sample matrix, centers
    its rows and keeps the top-m singular triplets with
    lambda = S^2 / (n_sim - 1).
    """
    method = ReductionMethod(method)
    if method == ReductionMethod.DIRECT_EIG:
        covariance = covariance_direct(source, dense_guard) if isinstance(source, FemSystem) else np.asarray(source)
        n = covariance.shape[0]
        if not 1 <= m <= n - 1:
            raise FieldError(f"reduction order m={m} must lie in [1, {n - 1}]")
        values, vectors = la.eigh(covariance, subset_by_index=[n - m, n - 1])
        values, vectors = values[::-1], vectors[:, ::-1]
        trace = float(np.trace(covariance))
    else:
        samples = np.asarray(source, dtype=float)
        n, n_sim = samples.shape
        if n_sim < 2:
            raise FieldError("svd_of_samples needs at least two samples")
        centered = samples - samples.mean(axis=1, keepdims=True)
        vectors, singular, _ = la.svd(centered, full_matrices=False)
        values = singular ** 2 / (n_sim - 1)
        trace = float(values.sum())
        if m > min(n - 1, values.size):
            raise FieldError(f"reduction order m={m} exceeds the sample rank")
        values, vectors = values[:m], vectors[:, :m]

    if not values[-1] > 0.0:
        raise FieldError(f"reduction order m={m} exceeds the available rank (lambda_m={values[-1]:.3g})")
    logger.debug("reduced field method=%s m=%d lambda_1=%.4g lambda_m=%.4g", method.value, m, values[0], values[-1])
    return ReducedField(phi_m=_fix_signs(np.ascontiguousarray(vectors)), lambda_m=np.ascontiguousarray(values),
                        provenance=method, trace_cu=trace)


def pca_error(field: ReducedField, trace_cu: float) -> float:
    """1 - sum(lambda) / tr [C_U], clipped into [0, 1]."""
    if not trace_cu > 0:
        raise ValueError("trace of the covariance must be positive")
    return float(np.clip(1.0 - field.lambda_m.sum() / trace_cu, 0.0, 1.0))


def psi_m(field: ReducedField, phi_x) -> np.ndarray:
    """psi^m(x) = [lambda^m]^{1/2} [Phi^m]^T phi(x)."""
    projected = phi_x @ field.phi_m
    return np.asarray(projected, dtype=float).ravel() * field.sqrt_lambda


def psi_at_points(field: ReducedField, mesh: Mesh, points: SurfacePointSet) -> np.ndarray:
    """psi^m at a batch of points, shape (K, m)."""
    return np.asarray(basis_matrix(mesh, points) @ field.phi_m) * field.sqrt_lambda


def evaluate_field(field: ReducedField, mesh: Mesh, eta, p: SurfacePoint) -> float:
    """U^m(x) = <psi^m(x), eta>."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (field.m,):
        raise ValueError(f"eta must have length m={field.m}")
    single = SurfacePointSet.from_points([p])
    return float(psi_at_points(field, mesh, single)[0] @ eta)


def field_realization(field: ReducedField, eta) -> np.ndarray:
    """Nodal values of one realization U^m for the germ eta."""
    return field.nodal_psi() @ np.asarray(eta, dtype=float)


def spectrum_table(field: ReducedField, trace_cu: float) -> pd.DataFrame:
    """Eigenvalues and the truncation error as a function of the order."""
    cumulative = np.cumsum(field.lambda_m)
    return pd.DataFrame({
        "alpha": np.arange(1, field.m + 1),
        "lambda": field.lambda_m,
        "pca_error": np.clip(1.0 - cumulative / trace_cu, 0.0, 1.0),
    })
