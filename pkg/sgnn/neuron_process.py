"""
Neuron placement from the latent field variance.

Candidates are area-uniform surface points; the N neurons are drawn by
inverting the CDF of the normalized intensities Lambda(z_j) = ||psi^m(z_j)||^2
on the fixed germ U_poisson. Duplicate selections are re-drawn from a
secondary uniform stream so the N neurons are distinct.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from sgnn.exceptions import DegenerateIntensityError
from sgnn.geometry import Mesh, SurfacePointSet, point_coordinates
from sgnn.latent_field import ReducedField, psi_at_points
from sgnn.models import SurfacePoint

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeuronSet:
    points: SurfacePointSet
    candidate_indices: np.ndarray
    psi_at_neurons: np.ndarray
    intensity_at_candidates: np.ndarray

    @property
    def n_neurons(self) -> int:
        return len(self.points)

    def intensities(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.psi_at_neurons, self.psi_at_neurons)


def intensity(field: ReducedField, mesh: Mesh, p: SurfacePoint) -> float:
    """Lambda(x) = ||psi^m(x)||^2, the pointwise variance of U^m."""
    psi = psi_at_points(field, mesh, SurfacePointSet.from_points([p]))[0]
    return float(psi @ psi)


def invert_intensity_cdf(intensities, germ) -> np.ndarray:
    """
    Candidate indices for uniform germ values: the smallest index whose
    cumulative normalized intensity reaches the germ value. Zero-intensity
    candidates are never returned.
    """
    intensities = np.asarray(intensities, dtype=float)
    germ = np.asarray(germ, dtype=float)
    support = np.flatnonzero(intensities > 0.0)
    if support.size == 0:
        raise DegenerateIntensityError("all candidate intensities are zero")
    cumulative = np.cumsum(intensities[support])
    cdf = cumulative / cumulative[-1]
    positions = np.searchsorted(cdf, germ, side="left")
    return support[np.minimum(positions, support.size - 1)]


def intensity_bound(intensities) -> float:
    """Lambda_max over the candidates, 0 when there are none."""
    intensities = np.asarray(intensities, dtype=float)
    return float(intensities.max()) if intensities.size else 0.0


def expected_count(M: int, total_area: float, lambda_max: float, integral: float) -> float:
    """Expected number of points kept by Bernoulli thinning of M uniform candidates."""
    if lambda_max <= 0:
        return 0.0
    return M / total_area * integral / lambda_max


def intensity_diagnostics(intensities: np.ndarray, total_area: float,
                          integral: Optional[float] = None) -> Dict[str, float]:
    """
    Lambda_max and the expected thinning count. Without an exact integral
    the candidate mean times |S_h| stands in for it.
    """
    M = intensities.size
    lambda_max = intensity_bound(intensities)
    if integral is None:
        integral = float(intensities.mean()) * total_area if M else 0.0
    return {"lambda_max": lambda_max, "intensity_integral": integral,
            "expected_thinning_count": expected_count(M, total_area, lambda_max, integral)}


def intensity_integral(field: ReducedField, mass: sp.spmatrix) -> float:
    """Exact integral of Lambda over the mesh for P1-interpolated psi."""
    nodal = field.nodal_psi()
    return float(np.sum(nodal * (mass @ nodal)))


def sample_neurons(candidates: SurfacePointSet, field: ReducedField, mesh: Mesh, n_neurons: int,
                   germ, redraw_seed=0, max_redraws: Optional[int] = None,
                   mass: Optional[sp.spmatrix] = None) -> NeuronSet:
    """Draw n_neurons distinct candidates with probability proportional to Lambda."""
    germ = np.asarray(germ, dtype=float)
    M = len(candidates)
    if germ.shape != (n_neurons,):
        raise ValueError(f"germ must have length N={n_neurons}")
    if n_neurons > M:
        raise ValueError(f"cannot select N={n_neurons} neurons from M={M} candidates")

    psi = psi_at_points(field, mesh, candidates)
    intensities = np.einsum("ij,ij->i", psi, psi)
    diagnostics = intensity_diagnostics(
        intensities, mesh.total_area, intensity_integral(field, mass) if mass is not None else None)
    logger.debug("intensity lambda_max=%.6g expected_thinning_count=%.1f",
                 diagnostics["lambda_max"], diagnostics["expected_thinning_count"])
    if not intensities.sum() > 0.0:
        raise DegenerateIntensityError("all candidate intensities are zero")

    selected = invert_intensity_cdf(intensities, germ)
    if max_redraws is None:
        max_redraws = 100 * n_neurons
    redraw = np.random.default_rng(redraw_seed)
    chosen = np.empty(n_neurons, dtype=np.int64)
    taken = set()
    redraws = 0
    for i, index in enumerate(selected):
        while int(index) in taken:
            if redraws >= max_redraws:
                raise DegenerateIntensityError(
                    f"could not select {n_neurons} distinct neurons after {redraws} re-draws")
            index = invert_intensity_cdf(intensities, redraw.random(1))[0]
            redraws += 1
        taken.add(int(index))
        chosen[i] = index
    if redraws:
        logger.debug("neuron sampling re-drew %d duplicate selections", redraws)

    return NeuronSet(points=candidates.take(chosen), candidate_indices=chosen,
                     psi_at_neurons=psi[chosen], intensity_at_candidates=intensities)


def write_neurons_csv(path, mesh: Mesh, neurons: NeuronSet, roles: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xyz = point_coordinates(mesh, neurons.points)
    frame = pd.DataFrame({"x": xyz[:, 0], "y": xyz[:, 1], "z": xyz[:, 2], "intensity": neurons.intensities()})
    if roles is not None:
        frame["role"] = roles
    frame.to_csv(path, index_label="neuron", float_format="%.17g")
    logger.info("Wrote %d neurons to %s", neurons.n_neurons, path)
    return path
