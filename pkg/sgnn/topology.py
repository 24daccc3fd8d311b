"""
Geometric graph construction: mesh geodesics, neuron-to-neuron geodesic
interpolation, self-tuning kernel, percentile sparsity mask, connectivity
check and input/output neuron selection.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, dijkstra

from sgnn.exceptions import CoincidentNeuronsError, DisconnectedGraphError, UnreachableNodesError
from sgnn.geometry import Mesh, SurfacePointSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeodesicTable:
    node_distances: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.node_distances.shape[0])


@dataclass(frozen=True)
class GraphTopology:
    neuron_distances: np.ndarray
    bandwidths: np.ndarray
    kernel: np.ndarray
    mask: np.ndarray
    threshold: float
    j_in: np.ndarray
    j_int: np.ndarray
    j_out: np.ndarray

    @property
    def n_neurons(self) -> int:
        return int(self.kernel.shape[0])

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.mask, 1)))


def edge_graph(mesh: Mesh) -> sp.csr_matrix:
    """Sparse symmetric graph weighted by Euclidean edge lengths."""
    edges = mesh.edges()
    lengths = np.linalg.norm(mesh.nodes[edges[:, 0]] - mesh.nodes[edges[:, 1]], axis=1)
    n = mesh.n_nodes
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sp.csr_matrix((np.concatenate([lengths, lengths]), (rows, cols)), shape=(n, n))


def mesh_geodesics(mesh: Mesh, n_workers: int = 0, chunk_size: int = 256) -> GeodesicTable:
    """
    All-pairs shortest paths along mesh edges, one Dijkstra run per source.
    Sources are processed in chunks and merged by source index.
    """
    graph = edge_graph(mesh)
    n = mesh.n_nodes
    chunks = [np.arange(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]

    def run(sources):
        return dijkstra(graph, directed=False, indices=sources)

    distances = np.empty((n, n))
    if n_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as executor:
            blocks = list(executor.map(run, chunks))
    else:
        blocks = [run(sources) for sources in chunks]
    for sources, block in zip(chunks, blocks):
        distances[sources] = block

    if np.isinf(distances).any():
        p, q = np.argwhere(np.isinf(distances))[0]
        raise UnreachableNodesError(f"mesh nodes {p} and {q} are not connected")
    distances = 0.5 * (distances + distances.T)
    np.fill_diagonal(distances, 0.0)
    logger.debug("mesh geodesics n_o=%d diameter=%.4f", n, distances.max())
    return GeodesicTable(node_distances=distances)


def neuron_geodesics(table: GeodesicTable, points: SurfacePointSet, mesh: Mesh) -> np.ndarray:
    """
    [D_neu]_ij = phi(x_i)^T [D_g] phi(x_j) from the 3 x 3 node blocks of each
    pair. The diagonal is set to zero.
    """
    nodes = mesh.triangles[points.element_ids]
    weights = points.barycentric
    D_g = table.node_distances
    n = len(points)
    distances = np.zeros((n, n))
    for a in range(3):
        for b in range(3):
            distances += (weights[:, a, None] * weights[None, :, b]) * D_g[np.ix_(nodes[:, a], nodes[:, b])]
    distances = 0.5 * (distances + distances.T)

    self_distance = np.diag(distances).copy()
    if n and self_distance.max() > 0.0:
        logger.debug("interpolated self-distances up to %.4g set to zero (%d neurons off nodes)",
                     self_distance.max(), int(np.count_nonzero(self_distance)))
    np.fill_diagonal(distances, 0.0)
    return distances


def bandwidth_rank(n_neurons: int) -> int:
    """k = min(floor(sqrt(N)), N - 1)."""
    return int(min(np.floor(np.sqrt(n_neurons)), n_neurons - 1))


def local_bandwidths(distances: np.ndarray) -> np.ndarray:
    """
    sigma_i = (k + 1)-th smallest distance from neuron i to the others,
    capped at the (N - 1)-th when fewer neighbours exist.
    """
    n = distances.shape[0]
    if n < 2:
        raise ValueError("local bandwidths need at least two neurons")
    k = bandwidth_rank(n)
    rank = min(k + 1, n - 1)
    off_diagonal = distances[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    bandwidths = np.sort(off_diagonal, axis=1)[:, rank - 1]
    if np.any(bandwidths <= 0.0):
        i = int(np.flatnonzero(bandwidths <= 0.0)[0])
        raise CoincidentNeuronsError(f"zero local bandwidth at neuron {i}")
    return bandwidths


def geometric_kernel(distances: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """[w_g]_ij = exp(-D_ij^2 / (sigma_i sigma_j)) with zero diagonal."""
    kernel = np.exp(-distances ** 2 / np.outer(bandwidths, bandwidths))
    np.fill_diagonal(kernel, 0.0)
    return kernel


def percentile_mask(kernel: np.ndarray, tau_prc: float) -> Tuple[np.ndarray, float]:
    """Keep w_ij >= a where a is the tau-th percentile (linear) of the strict upper triangle."""
    n = kernel.shape[0]
    if n < 2:
        raise ValueError("percentile mask needs at least two neurons")
    if not 0.0 <= tau_prc <= 100.0:
        raise ValueError("tau_prc must lie in [0, 100]")
    upper = kernel[np.triu_indices(n, 1)]
    threshold = float(np.percentile(upper, tau_prc))
    mask = kernel >= threshold
    np.fill_diagonal(mask, False)
    mask = mask & mask.T
    return mask, threshold


def validate_connectivity(mask: np.ndarray) -> bool:
    """Breadth-first search from the first neuron reaches every neuron."""
    n = mask.shape[0]
    if n == 0:
        return False
    order = breadth_first_order(sp.csr_matrix(mask.astype(np.int8)), 0, directed=False,
                                return_predecessors=False)
    return bool(order.size == n)


def select_io_neurons(field_values, n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    J_in: n_in smallest field values (ascending), J_out: n_out largest
    (descending) among the rest, J_int: the remainder in index order.
    Ties go to the lower index.
    """
    u = np.asarray(field_values, dtype=float)
    n = u.size
    if n_in + n_out > n:
        raise ValueError(f"n_in + n_out = {n_in + n_out} exceeds N = {n}")
    j_in = np.argsort(u, kind="stable")[:n_in]
    descending = np.argsort(-u, kind="stable")
    j_out = descending[~np.isin(descending, j_in)][:n_out]
    j_int = np.setdiff1d(np.arange(n), np.concatenate([j_in, j_out]))
    return j_in.astype(np.int64), j_int.astype(np.int64), j_out.astype(np.int64)


def build_topology(table: GeodesicTable, points: SurfacePointSet, mesh: Mesh, field_values: np.ndarray,
                   n_in: int, n_out: int, tau_prc: float,
                   selectors: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> GraphTopology:
    """
    Full graph of one architecture. When `selectors` = (J_in, J_out) is given
    the input/output sets are frozen instead of recomputed from the field.
    """
    distances = neuron_geodesics(table, points, mesh)
    bandwidths = local_bandwidths(distances)
    kernel = geometric_kernel(distances, bandwidths)
    mask, threshold = percentile_mask(kernel, tau_prc)
    if not validate_connectivity(mask):
        raise DisconnectedGraphError(f"sparsity mask at tau_prc={tau_prc} leaves the graph disconnected")

    if selectors is None:
        j_in, j_int, j_out = select_io_neurons(field_values, n_in, n_out)
    else:
        j_in = np.asarray(selectors[0], dtype=np.int64)
        j_out = np.asarray(selectors[1], dtype=np.int64)
        j_int = np.setdiff1d(np.arange(len(points)), np.concatenate([j_in, j_out]))
    return GraphTopology(neuron_distances=distances, bandwidths=bandwidths, kernel=kernel, mask=mask,
                         threshold=threshold, j_in=j_in, j_int=j_int, j_out=j_out)


def edge_table(topology: GraphTopology) -> pd.DataFrame:
    i, j = np.triu_indices(topology.n_neurons, 1)
    return pd.DataFrame({"i": i, "j": j, "w_g": topology.kernel[i, j], "masked": topology.mask[i, j].astype(int)})


def write_edges_csv(path, topology: GraphTopology) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    edge_table(topology).to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %d candidate edges (%d kept) to %s",
                topology.n_neurons * (topology.n_neurons - 1) // 2, topology.n_edges, path)
    return path
