"""
Stochastic synaptic weights: W_ij = w_g_ij * exp(-(S_i - S_j)^2 / (2 zeta_s^2 sigma_S^2))
with S_i = <psi^m(x_i), eta>, then masked by the sparsity pattern.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List

import numpy as np

from sgnn.exceptions import DegenerateFieldError
from sgnn.neuron_process import NeuronSet


@dataclass(frozen=True)
class WeightRealization:
    dense: np.ndarray
    sparse: np.ndarray
    germ_index: int


def field_at_neurons(neurons: NeuronSet, eta) -> np.ndarray:
    """S_i = <psi^m(x_i), eta> for every neuron."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (neurons.psi_at_neurons.shape[1],):
        raise ValueError("eta length must match the reduction order m")
    return neurons.psi_at_neurons @ eta


def sigma_S(neurons: NeuronSet) -> float:
    """Exact field scale, sigma_S^2 = N^{-1} sum_i ||psi^m(x_i)||^2."""
    variance = float(np.sum(neurons.psi_at_neurons ** 2)) / neurons.psi_at_neurons.shape[0]
    if not variance > 0.0:
        raise DegenerateFieldError("latent field has zero variance at every neuron")
    return float(np.sqrt(variance))


def weight_matrix(kernel: np.ndarray, S: np.ndarray, zeta_s: float, sigma: float) -> np.ndarray:
    if not (zeta_s > 0 and sigma > 0):
        raise ValueError("zeta_s and sigma_S must be positive")
    delta = S[:, None] - S[None, :]
    weights = kernel * np.exp(-delta ** 2 / (2.0 * zeta_s ** 2 * sigma ** 2))
    np.fill_diagonal(weights, 0.0)
    return weights


def sparsify(dense: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if dense.shape != mask.shape:
        raise ValueError("weight matrix and mask shapes differ")
    return np.where(mask, dense, 0.0)


def weight_realizations(kernel: np.ndarray, mask: np.ndarray, neurons: NeuronSet, zeta_s: float,
                        etas: np.ndarray, n_workers: int = 0) -> List[WeightRealization]:
    """One realization per row of `etas` (shape n_sim x m), in row order."""
    sigma = sigma_S(neurons)

    def build(index: int) -> WeightRealization:
        dense = weight_matrix(kernel, field_at_neurons(neurons, etas[index]), zeta_s, sigma)
        return WeightRealization(dense=dense, sparse=sparsify(dense, mask), germ_index=index)

    indices = range(etas.shape[0])
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as executor:
            return list(executor.map(build, indices))
    return [build(index) for index in indices]
