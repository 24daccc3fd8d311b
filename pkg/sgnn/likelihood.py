"""
Gaussian kernel density of the network outputs and the negative
log-likelihood loss.

For one input x the n_sim ensemble outputs y^l define

    p(y | x) = 1/n_sim sum_l prod_k N(y_k; y^l_k, (s_SB sigma_k)^2)

with the Silverman bandwidth s_SB = (4 / (n_sim (2 + n_out)))^{1/(4 + n_out)}
and sigma_k the unbiased sample standard deviation of component k.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from sgnn.models import KdeMode

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
STD_FLOOR = 1e-8


def silverman_bandwidth(n_sim: int, n_out: int) -> float:
    if n_sim < 1 or n_out < 1:
        raise ValueError("silverman bandwidth needs n_sim >= 1 and n_out >= 1")
    return float((4.0 / (n_sim * (2.0 + n_out))) ** (1.0 / (4.0 + n_out)))


def floored_std(samples: np.ndarray) -> np.ndarray:
    """Per-row unbiased std, floored at 1e-8 * max(1, max|sample|) of the row."""
    std = np.std(samples, axis=1, ddof=1)
    floor = STD_FLOOR * np.maximum(1.0, np.abs(samples).max(axis=1))
    floored = std < floor
    if floored.any():
        logger.debug("std floored for %d of %d output components", int(floored.sum()), floored.size)
    return np.maximum(std, floor)


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray
    per_component_std: np.ndarray
    bandwidth: float
    mode: KdeMode = KdeMode.JOINT

    @property
    def n_out(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_sim(self) -> int:
        return int(self.samples.shape[1])

    def scales(self) -> np.ndarray:
        """Kernel standard deviation of every component."""
        if self.mode == KdeMode.MARGINAL:
            return silverman_bandwidth(self.n_sim, 1) * self.per_component_std
        return self.bandwidth * self.per_component_std


def build_kde(samples, mode: KdeMode = KdeMode.JOINT) -> KdeModel:
    """KDE of an n_out x n_sim ensemble."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n_out, n_sim = samples.shape
    if n_sim < 2:
        raise ValueError("a kernel density needs at least two samples")
    return KdeModel(samples=samples, per_component_std=floored_std(samples),
                    bandwidth=silverman_bandwidth(n_sim, n_out), mode=KdeMode(mode))


def log_density(kde: KdeModel, y) -> float:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (kde.n_out,):
        raise ValueError(f"y must have length n_out={kde.n_out}")
    scales = kde.scales()
    z = (y[:, None] - kde.samples) / scales[:, None]
    exponents = -0.5 * z ** 2
    normalizer = LOG_SQRT_2PI + np.log(scales)

    if kde.mode == KdeMode.MARGINAL:
        per_component = logsumexp(exponents, axis=1) - np.log(kde.n_sim) - normalizer
        return float(np.sum(per_component))
    return float(logsumexp(exponents.sum(axis=0)) - np.log(kde.n_sim) - np.sum(normalizer))


def log_densities(outputs: np.ndarray, targets: np.ndarray, mode: KdeMode = KdeMode.JOINT) -> np.ndarray:
    """
    log p(y^i | x^i) for every data point, from ensembles of shape
    (n_points, n_out, n_sim) and targets of shape (n_points, n_out).
    """
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape[:2] != targets.shape:
        raise ValueError(f"ensembles {outputs.shape} do not match targets {targets.shape}")
    return np.array([log_density(build_kde(outputs[i], mode), targets[i]) for i in range(targets.shape[0])])


def nll(kdes: Sequence[KdeModel], targets: Iterable) -> float:
    """
    -sum_i log p(y^i | x^i); np.sum reduces pairwise in index order. One
    target per density, a length mismatch raises ValueError.
    """
    values = np.array([log_density(kde, y) for kde, y in zip(kdes, targets, strict=True)], dtype=float)
    return float(-np.sum(values))


def ensemble_nll(outputs: np.ndarray, targets: np.ndarray, mode: KdeMode = KdeMode.JOINT) -> float:
    return float(-np.sum(log_densities(outputs, targets, mode)))
