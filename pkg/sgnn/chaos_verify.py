"""
Hermite chaos coefficients of F(Xi) = exp(-b Xi^2), Xi standard normal.

The closed form f_alpha = sqrt((2 alpha)!) / alpha! * (-b)^alpha / (1 + 2b)^(alpha + 1/2)
is checked against Gauss-Hermite quadrature of E{F h_k(Xi)} with the
normalized probabilists' polynomials h_k = He_k / sqrt(k!). Odd degrees
vanish by parity and f_alpha is the coefficient of degree 2 alpha; the
`direct` mapping pairs f_alpha with degree alpha instead.
"""

import logging
from enum import Enum
from typing import Iterable

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import gammaln

logger = logging.getLogger(__name__)

LOG_SPACE_FROM = 20
DEFAULT_QUADRATURE = 160


class IndexMapping(str, Enum):
    EVEN = "even"
    DIRECT = "direct"

    def degree(self, alpha: int) -> int:
        return 2 * alpha if self == IndexMapping.EVEN else alpha


def hermite_coeff_closed(b: float, alpha: int) -> float:
    if b < 0 or alpha < 0:
        raise ValueError("closed form needs b >= 0 and alpha >= 0")
    if b == 0:
        return 1.0 if alpha == 0 else 0.0
    if alpha > LOG_SPACE_FROM:
        log_magnitude = (0.5 * gammaln(2 * alpha + 1) - gammaln(alpha + 1)
                         + alpha * np.log(b) - (alpha + 0.5) * np.log1p(2 * b))
        return float((-1) ** alpha * np.exp(log_magnitude))
    factor = np.sqrt(float(np.prod(np.arange(1, 2 * alpha + 1, dtype=float)))) / float(
        np.prod(np.arange(1, alpha + 1, dtype=float)))
    return float(factor * (-b) ** alpha / (1.0 + 2.0 * b) ** (alpha + 0.5))


def normalized_hermite(x: np.ndarray, degree: int) -> np.ndarray:
    """h_k(x) by h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k + 1)."""
    x = np.asarray(x, dtype=float)
    previous = np.zeros_like(x)
    current = np.ones_like(x)
    for k in range(degree):
        previous, current = current, (x * current - np.sqrt(k) * previous) / np.sqrt(k + 1)
    return current


def hermite_coeff_quadrature(b: float, degree: int, n_quad: int = DEFAULT_QUADRATURE) -> float:
    """E{exp(-b Xi^2) h_degree(Xi)} by Gauss-Hermite quadrature against the standard normal."""
    if n_quad < 64:
        raise ValueError("n_quad must be at least 64")
    nodes, weights = hermegauss(n_quad)
    integrand = np.exp(-b * nodes ** 2) * normalized_hermite(nodes, degree)
    return float(weights @ integrand / np.sqrt(2.0 * np.pi))


def second_moment(b: float) -> float:
    """E{F^2} = (1 + 4b)^(-1/2)."""
    return float((1.0 + 4.0 * b) ** -0.5)


def truncation_error(b: float, order: int) -> float:
    """Exact L2 error of the even-mapped expansion truncated at `order`."""
    captured = sum(hermite_coeff_closed(b, alpha) ** 2 for alpha in range(order + 1))
    return float(np.sqrt(max(second_moment(b) - captured, 0.0)))


def chaos_reconstruction_error(b: float, order: int, n_mc: int = 200_000, seed: int = 0,
                               mapping: IndexMapping = IndexMapping.EVEN) -> float:
    """Monte Carlo L2 distance between exp(-b Xi^2) and its truncated expansion."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    mapping = IndexMapping(mapping)
    xi = np.random.default_rng(seed).standard_normal(n_mc)
    approximation = np.zeros(n_mc)
    for alpha in range(order + 1):
        approximation += hermite_coeff_closed(b, alpha) * normalized_hermite(xi, mapping.degree(alpha))
    return float(np.sqrt(np.mean((np.exp(-b * xi ** 2) - approximation) ** 2)))


def parseval_holds(b: float, order: int) -> bool:
    captured = sum(hermite_coeff_closed(b, alpha) ** 2 for alpha in range(order + 1))
    return captured <= second_moment(b) * (1.0 + 1e-12)


def chaos_table(b_values: Iterable[float] = (0.1, 1.0, 5.0), max_alpha: int = 10,
                n_quad: int = DEFAULT_QUADRATURE) -> pd.DataFrame:
    rows = []
    for b in b_values:
        for alpha in range(max_alpha + 1):
            closed = hermite_coeff_closed(b, alpha)
            quadrature = hermite_coeff_quadrature(b, 2 * alpha, n_quad)
            rows.append({
                "b": b,
                "alpha": alpha,
                "closed": closed,
                "quadrature": quadrature,
                "odd_degree": hermite_coeff_quadrature(b, 2 * alpha + 1, n_quad),
                "abs_dev": abs(closed - quadrature),
                "rel_dev": abs(closed - quadrature) / abs(closed) if closed else abs(quadrature),
            })
    table = pd.DataFrame(rows)
    logger.debug("chaos table max abs deviation %.3g", table["abs_dev"].max())
    return table
