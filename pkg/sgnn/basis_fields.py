"""
Orthonormal, zero-mean nodal bases for the anisotropy fields and the
low-rank bias basis.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Tuple

import numpy as np
import pandas as pd

from sgnn.exceptions import BasisError
from sgnn.models import BasisKind, TorusParams

logger = logging.getLogger(__name__)

SMOOTH_NORMALIZATION = 1.0 / np.sqrt(np.pi)


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    kind: BasisKind

    @property
    def n_h(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class BiasBasis:
    values: np.ndarray

    @property
    def n_b(self) -> int:
        return int(self.values.shape[1])


def _center_and_orthonormalize(columns: np.ndarray) -> np.ndarray:
    centered = columns - columns.mean(axis=0, keepdims=True)
    q, _ = np.linalg.qr(centered, mode="reduced")
    return q


def empty_basis(n_o: int, kind: BasisKind = BasisKind.SMOOTH) -> BasisMatrix:
    return BasisMatrix(values=np.zeros((n_o, 0)), kind=kind)


def build_nonsmooth_basis(n_o: int, n_h: int, seed) -> BasisMatrix:
    """Centered standard-normal columns orthonormalized by economy QR."""
    if not 1 <= n_h < n_o:
        raise BasisError(f"nonsmooth basis needs 1 <= n_h < n_o, got n_h={n_h}, n_o={n_o}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_o, n_h))
    return BasisMatrix(values=_center_and_orthonormalize(raw), kind=BasisKind.NONSMOOTH)


def _frequency_pairs() -> Iterator[Tuple[int, int]]:
    # shells of max(m, n): (1,1), (1,2), (2,1), (2,2), (1,3), (2,3), (3,1), ...
    shell = 1
    while True:
        for m in range(1, shell + 1):
            for n in range(1, shell + 1):
                if max(m, n) == shell:
                    yield m, n
        shell += 1


def _trig_product(ell: int, m: int, n: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if ell == 1:
        return np.cos(m * u) * np.cos(n * v)
    if ell == 2:
        return np.sin(m * u) * np.cos(n * v)
    if ell == 3:
        return np.cos(m * u) * np.sin(n * v)
    return np.sin(m * u) * np.sin(n * v)


def smooth_basis_columns(params: TorusParams, n_h: int, family: int = 1) -> np.ndarray:
    """
    Raw trigonometric columns c * phi^(l)_{m,n}(u_i, v_i) before centering.
    Family 1 cycles l = 1, 2, 3, 4 for every (m, n); family 2 starts the
    cycle at l = 2.
    """
    if n_h < 1:
        raise BasisError("smooth basis needs n_h >= 1")
    u = 2.0 * np.pi * np.arange(params.n_u) / params.n_u
    v = 2.0 * np.pi * np.arange(params.n_v) / params.n_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    uu, vv = uu.ravel(), vv.ravel()

    order = (1, 2, 3, 4) if family == 1 else (2, 3, 4, 1)
    columns = []
    pairs = _frequency_pairs()
    while len(columns) < n_h:
        m, n = next(pairs)
        for ell in order:
            if len(columns) == n_h:
                break
            columns.append(SMOOTH_NORMALIZATION * _trig_product(ell, m, n, uu, vv))
    return np.stack(columns, axis=1)


def build_smooth_basis(params: TorusParams, n_h: int, family: int = 1) -> BasisMatrix:
    """Trigonometric products on the (u, v) grid, centered then orthonormalized."""
    raw = smooth_basis_columns(params, n_h, family)
    if n_h >= params.n_nodes:
        raise BasisError(f"n_h={n_h} must be smaller than n_o={params.n_nodes}")
    return BasisMatrix(values=_center_and_orthonormalize(raw), kind=BasisKind.SMOOTH)


def build_anisotropy_bases(params: TorusParams, n_h: int, kind: BasisKind, seed) -> Tuple[BasisMatrix, BasisMatrix]:
    """The pair ([h_1], [h_2]); n_h = 0 gives two empty bases."""
    n_o = params.n_nodes
    if n_h == 0:
        return empty_basis(n_o, kind), empty_basis(n_o, kind)
    if kind == BasisKind.SMOOTH:
        return build_smooth_basis(params, n_h, family=1), build_smooth_basis(params, n_h, family=2)
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    first, second = sequence.spawn(2)
    return build_nonsmooth_basis(n_o, n_h, first), build_nonsmooth_basis(n_o, n_h, second)


def build_bias_basis(n_hat: int, n_b: int, seed=0) -> BiasBasis:
    """
    Identity when n_b == n_hat (no reduction); otherwise the first n_b
    columns of an orthonormalized random n_hat x n_b matrix.
    """
    if not 1 <= n_b <= n_hat:
        raise BasisError(f"bias basis needs 1 <= n_b <= n_hat, got n_b={n_b}, n_hat={n_hat}")
    if n_b == n_hat:
        return BiasBasis(values=np.eye(n_hat))
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n_hat, n_b)), mode="reduced")
    return BiasBasis(values=q)


def write_basis_csv(path, basis1: BasisMatrix, basis2: BasisMatrix) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"node": np.arange(basis1.values.shape[0])})
    for k, basis in ((1, basis1), (2, basis2)):
        for j in range(basis.n_h):
            frame[f"h{k}_{j + 1}"] = basis.values[:, j]
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %d basis columns to %s", basis1.n_h + basis2.n_h, path)
    return path
