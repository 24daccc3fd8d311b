"""
Validation of a trained model against the test set: test NLL, the
overfitting criterion, confidence intervals from the network ensemble and
from a conditional kernel density of the training data, their bound
discrepancies, CRPS scores and conditional pdf curves.
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp, ndtr

from sgnn.architecture import ModelContext, build_architecture, network_outputs
from sgnn.data_io import Dataset, TrainedModel
from sgnn.likelihood import build_kde, floored_std, log_densities, silverman_bandwidth
from sgnn.models import KdeMode

logger = logging.getLogger(__name__)

BRACKET_WIDTHS = 6.0
QUANTILE_TOL = 1e-8
WEIGHT_PRUNE = 1e-14


def test_nll(outputs: np.ndarray, targets: np.ndarray, mode: KdeMode = KdeMode.JOINT) -> float:
    """-sum log p(y_test | x_test) from ensembles (n_test, n_out, n_sim); an empty set gives 0."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape[0] == 0:
        return 0.0
    return float(-np.sum(log_densities(outputs, targets, mode)))


def cr_overfit(nll_train_opt: float, nll_test: float, n_d: int, n_test: int) -> float:
    """|(n_test / n_d) NLL_opt - NLL_test| / |NLL_test|."""
    if nll_test == 0:
        raise ValueError("overfitting criterion undefined for a zero test NLL")
    return abs((n_test / n_d) * nll_train_opt - nll_test) / abs(nll_test)


def ci_indices(n_sim: int, p_c: float) -> Tuple[int, int]:
    """1-based order statistics (j_min, j_max) of the empirical interval."""
    j_min = max(1, math.ceil(n_sim * (1.0 - p_c) / 2.0))
    j_max = min(n_sim, math.floor(n_sim * (1.0 + p_c) / 2.0))
    return j_min, j_max


def empirical_ci(samples, p_c: float = 0.95) -> Tuple[float, float]:
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    if samples.size < 2:
        raise ValueError("empirical interval needs at least two samples")
    if not 0.0 < p_c < 1.0:
        raise ValueError("p_c must lie in (0, 1)")
    j_min, j_max = ci_indices(samples.size, p_c)
    return float(samples[j_min - 1]), float(samples[j_max - 1])


@dataclass(frozen=True)
class Mixture1D:
    """Weighted Gaussian mixture with a common kernel scale."""
    centers: np.ndarray
    weights: np.ndarray
    scale: float

    @classmethod
    def uniform(cls, centers, scale: float) -> "Mixture1D":
        centers = np.asarray(centers, dtype=float)
        return cls(centers=centers, weights=np.full(centers.size, 1.0 / centers.size), scale=float(scale))

    def pdf(self, y) -> np.ndarray:
        z = (np.asarray(y, dtype=float)[..., None] - self.centers) / self.scale
        return np.exp(-0.5 * z ** 2) @ self.weights / (np.sqrt(2.0 * np.pi) * self.scale)

    def cdf(self, y) -> np.ndarray:
        z = (np.asarray(y, dtype=float)[..., None] - self.centers) / self.scale
        return ndtr(z) @ self.weights

    def bracket(self) -> Tuple[float, float]:
        padding = BRACKET_WIDTHS * self.scale
        return float(self.centers.min() - padding), float(self.centers.max() + padding)

    def quantile(self, q: float, tol: float = QUANTILE_TOL, max_steps: int = 200) -> float:
        """Bisection of the cdf on the bracket samples min/max +- 6 scales."""
        low, high = self.bracket()
        if not self.cdf(low) <= q <= self.cdf(high):
            raise ValueError(f"quantile {q} not bracketed by [{low:.6g}, {high:.6g}]")
        middle = 0.5 * (low + high)
        for _ in range(max_steps):
            middle = 0.5 * (low + high)
            value = float(self.cdf(middle))
            if abs(value - q) < tol:
                break
            if value < q:
                low = middle
            else:
                high = middle
        return middle

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        kernels = rng.choice(self.centers.size, size=n, p=self.weights)
        return self.centers[kernels] + self.scale * rng.standard_normal(n)


class ConditionalKde:
    """
    Training-side conditional density p_train(y | x): a product Gaussian
    kernel over (x, y) with Silverman bandwidths per block, conditioned on x
    by normalizing the x-kernel weights.
    """

    def __init__(self, inputs: np.ndarray, outputs: np.ndarray):
        self.inputs = np.asarray(inputs, dtype=float)
        self.outputs = np.asarray(outputs, dtype=float)
        n_d, n_in = self.inputs.shape
        n_out = self.outputs.shape[1]
        if n_d < 2:
            raise ValueError("conditional density needs at least two training points")
        self.x_scales = silverman_bandwidth(n_d, n_in) * floored_std(self.inputs.T)
        self.y_scales = silverman_bandwidth(n_d, n_out) * floored_std(self.outputs.T)

    @classmethod
    def fit(cls, data: Dataset) -> "ConditionalKde":
        return cls(data.inputs, data.outputs)

    def weights(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.inputs) / self.x_scales
        log_weights = -0.5 * np.sum(z ** 2, axis=1)
        return np.exp(log_weights - logsumexp(log_weights))

    def marginal(self, x, k: int) -> Mixture1D:
        """p_train(y_k | x); kernels with negligible weight are dropped."""
        weights = self.weights(x)
        keep = weights > WEIGHT_PRUNE * weights.max()
        kept = weights[keep]
        return Mixture1D(centers=self.outputs[keep, k], weights=kept / kept.sum(), scale=float(self.y_scales[k]))

    def log_density(self, x, y) -> float:
        z = (np.asarray(y, dtype=float) - self.outputs) / self.y_scales
        log_kernels = -0.5 * np.sum(z ** 2, axis=1) - np.sum(np.log(np.sqrt(2.0 * np.pi) * self.y_scales))
        return float(logsumexp(log_kernels, b=self.weights(x)))


def ensemble_marginal(samples: np.ndarray, k: int, mode: KdeMode = KdeMode.JOINT) -> Mixture1D:
    """Component k of the ensemble KDE of one input (samples n_out x n_sim)."""
    kde = build_kde(samples, mode)
    return Mixture1D.uniform(kde.samples[k], kde.scales()[k])


def gkde_ci(mixture: Mixture1D, p_c: float = 0.95) -> Tuple[float, float]:
    return mixture.quantile((1.0 - p_c) / 2.0), mixture.quantile((1.0 + p_c) / 2.0)


@dataclass(frozen=True)
class BoundDiscrepancy:
    cr_alpha: float
    cr_beta: float
    excluded_alpha: int
    excluded_beta: int


def _relative_error(a: np.ndarray, b: np.ndarray) -> Tuple[float, int]:
    """Mean over points of 2||a - b|| / ||a + b||, skipping points with ||a + b|| = 0."""
    numerators = 2.0 * np.linalg.norm(a - b, axis=1)
    denominators = np.linalg.norm(a + b, axis=1)
    valid = denominators > 0.0
    excluded = int(np.count_nonzero(~valid))
    if not valid.any():
        return float("nan"), excluded
    return float(np.mean(numerators[valid] / denominators[valid])), excluded


def cr_bounds(ci_ann: np.ndarray, ci_train: np.ndarray) -> BoundDiscrepancy:
    """Bounds of shape (n_test, n_out, 2), lower then upper."""
    ci_ann = np.asarray(ci_ann, dtype=float)
    ci_train = np.asarray(ci_train, dtype=float)
    if ci_ann.shape != ci_train.shape:
        raise ValueError("interval arrays differ in shape")
    cr_alpha, excluded_alpha = _relative_error(ci_ann[..., 0], ci_train[..., 0])
    cr_beta, excluded_beta = _relative_error(ci_ann[..., 1], ci_train[..., 1])
    if excluded_alpha or excluded_beta:
        logger.warning("bound discrepancy excluded points lower=%d upper=%d", excluded_alpha, excluded_beta)
    return BoundDiscrepancy(cr_alpha, cr_beta, excluded_alpha, excluded_beta)


def crps_mc(samples, observation: float) -> float:
    """mean|y_l - obs| - 1/(2 n^2) sum_l sum_l' |y_l - y_l'|, the double sum via order statistics."""
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    n = samples.size
    if n == 0:
        raise ValueError("CRPS needs at least one sample")
    spread = 2.0 * np.sum((2.0 * np.arange(n) - n + 1.0) * samples)
    return float(np.mean(np.abs(samples - observation)) - spread / (2.0 * n * n))


@dataclass(frozen=True)
class CrpsReport:
    crps_ann: float
    crps_train: float
    cr_crps: float
    excluded: int
    per_point_ann: np.ndarray
    per_point_train: np.ndarray


def train_samples(kde: ConditionalKde, x, k: int, n_sim: int, seed: int, point: int) -> np.ndarray:
    """n_sim draws of p_train(y_k | x) from the germ stream of (point, component)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point, k)))
    return kde.marginal(x, k).sample(rng, n_sim)


def crps_report(ann_outputs: np.ndarray, kde: ConditionalKde, test: Dataset, seed: int = 0) -> CrpsReport:
    """
    CRPS of the network ensembles and of n_sim draws from the training
    conditional density, per test point and component, and their mean
    relative discrepancy 2|a - b| / (a + b).
    """
    n_test, n_out, n_sim = ann_outputs.shape
    ann = np.empty((n_test, n_out))
    train = np.empty((n_test, n_out))
    for i in range(n_test):
        for k in range(n_out):
            observation = test.outputs[i, k]
            ann[i, k] = crps_mc(ann_outputs[i, k], observation)
            train[i, k] = crps_mc(train_samples(kde, test.inputs[i], k, n_sim, seed, i), observation)
    total = ann + train
    valid = total > 0.0
    excluded = int(np.count_nonzero(~valid))
    if excluded:
        logger.warning("CRPS discrepancy excluded components=%d", excluded)
    cr = float(np.mean(2.0 * np.abs(ann - train)[valid] / total[valid])) if valid.any() else float("nan")
    return CrpsReport(crps_ann=float(ann.mean()), crps_train=float(train.mean()), cr_crps=cr, excluded=excluded,
                      per_point_ann=ann, per_point_train=train)


def pdf_curves(ann_samples: np.ndarray, kde: ConditionalKde, x, k: int, grid: Optional[np.ndarray] = None,
               mode: KdeMode = KdeMode.JOINT, n_grid: int = 801) -> pd.DataFrame:
    """(y, p_ann, p_train) for component k at input x; the default grid covers both supports."""
    ann = ensemble_marginal(ann_samples, k, mode)
    train = kde.marginal(x, k)
    if grid is None:
        low = min(ann.bracket()[0], train.bracket()[0])
        high = max(ann.bracket()[1], train.bracket()[1])
        grid = np.linspace(low, high, n_grid)
    grid = np.asarray(grid, dtype=float)
    return pd.DataFrame({"y": grid, "p_ann": ann.pdf(grid), "p_train": train.pdf(grid)})


@dataclass(frozen=True)
class EvalReport:
    n_d: int
    n_test: int
    p_c: float
    nll_train_opt: float
    nll_test: float
    cr_o: float
    cr_alpha: float
    cr_beta: float
    crps_ann: float
    crps_train: float
    cr_crps: float
    excluded_alpha: int
    excluded_beta: int
    excluded_crps: int

    def to_text(self) -> str:
        return "".join(f"{key} = {value!r}\n" if isinstance(value, float) else f"{key} = {value}\n"
                       for key, value in asdict(self).items())

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path


@dataclass(frozen=True)
class Evaluation:
    report: EvalReport
    per_point: pd.DataFrame
    test_outputs: np.ndarray
    train_kde: ConditionalKde


def evaluate_model(context: ModelContext, model: TrainedModel, train: Dataset, test: Dataset) -> Evaluation:
    """
    All validation criteria on fresh ensembles drawn from the evaluation
    germ stream.
    """
    config = context.config
    theta = model.theta
    architecture = build_architecture(theta, context, model.selectors)
    etas = context.germs.evaluation_germs(config.n_sim, architecture.field.m)
    test_outputs = network_outputs(theta, context, test.inputs, etas, architecture=architecture)
    nll_test = test_nll(test_outputs, test.outputs, config.kde_mode)

    if "nll_train" in model.metadata:
        nll_train_opt = float(model.metadata["nll_train"])
    else:
        train_outputs = network_outputs(theta, context, train.inputs, etas, architecture=architecture)
        nll_train_opt = test_nll(train_outputs, train.outputs, config.kde_mode)

    kde = ConditionalKde.fit(train)
    n_test, n_out = test.outputs.shape
    ci_ann = np.empty((n_test, n_out, 2))
    ci_train = np.empty((n_test, n_out, 2))
    for i in range(n_test):
        for k in range(n_out):
            ci_ann[i, k] = empirical_ci(test_outputs[i, k], config.p_c)
            ci_train[i, k] = gkde_ci(kde.marginal(test.inputs[i], k), config.p_c)
    bounds = cr_bounds(ci_ann, ci_train)
    crps = crps_report(test_outputs, kde, test, seed=config.master_seed)

    report = EvalReport(
        n_d=len(train), n_test=n_test, p_c=config.p_c, nll_train_opt=nll_train_opt, nll_test=nll_test,
        cr_o=cr_overfit(nll_train_opt, nll_test, len(train), n_test),
        cr_alpha=bounds.cr_alpha, cr_beta=bounds.cr_beta,
        crps_ann=crps.crps_ann, crps_train=crps.crps_train, cr_crps=crps.cr_crps,
        excluded_alpha=bounds.excluded_alpha, excluded_beta=bounds.excluded_beta, excluded_crps=crps.excluded,
    )
    points, components = np.meshgrid(np.arange(n_test), np.arange(n_out), indexing="ij")
    per_point = pd.DataFrame({
        "point": points.ravel(),
        "component": components.ravel(),
        "ann_lower": ci_ann[..., 0].ravel(),
        "ann_upper": ci_ann[..., 1].ravel(),
        "train_lower": ci_train[..., 0].ravel(),
        "train_upper": ci_train[..., 1].ravel(),
        "crps_ann": crps.per_point_ann.ravel(),
        "crps_train": crps.per_point_train.ravel(),
    })
    logger.info("Evaluation nll_test=%.4f cr_o=%.4f cr_alpha=%.4f cr_beta=%.4f cr_crps=%.4f",
                report.nll_test, report.cr_o, report.cr_alpha, report.cr_beta, report.cr_crps)
    return Evaluation(report=report, per_point=per_point, test_outputs=test_outputs, train_kde=kde)
