"""
Two-stage training.

Stage one scans a trial grid over (h1, h2, zeta_s) with n_h = 0, fitting the
bias coefficients of every node by least squares. Stage two starts from the
best node and runs projected gradient descent with Adam updates over
(beta1, beta2, beta) with central finite-difference gradients, the
input/output selection frozen at the starting point.
"""

import itertools
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sgnn.architecture import Architecture, ModelContext, Selectors, bias_vector, build_architecture, realize_weights
from sgnn.basis_fields import BasisMatrix
from sgnn.data_io import Dataset
from sgnn.exceptions import (
    ClampViolationError,
    CoincidentNeuronsError,
    DegenerateFieldError,
    DegenerateIntensityError,
    DisconnectedGraphError,
    NonConvergenceError,
    NumericalError,
    SearchFailureError,
)
from sgnn.likelihood import ensemble_nll
from sgnn.models import Activation, GermPolicy, HyperparameterVector, TrainConfig
from sgnn.solver import ACTIVATIONS, assemble_system, forward_dataset, solve_batch, solve_fixed_point, spectral_diagnostic

logger = logging.getLogger(__name__)

# failures that invalidate a candidate theta instead of aborting the run
PENALIZED_ERRORS = (
    DisconnectedGraphError,
    NonConvergenceError,
    NumericalError,
    CoincidentNeuronsError,
    DegenerateIntensityError,
    DegenerateFieldError,
    ClampViolationError,
)

Objective = Callable[[HyperparameterVector, int], float]


def _run(function, jobs: Sequence, n_workers: int) -> List:
    """Order-preserving map, threaded when n_workers > 1."""
    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as executor:
            return list(executor.map(function, jobs))
    return [function(job) for job in jobs]


def _remember(cache: Dict, key, value, size: int) -> None:
    if key not in cache and len(cache) >= size:
        cache.pop(next(iter(cache)))
    cache[key] = value


class LossEvaluator:
    """
    Negative log-likelihood of theta on a dataset. Architectures are cached
    by (h1, h2, beta1, beta2) and weight realizations additionally by
    (zeta_s, germ stream), so bias-only perturbations reuse both.
    """

    def __init__(self, context: ModelContext, config: Optional[TrainConfig] = None,
                 selectors: Optional[Selectors] = None, architecture_cache: int = 32, weight_cache: int = 4):
        self.context = context
        self.config = config or context.config.train_config()
        self.settings = context.config.solver_settings()
        self.kde_mode = context.config.kde_mode
        self.selectors = selectors
        self._architectures: Dict = {}
        self._weights: Dict = {}
        self._sizes = (architecture_cache, weight_cache)
        self._lock = threading.Lock()
        self._draws = itertools.count(1)

    def freeze_selectors(self, selectors: Selectors) -> None:
        self.selectors = (np.asarray(selectors[0], dtype=np.int64), np.asarray(selectors[1], dtype=np.int64))

    def next_stream(self) -> int:
        """Weight germ stream of the next evaluation: always 0 under common random numbers."""
        if self.config.germ_policy == GermPolicy.COMMON_RANDOM_NUMBERS:
            return 0
        with self._lock:
            return next(self._draws)

    def _selector_key(self):
        if self.selectors is None:
            return None
        return self.selectors[0].tobytes(), self.selectors[1].tobytes()

    def architecture(self, theta: HyperparameterVector) -> Architecture:
        key = (theta.architecture_key(), self._selector_key())
        with self._lock:
            cached = self._architectures.get(key)
        if cached is None:
            cached = build_architecture(theta, self.context, self.selectors)
            with self._lock:
                _remember(self._architectures, key, cached, self._sizes[0])
        return cached

    def realizations(self, architecture: Architecture, zeta_s: float, stream: int) -> List[np.ndarray]:
        key = (architecture.theta_key, self._selector_key(), float(zeta_s), stream)
        with self._lock:
            cached = self._weights.get(key)
        if cached is None:
            etas = self.context.germs.weight_germs(stream, self.config.n_sim, architecture.field.m)
            cached = realize_weights(architecture, zeta_s, etas)
            with self._lock:
                _remember(self._weights, key, cached, self._sizes[1])
        return cached

    def outputs(self, theta: HyperparameterVector, inputs: np.ndarray, stream: int) -> np.ndarray:
        architecture = self.architecture(theta)
        realizations = self.realizations(architecture, theta.zeta_s, stream)
        return forward_dataset(architecture.partition, bias_vector(theta, self.context), inputs, realizations,
                               self.settings)

    def penalize(self, theta: HyperparameterVector, reason: str) -> float:
        logger.warning("penalized candidate reason=%s h1=%.6g h2=%.6g zeta_s=%.6g |beta|=%.4g",
                       reason, theta.h1, theta.h2, theta.zeta_s, float(np.linalg.norm(theta.free_vector())))
        return float(self.config.penalty)

    def loss(self, theta: HyperparameterVector, data: Dataset, stream: Optional[int] = None) -> float:
        if stream is None:
            stream = self.next_stream()
        try:
            value = ensemble_nll(self.outputs(theta, data.inputs, stream), data.outputs, self.kde_mode)
        except PENALIZED_ERRORS as exc:
            return self.penalize(theta, type(exc).__name__)
        if not np.isfinite(value):
            return self.penalize(theta, "non_finite_loss")
        return value

    def objective(self, data: Dataset) -> Objective:
        return lambda theta, stream: self.loss(theta, data, stream)

    def spectral_radius(self, theta: HyperparameterVector, x: np.ndarray, stream: int = 0) -> float:
        """rho(D_f W_hat) at the solution of the first weight realization for input x."""
        architecture = self.architecture(theta)
        W_sp = self.realizations(architecture, theta.zeta_s, stream)[0]
        W_hat, b_hat = assemble_system(W_sp, architecture.partition, x, bias_vector(theta, self.context))
        a_hat, _ = solve_fixed_point(W_hat, b_hat, self.settings.alpha, self.settings.eps, self.settings.max_iter,
                                     self.settings.activation)
        return spectral_diagnostic(W_hat, a_hat, b_hat, self.settings.activation)


def beta_ls_objective(beta: np.ndarray, targets: np.ndarray, pre_activations: np.ndarray, basis: np.ndarray,
                      activation: Activation = Activation.TANH) -> float:
    """sum over columns of ||a_star - f(z + H beta)||^2."""
    f = ACTIVATIONS[Activation(activation)][0]
    residual = targets - f(pre_activations + (basis @ beta)[:, None])
    return float(np.sum(residual ** 2))


def beta_ls_gradient(beta: np.ndarray, targets: np.ndarray, pre_activations: np.ndarray, basis: np.ndarray,
                     activation: Activation = Activation.TANH) -> np.ndarray:
    """-2 sum H^T D_f r with D_f the activation derivative at z + H beta."""
    f, derivative = ACTIVATIONS[Activation(activation)]
    z = pre_activations + (basis @ beta)[:, None]
    residual = targets - f(z)
    return -2.0 * basis.T @ np.sum(derivative(z) * residual, axis=1)


def fit_bias_least_squares(targets: np.ndarray, pre_activations: np.ndarray, basis: np.ndarray,
                           activation: Activation = Activation.TANH, tol: float = 1e-6, max_steps: int = 2000,
                           beta0: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient descent with Armijo backtracking on the bias least squares."""
    beta = np.zeros(basis.shape[1]) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    value = beta_ls_objective(beta, targets, pre_activations, basis, activation)
    step = 1.0
    for iteration in range(max_steps):
        gradient = beta_ls_gradient(beta, targets, pre_activations, basis, activation)
        norm_sq = float(gradient @ gradient)
        if np.sqrt(norm_sq) < tol:
            break
        while True:
            candidate = beta - step * gradient
            candidate_value = beta_ls_objective(candidate, targets, pre_activations, basis, activation)
            if candidate_value <= value - 1e-4 * step * norm_sq:
                break
            step *= 0.5
            if step < 1e-30:
                logger.debug("bias least squares stalled at step %d, |grad|=%.3g", iteration, np.sqrt(norm_sq))
                return beta
        beta, value = candidate, candidate_value
        step *= 2.0
    return beta


def estimate_beta_ls(theta: HyperparameterVector, data: Dataset, evaluator: LossEvaluator,
                     stream: int = 0) -> np.ndarray:
    """
    Bias coefficients of a trial node. The network is first solved with zero
    bias for every input and realization; the bias is then fitted so that
    f(z + H beta) reproduces those activations, z = W_hat a_star + W_in x.
    With beta_ls_observed the output coordinates of the targets are replaced
    by the observed outputs.
    """
    architecture = evaluator.architecture(theta)
    partition = architecture.partition
    realizations = evaluator.realizations(architecture, theta.zeta_s, stream)
    zero_bias = np.zeros(partition.n_hat)
    targets, pre_activations = [], []
    for W_sp in realizations:
        W_hat, B_hat = assemble_system(W_sp, partition, data.inputs.T, zero_bias)
        A_star, _ = solve_batch(W_hat, B_hat, evaluator.settings)
        pre_activations.append(W_hat @ A_star + B_hat)
        if evaluator.config.beta_ls_observed:
            A_star = A_star.copy()
            A_star[partition.out_positions] = data.outputs.T
        targets.append(A_star)
    return fit_bias_least_squares(np.hstack(targets), np.hstack(pre_activations),
                                  evaluator.context.bias_basis.values, evaluator.settings.activation,
                                  evaluator.config.beta_ls_tol, evaluator.config.beta_ls_max_steps)


@dataclass
class GridSearchResult:
    theta: HyperparameterVector
    best_index: int
    losses: np.ndarray
    betas: np.ndarray
    table: pd.DataFrame


def trial_grid_search(evaluator: LossEvaluator, data: Dataset) -> GridSearchResult:
    """Loss at every (h1, h2, zeta_s) node with its fitted bias; ties go to the lowest node index."""
    config = evaluator.config
    nodes = [tuple(float(value) for value in node) for node in itertools.product(*config.grid_axes())]
    n_b = evaluator.context.bias_basis.n_b
    jobs = [(index, node, evaluator.next_stream()) for index, node in enumerate(nodes)]
    logger.info("Trial grid: %d nodes", len(nodes))

    def evaluate(job) -> Tuple[float, np.ndarray]:
        index, (h1, h2, zeta_s), stream = job
        theta = HyperparameterVector(h1=h1, h2=h2, zeta_s=zeta_s, beta_bias=np.zeros(n_b))
        try:
            beta = estimate_beta_ls(theta, data, evaluator, stream)
        except PENALIZED_ERRORS as exc:
            return evaluator.penalize(theta, type(exc).__name__), np.zeros(n_b)
        value = evaluator.loss(theta.with_bias(beta), data, stream)
        logger.debug("grid node %d h1=%.4f h2=%.4f zeta_s=%.4f loss=%.6f", index, h1, h2, zeta_s, value)
        return value, beta

    results = _run(evaluate, jobs, config.n_workers)
    losses = np.array([value for value, _ in results])
    betas = np.array([beta for _, beta in results]).reshape(len(nodes), n_b)
    if np.all(losses >= config.penalty):
        raise SearchFailureError(f"all {len(nodes)} trial-grid nodes were penalized")

    best = int(np.argmin(losses))
    h1, h2, zeta_s = nodes[best]
    table = pd.DataFrame({
        "node": np.arange(len(nodes)),
        "h1": [node[0] for node in nodes],
        "h2": [node[1] for node in nodes],
        "zeta_s": [node[2] for node in nodes],
        "loss": losses,
    })
    logger.info("Trial optimum node=%d h1=%.4f h2=%.4f zeta_s=%.4f loss=%.6f", best, h1, h2, zeta_s, losses[best])
    theta = HyperparameterVector(h1=h1, h2=h2, zeta_s=zeta_s, beta_bias=betas[best])
    return GridSearchResult(theta=theta, best_index=best, losses=losses, betas=betas, table=table)


def projection_box(h_star: float, basis, c_lower: float = 0.0, c_upper: float = np.inf) -> float:
    """
    Half-width B_k of the box [-B_k, B_k]^{n_h} keeping h* + sum_j beta_j h_j(x)
    inside [c_lower, c_upper] at every node. Nodes where every basis function
    vanishes impose nothing; no constraining node gives +inf.
    """
    values = basis.values if isinstance(basis, BasisMatrix) else np.asarray(basis, dtype=float)
    if values.ndim != 2 or values.shape[1] == 0:
        return float("inf")
    if not h_star > 0:
        raise ValueError("h_star must be positive")
    margin = max(0.0, min(h_star - c_lower, c_upper - h_star))
    denominators = np.abs(values).sum(axis=1)
    constraining = denominators > 0.0
    if not constraining.any():
        return float("inf")
    return float(np.min(margin / denominators[constraining]))


def delta_max(history: Sequence[np.ndarray], n_wind: int) -> float:
    """max_{q in window} ||theta^(q) - theta^(q-1)|| / max(1, ||theta^(n)||) over the last n_wind steps."""
    if len(history) <= n_wind:
        raise ValueError(f"delta_max needs more than n_wind={n_wind} iterates, got {len(history)}")
    points = [np.asarray(point, dtype=float) for point in history[-(n_wind + 1):]]
    steps = [np.linalg.norm(points[q] - points[q - 1]) for q in range(1, len(points))]
    return float(max(steps) / max(1.0, np.linalg.norm(points[-1])))


@dataclass
class TrainTrace:
    n_h: int
    n_b: int
    thetas: List[np.ndarray] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)

    def append(self, theta: HyperparameterVector, loss: float, delta: float) -> None:
        self.thetas.append(theta.full_vector())
        self.losses.append(float(loss))
        self.deltas.append(float(delta))

    def __len__(self) -> int:
        return len(self.losses)

    def columns(self) -> List[str]:
        return (["h1", "h2", "zeta_s"] + [f"beta1_{j}" for j in range(1, self.n_h + 1)]
                + [f"beta2_{j}" for j in range(1, self.n_h + 1)] + [f"beta_{j}" for j in range(1, self.n_b + 1)])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"iteration": np.arange(len(self)), "loss": self.losses, "delta_max": self.deltas})
        thetas = pd.DataFrame(np.array(self.thetas).reshape(len(self), -1), columns=self.columns())
        return pd.concat([frame, thetas], axis=1)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


def finite_difference_gradient(objective: Objective, theta: HyperparameterVector, config: TrainConfig,
                               next_stream: Callable[[], int], limits: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Central differences over the free coordinates with step
    fd_rel_step * max(1, |theta_j|). With `limits`, the stencil is clipped
    to [-limits, limits] so a coordinate on the box face gets a one-sided
    difference over the step actually taken. Germ streams are assigned
    before dispatch, one per evaluation; common random numbers give both
    sides the same stream.
    """
    free = theta.free_vector()
    steps = config.fd_rel_step * np.maximum(1.0, np.abs(free))
    upper = free + steps
    lower = free - steps
    if limits is not None:
        limits = np.asarray(limits, dtype=float)
        upper = np.minimum(upper, np.maximum(free, limits))
        lower = np.maximum(lower, np.minimum(free, -limits))
    widths = upper - lower
    jobs = []
    for j in range(free.size):
        jobs.append((j, upper[j], next_stream()))
        jobs.append((j, lower[j], next_stream()))

    def evaluate(job) -> float:
        j, value, stream = job
        shifted = free.copy()
        shifted[j] = value
        return objective(theta.with_free(shifted), stream)

    values = np.array(_run(evaluate, jobs, config.n_workers)).reshape(free.size, 2)
    gradient = np.zeros(free.size)
    usable = widths > 0.0
    gradient[usable] = (values[usable, 0] - values[usable, 1]) / widths[usable]
    return gradient


def adam_projected_descent(theta_0: HyperparameterVector, objective: Objective, config: TrainConfig,
                           bounds: Tuple[float, float] = (np.inf, np.inf),
                           next_stream: Optional[Callable[[], int]] = None) -> Tuple[HyperparameterVector, TrainTrace]:
    """
    Adam on (beta1, beta2, beta) with beta^(k) clamped into [-B_k, B_k] after
    every update. Returns the explored iterate of smallest loss and the trace,
    whose row 0 is theta_0.
    """
    next_stream = next_stream or (lambda: 0)
    n_h, n_b = theta_0.n_h, theta_0.n_b
    limits = np.concatenate([np.full(n_h, bounds[0]), np.full(n_h, bounds[1]), np.full(n_b, np.inf)])
    rates = np.concatenate([np.full(2 * n_h, config.adam_step_anisotropy), np.full(n_b, config.adam_step_bias)])

    free = np.clip(theta_0.free_vector(), -limits, limits)
    theta = theta_0.with_free(free)
    loss = objective(theta, next_stream())
    trace = TrainTrace(n_h=n_h, n_b=n_b)
    trace.append(theta, loss, np.nan)
    history = [theta.full_vector()]
    best_theta, best_loss = theta, loss

    first = np.zeros_like(free)
    second = np.zeros_like(free)
    for iteration in range(1, config.max_iters + 1):
        gradient = finite_difference_gradient(objective, theta, config, next_stream, limits)
        first = config.adam_beta1 * first + (1.0 - config.adam_beta1) * gradient
        second = config.adam_beta2 * second + (1.0 - config.adam_beta2) * gradient ** 2
        first_hat = first / (1.0 - config.adam_beta1 ** iteration)
        second_hat = second / (1.0 - config.adam_beta2 ** iteration)
        free = np.clip(free - rates * first_hat / (np.sqrt(second_hat) + config.adam_eps), -limits, limits)

        theta = theta_0.with_free(free)
        loss = objective(theta, next_stream())
        history.append(theta.full_vector())
        delta = delta_max(history, config.n_wind) if len(history) > config.n_wind else np.nan
        trace.append(theta, loss, delta)
        logger.info("iteration %d loss=%.6f delta_max=%.4g", iteration, loss, delta)
        if loss < best_loss:
            best_theta, best_loss = theta, loss
        if delta < config.delta_tol:
            logger.info("Stopped after %d iterations: delta_max below %.3g", iteration, config.delta_tol)
            break
    return best_theta, trace


@dataclass
class TrainResult:
    theta: HyperparameterVector
    selectors: Selectors
    grid: GridSearchResult
    trace: TrainTrace
    loss: float
    spectral_radius: float


def train(context: ModelContext, data: Dataset, config: Optional[TrainConfig] = None) -> TrainResult:
    """Trial grid, then projected Adam from its optimum."""
    evaluator = LossEvaluator(context, config)
    config = evaluator.config
    grid = trial_grid_search(evaluator, data)

    n_h = context.config.n_h
    theta_0 = HyperparameterVector(h1=grid.theta.h1, h2=grid.theta.h2, zeta_s=grid.theta.zeta_s,
                                   beta1=np.zeros(n_h), beta2=np.zeros(n_h), beta_bias=grid.theta.beta_bias)
    selectors = evaluator.architecture(theta_0).selectors
    evaluator.freeze_selectors(selectors)
    bounds = (projection_box(theta_0.h1, context.basis1, config.c_lower, config.c_upper),
              projection_box(theta_0.h2, context.basis2, config.c_lower, config.c_upper))
    logger.info("Projected descent: %d free coordinates, B=(%.4g, %.4g)", theta_0.free_vector().size, *bounds)

    theta, trace = adam_projected_descent(theta_0, evaluator.objective(data), config, bounds, evaluator.next_stream)
    try:
        radius = evaluator.spectral_radius(theta, data.inputs[0])
    except PENALIZED_ERRORS as exc:
        logger.warning("spectral radius unavailable reason=%s", type(exc).__name__)
        radius = float("nan")
    if radius >= 1.0:
        logger.warning("trained model spectral_radius=%.4f is not below 1", radius)
    else:
        logger.info("trained model spectral_radius=%.4f", radius)
    return TrainResult(theta=theta, selectors=selectors, grid=grid, trace=trace, loss=float(min(trace.losses)),
                       spectral_radius=radius)
