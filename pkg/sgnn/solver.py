"""
Network equation solver.

With inputs clamped, the free activations solve a = f(W_hat a + b_hat) where
W_hat = W_sp[J_free, J_free] and b_hat = W_sp[J_free, J_in] x + bias. The
equation is solved by the under-relaxed iteration
a <- (1 - alpha) a + alpha f(W_hat a + b_hat), started from zero.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from sgnn.exceptions import NonConvergenceError, NumericalError, PartitionError
from sgnn.models import Activation

logger = logging.getLogger(__name__)


def _softsign(z):
    return z / (1.0 + np.abs(z))


def _softsign_derivative(z):
    return 1.0 / (1.0 + np.abs(z)) ** 2


def _tanh_derivative(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS: Dict[Activation, Tuple[Callable, Callable]] = {
    Activation.TANH: (np.tanh, _tanh_derivative),
    Activation.SOFTSIGN: (_softsign, _softsign_derivative),
}


@dataclass(frozen=True)
class Partition:
    """
    Index gathers replacing the binary selector matrices. `out_positions`
    locates each output neuron inside the free coordinates.
    """
    n_neurons: int
    j_in: np.ndarray
    j_free: np.ndarray
    j_out: np.ndarray
    out_positions: np.ndarray

    @property
    def n_hat(self) -> int:
        return int(self.j_free.size)

    def gather(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(free part, input part) of a full-length vector."""
        return values[self.j_free], values[self.j_in]

    def scatter(self, free_values: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Full vector A = O_hat^T a_hat + (O_in)^T x."""
        full = np.zeros(self.n_neurons)
        full[self.j_free] = free_values
        full[self.j_in] = inputs
        return full


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class SolverSettings:
    alpha: float = 0.5
    eps: float = 0.01
    max_iter: int = 500
    activation: Activation = Activation.TANH


def build_partition(j_in, j_out, n_neurons: int) -> Partition:
    j_in = np.asarray(j_in, dtype=np.int64)
    j_out = np.asarray(j_out, dtype=np.int64)
    for name, indices in (("J_in", j_in), ("J_out", j_out)):
        if indices.size and (indices.min() < 0 or indices.max() >= n_neurons):
            raise PartitionError(f"{name} has indices outside 0..{n_neurons - 1}")
        if np.unique(indices).size != indices.size:
            raise PartitionError(f"{name} has repeated indices")
    if np.intersect1d(j_in, j_out).size:
        raise PartitionError("J_in and J_out overlap")
    j_free = np.setdiff1d(np.arange(n_neurons), j_in)
    out_positions = np.searchsorted(j_free, j_out)
    return Partition(n_neurons=n_neurons, j_in=j_in, j_free=j_free, j_out=j_out, out_positions=out_positions)


def assemble_system(W_sp: np.ndarray, partition: Partition, x, bias) -> Tuple[np.ndarray, np.ndarray]:
    """
    (W_hat, b_hat). `x` may be a single input of length n_in or a matrix of
    inputs with one input per column, giving one b_hat column per input.
    """
    x = np.asarray(x, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if x.shape[0] != partition.j_in.size:
        raise ValueError(f"input has length {x.shape[0]}, expected n_in={partition.j_in.size}")
    if bias.shape != (partition.n_hat,):
        raise ValueError(f"bias has shape {bias.shape}, expected ({partition.n_hat},)")
    if W_sp.shape != (partition.n_neurons, partition.n_neurons):
        raise ValueError("weight matrix does not match the partition")
    W_hat = W_sp[np.ix_(partition.j_free, partition.j_free)]
    W_in = W_sp[np.ix_(partition.j_free, partition.j_in)]
    b_hat = W_in @ x + (bias[:, None] if x.ndim == 2 else bias)
    return W_hat, b_hat


def solve_batch(W_hat: np.ndarray, B_hat: np.ndarray, settings: SolverSettings) -> Tuple[np.ndarray, List[SolveReport]]:
    """
    Relaxed fixed-point iteration for several right-hand sides at once
    (columns of B_hat). Each column stops on its own step norm.
    """
    if not 0.0 < settings.alpha <= 1.0:
        raise ValueError("relaxation alpha must lie in (0, 1]")
    f = ACTIVATIONS[Activation(settings.activation)][0]
    n_hat, n_cols = B_hat.shape
    A = np.zeros((n_hat, n_cols))
    active = np.arange(n_cols)
    iterations = np.zeros(n_cols, dtype=np.int64)
    residuals = np.full(n_cols, np.inf)
    alpha = settings.alpha

    for step in range(1, settings.max_iter + 1):
        current = A[:, active]
        updated = (1.0 - alpha) * current + alpha * f(W_hat @ current + B_hat[:, active])
        if not np.all(np.isfinite(updated)):
            raise NumericalError("fixed-point iterate became non-finite")
        if np.abs(updated).max(initial=0.0) > 1.0:
            raise NumericalError("fixed-point iterate left [-1, 1]")
        change = np.linalg.norm(updated - current, axis=0)
        A[:, active] = updated
        iterations[active] = step
        residuals[active] = change
        active = active[change >= settings.eps]
        if active.size == 0:
            break

    reports = [SolveReport(iterations=int(iterations[c]), residual=float(residuals[c]),
                           converged=bool(residuals[c] < settings.eps)) for c in range(n_cols)]
    if active.size:
        failed = reports[int(active[0])]
        raise NonConvergenceError(
            f"fixed-point iteration did not converge in {settings.max_iter} steps "
            f"(residual {failed.residual:.3g}, {active.size} of {n_cols} systems)", report=failed)
    return A, reports


def solve_fixed_point(W_hat: np.ndarray, b_hat: np.ndarray, alpha: float = 0.5, eps: float = 0.01,
                      max_iter: int = 500, activation: Activation = Activation.TANH) -> Tuple[np.ndarray, SolveReport]:
    settings = SolverSettings(alpha=alpha, eps=eps, max_iter=max_iter, activation=Activation(activation))
    A, reports = solve_batch(W_hat, np.asarray(b_hat, dtype=float)[:, None], settings)
    return A[:, 0], reports[0]


def extract_output(a_hat: np.ndarray, partition: Partition) -> np.ndarray:
    return a_hat[partition.out_positions]


def spectral_diagnostic(W_hat: np.ndarray, a_hat: np.ndarray, b_hat: np.ndarray,
                        activation: Activation = Activation.TANH, steps: int = 200) -> float:
    """Spectral radius of D_f W_hat at a solution, by power iteration."""
    n = W_hat.shape[0]
    if n == 0:
        return 0.0
    derivative = ACTIVATIONS[Activation(activation)][1]
    jacobian = derivative(W_hat @ a_hat + b_hat)[:, None] * W_hat
    vector = np.full(n, 1.0 / np.sqrt(n))
    estimate = 0.0
    for _ in range(steps):
        image = jacobian @ vector
        estimate = float(np.linalg.norm(image))
        if estimate == 0.0:
            return 0.0
        vector = image / estimate
    return estimate


def forward_ensemble(partition: Partition, bias, x, realizations: Sequence[np.ndarray],
                     settings: SolverSettings = SolverSettings()) -> np.ndarray:
    """Outputs of every weight realization for one input, shape (n_out, n_sim)."""
    outputs = np.empty((partition.j_out.size, len(realizations)))
    for column, W_sp in enumerate(realizations):
        W_hat, b_hat = assemble_system(W_sp, partition, x, bias)
        A, _ = solve_batch(W_hat, b_hat[:, None], settings)
        outputs[:, column] = extract_output(A[:, 0], partition)
    return outputs


def forward_dataset(partition: Partition, bias, inputs: np.ndarray, realizations: Sequence[np.ndarray],
                    settings: SolverSettings = SolverSettings()) -> np.ndarray:
    """
    Ensembles for a whole set of inputs (rows of `inputs`), shape
    (n_points, n_out, n_sim). One batched solve per realization.
    """
    inputs = np.asarray(inputs, dtype=float)
    outputs = np.empty((inputs.shape[0], partition.j_out.size, len(realizations)))
    for column, W_sp in enumerate(realizations):
        W_hat, B_hat = assemble_system(W_sp, partition, inputs.T, bias)
        A, reports = solve_batch(W_hat, B_hat, settings)
        outputs[:, :, column] = A[partition.out_positions].T
        logger.debug("realization %d solved, max iterations %d", column, max(r.iterations for r in reports))
    return outputs
