from typing import List, Optional


class SgnnError(Exception):
    """Base class for every error raised by the sgnn package."""


class MeshError(SgnnError, ValueError):
    """Invalid mesh parameters, degenerate elements or bad element ids."""


class BasisError(SgnnError, ValueError):
    """Basis dimensions that cannot be honoured (n_h >= n_o, n_b > n_hat)."""


class FieldError(SgnnError, RuntimeError):
    """FEM factorization failure, dense-guard violation or exceeded rank."""


class ClampViolationError(SgnnError, ValueError):
    """Anisotropy coefficient outside its clamps at some mesh node."""


class DegenerateIntensityError(SgnnError, RuntimeError):
    """The Poisson intensity cannot produce the requested distinct neurons."""


class DegenerateFieldError(SgnnError, RuntimeError):
    """The latent field has zero variance at every neuron."""


class UnreachableNodesError(SgnnError, RuntimeError):
    """Shortest paths do not connect every pair of mesh nodes."""


class CoincidentNeuronsError(SgnnError, RuntimeError):
    """A local bandwidth is zero because neurons coincide."""


class DisconnectedGraphError(SgnnError, RuntimeError):
    """The sparsity mask leaves the neural graph disconnected."""


class PartitionError(SgnnError, ValueError):
    """Input/output index sets overlap or fall outside 0..N-1."""


class NumericalError(SgnnError, RuntimeError):
    """Non-finite values or iterates leaving the invariant cube."""


class NonConvergenceError(SgnnError, RuntimeError):
    """
    The fixed-point iteration hit max_iter before the step norm fell below
    the tolerance. The SolveReport of the failing solve travels with it.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class SearchFailureError(SgnnError, RuntimeError):
    """Every trial-grid node was penalized."""


class DataFormatError(SgnnError, ValueError):
    """Malformed dataset file."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class ModelFormatError(SgnnError, ValueError):
    """Model file with a wrong version, missing keys or no germ block."""


class ConfigError(SgnnError, ValueError):
    """Configuration validation failed; `keys` lists every offending key."""

    def __init__(self, message: str, keys: Optional[List[str]] = None):
        super().__init__(message)
        self.keys = keys or []
