from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BasisKind(str, Enum):
    """
    Construction used for the anisotropy basis functions.
    Using str as a base keeps the values readable in config files.
    """
    NONSMOOTH = "nonsmooth"
    SMOOTH = "smooth"


class MassMode(str, Enum):
    """Right-hand side used when sampling realizations of the nodal field."""
    CHOLESKY = "cholesky"
    LUMPED = "lumped"
    COVARIANCE = "covariance"


class ReductionMethod(str, Enum):
    """How the reduced eigenpairs are obtained."""
    DIRECT_EIG = "direct_eig"
    SVD_OF_SAMPLES = "svd_of_samples"


class Activation(str, Enum):
    TANH = "tanh"
    SOFTSIGN = "softsign"


class GermPolicy(str, Enum):
    """
    Germ sharing across hyperparameter evaluations. Common random numbers
    reuse the same weight germs for every evaluation; independent draws fresh
    germs for each one.
    """
    COMMON_RANDOM_NUMBERS = "crn"
    INDEPENDENT = "independent"


class KdeMode(str, Enum):
    JOINT = "joint"
    MARGINAL = "marginal"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class TorusParams(BaseModel):
    """
    Parameterization of the torus x(u, v) = ((R + r cos v) cos u,
    (R + r cos v) sin u, r sin v) and its structured (u, v) grid.
    """
    model_config = ConfigDict(frozen=True)

    major_radius: float = Field(2.0, gt=0, description="Major radius R.")
    minor_radius: float = Field(0.7, gt=0, description="Minor radius r, must be smaller than R.")
    n_u: int = Field(80, ge=3, description="Subdivisions along the major circle.")
    n_v: int = Field(24, ge=3, description="Subdivisions along the minor circle.")

    @model_validator(mode="after")
    def check_radii(self):
        if not self.major_radius > self.minor_radius:
            raise ValueError("major_radius must exceed minor_radius")
        return self

    @property
    def n_nodes(self) -> int:
        return self.n_u * self.n_v

    @property
    def n_elements(self) -> int:
        return 2 * self.n_u * self.n_v


class SurfacePoint(BaseModel):
    """
    A point of the discretized surface given by its triangle and the
    barycentric weights of the triangle's three nodes.
    """
    model_config = ConfigDict(frozen=True)

    element_id: int = Field(..., ge=0, description="Index of the containing triangle.")
    barycentric: Tuple[float, float, float] = Field(..., description="Nonnegative weights summing to one.")

    @field_validator("barycentric")
    @classmethod
    def check_weights(cls, value):
        if min(value) < 0.0:
            raise ValueError("barycentric weights must be nonnegative")
        if abs(sum(value) - 1.0) > 1e-12:
            raise ValueError("barycentric weights must sum to 1")
        return value


def _as_vector(value) -> np.ndarray:
    if value is None:
        return np.zeros(0)
    return np.asarray(value, dtype=float).ravel().copy()


class HyperparameterVector(BaseModel):
    """
    The trainable hyperparameter theta_t = (h1, h2, zeta_s, beta1, beta2, beta).
    beta1 and beta2 have length n_h (possibly 0); beta_bias has length n_b.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    h1: float = Field(..., gt=0, description="Base anisotropy coefficient along e1.")
    h2: float = Field(..., gt=0, description="Base anisotropy coefficient along e2.")
    zeta_s: float = Field(..., gt=0, description="Field-similarity scale of the weights.")
    beta1: np.ndarray = Field(default_factory=lambda: np.zeros(0), description="Coefficients of the first anisotropy basis.")
    beta2: np.ndarray = Field(default_factory=lambda: np.zeros(0), description="Coefficients of the second anisotropy basis.")
    beta_bias: np.ndarray = Field(default_factory=lambda: np.zeros(0), description="Coefficients of the bias basis.")

    @field_validator("beta1", "beta2", "beta_bias", mode="before")
    @classmethod
    def coerce_vector(cls, value):
        return _as_vector(value)

    @model_validator(mode="after")
    def check_pairs(self):
        if self.beta1.size != self.beta2.size:
            raise ValueError("beta1 and beta2 must have the same length n_h")
        if not (np.all(np.isfinite(self.beta1)) and np.all(np.isfinite(self.beta2))
                and np.all(np.isfinite(self.beta_bias))):
            raise ValueError("hyperparameter vectors must be finite")
        return self

    @property
    def n_h(self) -> int:
        return int(self.beta1.size)

    @property
    def n_b(self) -> int:
        return int(self.beta_bias.size)

    def free_vector(self) -> np.ndarray:
        """Coordinates updated by the projected optimizer: (beta1, beta2, beta)."""
        return np.concatenate([self.beta1, self.beta2, self.beta_bias])

    def with_free(self, free: np.ndarray) -> "HyperparameterVector":
        free = np.asarray(free, dtype=float)
        n_h = self.n_h
        return self.model_copy(update={
            "beta1": free[:n_h].copy(),
            "beta2": free[n_h:2 * n_h].copy(),
            "beta_bias": free[2 * n_h:].copy(),
        })

    def with_bias(self, beta_bias: np.ndarray) -> "HyperparameterVector":
        return self.model_copy(update={"beta_bias": _as_vector(beta_bias)})

    def full_vector(self) -> np.ndarray:
        return np.concatenate([[self.h1, self.h2, self.zeta_s], self.free_vector()])

    def architecture_key(self) -> tuple:
        """Key of everything the architecture depends on (not zeta_s, not the bias)."""
        return (self.h1, self.h2, self.beta1.tobytes(), self.beta2.tobytes())


class TrainConfig(BaseModel):
    """
    Settings of the two-stage learning procedure: the trial grid over
    (h1, h2, zeta_s), the beta least squares, and the projected Adam descent.
    """
    model_config = ConfigDict(frozen=True)

    grid_h1: Tuple[float, float] = Field((0.065, 0.120), description="Trial bounds for h1.")
    grid_h2: Tuple[float, float] = Field((0.034, 0.094), description="Trial bounds for h2.")
    grid_zeta: Tuple[float, float] = Field((0.040, 0.107), description="Trial bounds for zeta_s.")
    grid_points: int = Field(6, ge=1, description="Grid nodes per axis.")
    n_sim: int = Field(100, ge=2, description="Weight realizations per input.")
    adam_step_anisotropy: float = Field(0.001, gt=0, description="Adam step for beta1 and beta2.")
    adam_step_bias: float = Field(0.01, gt=0, description="Adam step for the bias coefficients.")
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.998, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    fd_rel_step: float = Field(1e-6, gt=0, description="Relative central-difference step.")
    n_wind: int = Field(3, ge=2, description="Window of the normalized maximum change.")
    max_iters: int = Field(25, ge=1, description="Projected descent iterations.")
    delta_tol: float = Field(5e-3, gt=0, description="Stop once the normalized maximum change falls below this.")
    germ_policy: GermPolicy = Field(GermPolicy.COMMON_RANDOM_NUMBERS)
    penalty: float = Field(1e9, description="Loss assigned to a failing candidate.")
    beta_ls_tol: float = Field(1e-6, gt=0, description="Gradient-norm tolerance of the beta least squares.")
    beta_ls_max_steps: int = Field(2000, ge=1)
    beta_ls_observed: bool = Field(False, description="Fit the trial bias against observed outputs.")
    c_lower: float = Field(1e-12, gt=0, description="Lower clamp on the anisotropy coefficients.")
    c_upper: float = Field(float("inf"), gt=0, description="Upper clamp on the anisotropy coefficients.")
    n_workers: int = Field(0, ge=0, description="Worker threads for independent work units, 0 runs serially.")

    @model_validator(mode="after")
    def check_bounds(self):
        for name in ("grid_h1", "grid_h2", "grid_zeta"):
            low, high = getattr(self, name)
            if not 0 < low < high:
                raise ValueError(f"{name} must satisfy 0 < lower < upper")
        return self

    def grid_axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.linspace(low, high, self.grid_points)
                     for low, high in (self.grid_h1, self.grid_h2, self.grid_zeta))
