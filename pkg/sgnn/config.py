"""
Run configuration: every tunable of the pipeline in one validated model,
read from a plain-text `key = value` file, presets and `--set` overrides.
"""

import hashlib
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic
import scipy
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from sgnn import __version__
from sgnn.exceptions import ConfigError
from sgnn.models import (
    Activation,
    BasisKind,
    GermPolicy,
    HyperparameterVector,
    KdeMode,
    MassMode,
    ReductionMethod,
    TorusParams,
    TrainConfig,
)
from sgnn.solver import SolverSettings

load_dotenv()

logger = logging.getLogger(__name__)


class _CrossFieldError(ValueError):
    def __init__(self, problems: List[Tuple[str, str]]):
        super().__init__("; ".join(f"{key}: {message}" for key, message in problems))
        self.problems = problems


class RunConfig(BaseModel):
    """All tunables. Defaults reproduce the reference torus experiment."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    # mesh
    major_radius: float = Field(2.0, gt=0, description="Torus major radius R.")
    minor_radius: float = Field(0.7, gt=0, description="Torus minor radius r.")
    n_u: int = Field(80, ge=3, description="Mesh subdivisions along u.")
    n_v: int = Field(24, ge=3, description="Mesh subdivisions along v.")

    # latent field
    tau0: float = Field(1.0, gt=0, description="Spectral shift of the field operator.")
    m: int = Field(100, ge=1, description="Reduction order of the latent field.")
    reduction: ReductionMethod = Field(ReductionMethod.DIRECT_EIG)
    reduction_samples: int = Field(2000, ge=2, description="Field samples used by svd_of_samples.")
    mass_mode: MassMode = Field(MassMode.CHOLESKY, description="Right-hand side of the field sampler.")
    n_h: int = Field(0, ge=0, description="Number of anisotropy basis functions.")
    basis_kind: BasisKind = Field(BasisKind.SMOOTH)
    c_lower: float = Field(1e-12, gt=0, description="Lower clamp of h^(1), h^(2).")
    c_upper: float = Field(float("inf"), gt=0, description="Upper clamp of h^(1), h^(2).")

    # neurons and graph
    n_neurons: int = Field(200, ge=2, description="Number of neurons N.")
    n_candidates: int = Field(0, ge=0, description="Candidate points M, 0 means 2 * n_elem.")
    n_in: int = Field(20, ge=1)
    n_out: int = Field(100, ge=1)
    tau_prc: float = Field(75.0, ge=0, le=100, description="Percentile of the sparsity threshold.")
    n_b: int = Field(0, ge=0, description="Bias basis size, 0 means n_hat (no reduction).")

    # network equation
    alpha: float = Field(0.5, gt=0, le=1, description="Under-relaxation parameter.")
    eps: float = Field(0.01, gt=0, description="Fixed-point step-norm tolerance.")
    max_iter: int = Field(500, ge=1)
    activation: Activation = Field(Activation.TANH)
    kde_mode: KdeMode = Field(KdeMode.JOINT)

    # illustration hyperparameter for the field/architecture subcommands
    h1: float = Field(0.087, gt=0)
    h2: float = Field(0.058, gt=0)
    zeta_s: float = Field(0.0668, gt=0)

    # training
    grid_h1: Tuple[float, float] = Field((0.065, 0.120))
    grid_h2: Tuple[float, float] = Field((0.034, 0.094))
    grid_zeta: Tuple[float, float] = Field((0.040, 0.107))
    grid_points: int = Field(6, ge=1)
    n_sim: int = Field(100, ge=2, description="Weight realizations per input.")
    adam_step_anisotropy: float = Field(0.001, gt=0)
    adam_step_bias: float = Field(0.01, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.998, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    fd_rel_step: float = Field(1e-6, gt=0)
    n_wind: int = Field(3, ge=2)
    max_iters: int = Field(25, ge=1)
    delta_tol: float = Field(5e-3, gt=0)
    germ_policy: GermPolicy = Field(GermPolicy.COMMON_RANDOM_NUMBERS)
    beta_ls_observed: bool = Field(False, description="Fit the trial bias against observed outputs instead of the bias-free equilibrium.")

    # evaluation
    p_c: float = Field(0.95, gt=0, lt=1, description="Nominal confidence level.")

    # reproducibility and resources
    master_seed: int = Field(20250101, ge=0, description="Seed of every germ stream.")
    n_workers: int = Field(0, ge=0, description="Worker threads, 0 runs serially.")

    @model_validator(mode="after")
    def check_consistency(self):
        problems = []
        if not self.major_radius > self.minor_radius:
            problems.append(("minor_radius", "must be smaller than major_radius"))
        n_o = self.n_u * self.n_v
        if self.m > n_o - 1:
            problems.append(("m", f"must not exceed n_o - 1 = {n_o - 1}"))
        if self.n_h >= n_o:
            problems.append(("n_h", f"must be smaller than n_o = {n_o}"))
        if self.n_in + self.n_out > self.n_neurons:
            problems.append(("n_in", "n_in + n_out exceeds n_neurons"))
        if self.n_b > self.n_neurons - self.n_in:
            problems.append(("n_b", "exceeds n_neurons - n_in"))
        if self.n_candidates and self.n_candidates < self.n_neurons:
            problems.append(("n_candidates", "fewer candidates than neurons"))
        if self.c_lower >= self.c_upper:
            problems.append(("c_lower", "must be smaller than c_upper"))
        for name in ("grid_h1", "grid_h2", "grid_zeta"):
            low, high = getattr(self, name)
            if not 0 < low < high:
                problems.append((name, "must satisfy 0 < lower < upper"))
        if problems:
            raise _CrossFieldError(problems)
        return self

    def torus(self) -> TorusParams:
        return TorusParams(major_radius=self.major_radius, minor_radius=self.minor_radius, n_u=self.n_u, n_v=self.n_v)

    @property
    def candidate_count(self) -> int:
        return self.n_candidates or 2 * (2 * self.n_u * self.n_v)

    @property
    def n_hat(self) -> int:
        return self.n_neurons - self.n_in

    @property
    def bias_size(self) -> int:
        return self.n_b or self.n_hat

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(alpha=self.alpha, eps=self.eps, max_iter=self.max_iter, activation=self.activation)

    def train_config(self) -> TrainConfig:
        fields = set(TrainConfig.model_fields) & set(type(self).model_fields)
        return TrainConfig(**{name: getattr(self, name) for name in fields})

    def initial_theta(self) -> HyperparameterVector:
        return HyperparameterVector(h1=self.h1, h2=self.h2, zeta_s=self.zeta_s,
                                    beta1=np.zeros(self.n_h), beta2=np.zeros(self.n_h),
                                    beta_bias=np.zeros(self.bias_size))


PRESETS: Dict[str, Dict[str, object]] = {
    "reference": {"n_h": 0, "max_iters": 25},
    "reference-nh10": {"n_h": 10, "basis_kind": "smooth", "max_iters": 100},
    "smoke": {"n_neurons": 60, "n_in": 6, "n_out": 20, "n_sim": 30, "grid_points": 4,
              "max_iters": 15, "germ_policy": "crn"},
}


def _parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return [part.strip() for part in raw.split(",") if part.strip()]
    return raw


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, object]:
    """`key = value` lines; `#` starts a comment; tuples are comma-separated."""
    values: Dict[str, object] = {}
    bad_lines = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            bad_lines.append(f"line {number}")
            continue
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    if bad_lines:
        raise ConfigError(f"{source}: expected 'key = value' on {', '.join(bad_lines)}", keys=bad_lines)
    return values


def parse_overrides(items: Iterable[str]) -> Dict[str, object]:
    return parse_key_values("\n".join(items), source="--set")


def _collect_problems(exc: ValidationError) -> List[Tuple[str, str]]:
    problems = []
    for error in exc.errors():
        cause = (error.get("ctx") or {}).get("error")
        if isinstance(cause, _CrossFieldError):
            problems.extend(cause.problems)
            continue
        key = ".".join(str(part) for part in error["loc"]) or "config"
        problems.append((key, error["msg"]))
    return problems


def build_config(values: Dict[str, object]) -> RunConfig:
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        problems = _collect_problems(exc)
        keys = sorted({key for key, _ in problems})
        details = "; ".join(f"{key}: {message}" for key, message in problems)
        raise ConfigError(f"invalid configuration ({len(problems)} problems): {details}", keys=keys) from exc


def load_config(path: Optional[str] = None, preset: Optional[str] = None,
                overrides: Iterable[str] = ()) -> RunConfig:
    """
    Preset, then file, then `--set` overrides. Without an explicit path the
    file named by SGNN_CONFIG is used when set. SGNN_WORKERS supplies
    n_workers when no other source does.
    """
    overrides = list(overrides)
    values: Dict[str, object] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(PRESETS)})", keys=["preset"])
        values.update(PRESETS[preset])

    path = path or os.getenv("SGNN_CONFIG")
    if path:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}", keys=["config"])
        values.update(parse_key_values(config_path.read_text(encoding="utf-8"), source=str(config_path)))

    values.update(parse_overrides(overrides))
    if "n_workers" not in values and os.getenv("SGNN_WORKERS"):
        values["n_workers"] = os.getenv("SGNN_WORKERS")
    config = build_config(values)
    logger.debug("configuration loaded preset=%s file=%s overrides=%d", preset, path, len(list(overrides)))
    return config


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(item) for item in value)
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def dump_config(config: RunConfig) -> str:
    """Canonical key-value text, one line per field in declaration order."""
    return "".join(f"{name} = {_format_value(getattr(config, name))}\n" for name in type(config).model_fields)


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()


def write_manifest(directory, config: RunConfig, command: str, extra: Optional[Dict[str, object]] = None) -> Path:
    """Everything needed to rerun a subcommand bit-for-bit."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {
        "command": command,
        "argv": " ".join(sys.argv),
        "config_sha256": config_hash(config),
        "master_seed": config.master_seed,
        "germ_policy": config.germ_policy.value,
        "sgnn_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "pandas_version": pd.__version__,
        "pydantic_version": pydantic.VERSION,
        "python": platform.python_version(),
        "platform": platform.platform(),
    }
    entries.update(extra or {})
    (directory / "config.txt").write_text(dump_config(config), encoding="utf-8")
    path = directory / "manifest.txt"
    path.write_text("".join(f"{key} = {value}\n" for key, value in entries.items()), encoding="utf-8")
    logger.info("Wrote run manifest to %s", path)
    return path
