"""
Synthetic non-Gaussian datasets and plain-text persistence of datasets and
trained models.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from sgnn.architecture import GermBundle, Selectors
from sgnn.config import RunConfig, build_config, dump_config, parse_key_values
from sgnn.exceptions import ConfigError, DataFormatError, ModelFormatError
from sgnn.models import GermPolicy, HyperparameterVector, Split

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
OUTPUT_SCALE = 0.9
N_GERMS = 4


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    split: Split = Split.TRAIN
    seed: Optional[int] = None

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if inputs.shape[0] != outputs.shape[0]:
            raise DataFormatError(f"{inputs.shape[0]} input rows but {outputs.shape[0]} output rows")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
            raise DataFormatError("dataset contains non-finite entries")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def n_in(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def n_out(self) -> int:
        return int(self.outputs.shape[1])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.inputs, other.inputs]), np.vstack([self.outputs, other.outputs]), self.split)


@dataclass(frozen=True)
class SyntheticModel:
    """y = 0.9 tanh(raw) with raw mixing a tanh trend, a heteroscedastic
    Gaussian term and a centered quadratic chaos term."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def outputs(self, inputs: np.ndarray, germs: np.ndarray) -> np.ndarray:
        trend = inputs @ self.A.T
        linear = germs @ self.B.T
        quadratic = (germs @ self.C.T) ** 2 - np.sum(self.C ** 2, axis=1)
        raw = np.tanh(trend) + 0.3 * linear / (1.0 + trend ** 2) + 0.2 * quadratic * expit(trend)
        return OUTPUT_SCALE * np.tanh(raw)


def synthetic_model(n_in: int, n_out: int, rng: np.random.Generator) -> SyntheticModel:
    A = rng.standard_normal((n_out, n_in)) * (2.0 / np.sqrt(n_in))
    B = rng.standard_normal((n_out, N_GERMS))
    C = rng.standard_normal((n_out, N_GERMS)) / np.sqrt(N_GERMS)
    return SyntheticModel(A=A, B=B, C=C)


def generate_synthetic(n_d: int, n_test: int, n_in: int, n_out: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Train and test sets drawn in that order from one seeded stream."""
    if min(n_d, n_test, n_in, n_out) < 1:
        raise ValueError("dataset sizes must be at least 1")
    rng = np.random.default_rng(seed)
    model = synthetic_model(n_in, n_out, rng)
    total = n_d + n_test
    inputs = rng.random((total, n_in))
    germs = rng.standard_normal((total, N_GERMS))
    outputs = model.outputs(inputs, germs)
    train = Dataset(inputs[:n_d], outputs[:n_d], Split.TRAIN, seed)
    test = Dataset(inputs[n_d:], outputs[n_d:], Split.TEST, seed)
    logger.info("Generated synthetic data n_d=%d n_test=%d n_in=%d n_out=%d seed=%d", n_d, n_test, n_in, n_out, seed)
    return train, test


def dataset_columns(n_in: int, n_out: int):
    return [f"x_{k}" for k in range(1, n_in + 1)] + [f"y_{k}" for k in range(1, n_out + 1)]


def save_dataset(path, dataset: Dataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.hstack([dataset.inputs, dataset.outputs]),
                         columns=dataset_columns(dataset.n_in, dataset.n_out))
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %d rows to %s", len(dataset), path)
    return path


def _check_header(columns) -> Tuple[int, int]:
    n_in = 0
    while n_in < len(columns) and columns[n_in] == f"x_{n_in + 1}":
        n_in += 1
    n_out = len(columns) - n_in
    for k in range(n_out):
        expected = f"y_{k + 1}"
        if columns[n_in + k] != expected:
            raise DataFormatError(f"unexpected column '{columns[n_in + k]}', expected '{expected}'",
                                  column=str(columns[n_in + k]))
    if n_in == 0 or n_out == 0:
        raise DataFormatError("header must contain x_1.. and y_1.. columns", column=str(columns[0]) if columns else None)
    return n_in, n_out


def load_dataset(path, split: Split = Split.TRAIN) -> Dataset:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise DataFormatError(f"{path}: ragged rows ({exc})") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(f"{path}: empty file") from exc
    columns = [str(column) for column in frame.columns]
    n_in, _ = _check_header(columns)

    numeric = {}
    for column in columns:
        cells = frame[column]
        if (cells == "").any():
            row = int(np.flatnonzero((cells == "").to_numpy())[0])
            raise DataFormatError(f"{path}: missing value in column '{column}' at row {row + 1}", column=column)
        try:
            numeric[column] = cells.astype(float)
        except ValueError as exc:
            raise DataFormatError(f"{path}: non-numeric cell in column '{column}'", column=column) from exc
    values = pd.DataFrame(numeric).to_numpy(dtype=float)
    return Dataset(values[:, :n_in], values[:, n_in:], Split(split))


@dataclass(frozen=True)
class TrainedModel:
    theta: HyperparameterVector
    config: RunConfig
    germs: GermBundle
    selectors: Selectors
    metadata: Dict[str, str] = field(default_factory=dict)


def _format_array(values) -> str:
    return ", ".join(repr(float(v)) for v in np.asarray(values, dtype=float).ravel())


def _format_ints(values) -> str:
    return ", ".join(str(int(v)) for v in np.asarray(values).ravel())


def _to_array(value, dtype=float) -> np.ndarray:
    if isinstance(value, list):
        return np.array([dtype(item) for item in value], dtype=dtype)
    if value == "":
        return np.zeros(0, dtype=dtype)
    return np.array([dtype(value)], dtype=dtype)


GERM_KEYS = ("eta_arch", "u_elem", "u_a", "u_b", "u_poisson")


def save_model(path, model: TrainedModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    theta, germs = model.theta, model.germs
    lines = [
        f"format_version = {MODEL_FORMAT_VERSION}",
        f"theta.h1 = {float(theta.h1)!r}",
        f"theta.h2 = {float(theta.h2)!r}",
        f"theta.zeta_s = {float(theta.zeta_s)!r}",
        f"theta.beta1 = {_format_array(theta.beta1)}",
        f"theta.beta2 = {_format_array(theta.beta2)}",
        f"theta.beta_bias = {_format_array(theta.beta_bias)}",
        f"selectors.j_in = {_format_ints(model.selectors[0])}",
        f"selectors.j_out = {_format_ints(model.selectors[1])}",
        f"germs.policy = {germs.policy.value}",
        f"germs.master_seed = {germs.master_seed}",
    ]
    lines += [f"germs.{key} = {_format_array(getattr(germs, key))}" for key in GERM_KEYS]
    lines += [f"config.{line}" for line in dump_config(model.config).splitlines()]
    lines += [f"meta.{key} = {value}" for key, value in model.metadata.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote model to %s", path)
    return path


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        values = parse_key_values(path.read_text(encoding="utf-8"), source=str(path))
    except ConfigError as exc:
        raise ModelFormatError(str(exc)) from exc

    version = values.get("format_version")
    if version != str(MODEL_FORMAT_VERSION):
        raise ModelFormatError(f"{path}: unsupported format_version {version!r}, expected {MODEL_FORMAT_VERSION}")
    missing_germs = [f"germs.{key}" for key in ("policy", "master_seed") + GERM_KEYS if f"germs.{key}" not in values]
    if missing_germs:
        raise ModelFormatError(f"{path}: missing germ block ({', '.join(missing_germs)})")
    required = ["theta.h1", "theta.h2", "theta.zeta_s", "theta.beta1", "theta.beta2", "theta.beta_bias",
                "selectors.j_in", "selectors.j_out"]
    missing = [key for key in required if key not in values]
    if missing:
        raise ModelFormatError(f"{path}: missing keys {', '.join(missing)}")

    try:
        config = build_config({key[len("config."):]: value for key, value in values.items() if key.startswith("config.")})
    except ConfigError as exc:
        raise ModelFormatError(f"{path}: invalid config block: {exc}") from exc
    theta = HyperparameterVector(h1=float(values["theta.h1"]), h2=float(values["theta.h2"]),
                                 zeta_s=float(values["theta.zeta_s"]),
                                 beta1=_to_array(values["theta.beta1"]), beta2=_to_array(values["theta.beta2"]),
                                 beta_bias=_to_array(values["theta.beta_bias"]))
    germs = GermBundle(master_seed=int(values["germs.master_seed"]), policy=GermPolicy(values["germs.policy"]),
                       **{key: _to_array(values[f"germs.{key}"]) for key in GERM_KEYS})
    selectors = (_to_array(values["selectors.j_in"], int), _to_array(values["selectors.j_out"], int))
    metadata = {key[len("meta."):]: ", ".join(value) if isinstance(value, list) else value
                for key, value in values.items() if key.startswith("meta.")}
    return TrainedModel(theta=theta, config=config, germs=germs, selectors=selectors, metadata=metadata)
