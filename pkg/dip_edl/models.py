"""Value types shared across modules."""

from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from dip_edl.constants import MIN_CONCENTRATION

_SIMPLEX_TOL = 1e-9


class ConcentrationVector(BaseModel):
    """Positive K-vector parameterizing a Dirichlet distribution."""

    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...]

    @field_validator("values")
    @classmethod
    def _check_values(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if len(v) < 2:
            raise ValueError(f"a Dirichlet needs at least 2 classes, got {len(v)}")
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("concentrations must be finite")
        if np.any(arr < MIN_CONCENTRATION):
            raise ValueError(f"concentrations must be >= {MIN_CONCENTRATION}, got min {arr.min()}")
        return v

    @classmethod
    def of(cls, values: Sequence[float] | np.ndarray) -> "ConcentrationVector":
        return cls(values=tuple(float(x) for x in np.asarray(values, dtype=float).ravel()))

    @classmethod
    def symmetric(cls, k: int, value: float = 1.0) -> "ConcentrationVector":
        return cls(values=(float(value),) * k)

    @property
    def k(self) -> int:
        return len(self.values)

    @property
    def total(self) -> float:
        return float(np.sum(self.values))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class ProbabilityVector(BaseModel):
    """Point on the (K-1)-simplex."""

    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...]

    @field_validator("values")
    @classmethod
    def _check_simplex(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        arr = np.asarray(v, dtype=float)
        if arr.size < 1 or np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(arr.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValueError(f"probabilities must sum to 1, got {arr.sum()!r}")
        return v

    @classmethod
    def of(cls, values: Sequence[float] | np.ndarray) -> "ProbabilityVector":
        return cls(values=tuple(float(x) for x in np.asarray(values, dtype=float).ravel()))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class LabelledDataset(BaseModel):
    """Feature matrix with optional labels; ``labels is None`` marks an OOD set."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray
    labels: np.ndarray | None = None
    n_classes: int | None = None
    truth: object | None = Field(default=None, description="Generator truth exposing log_density/conditional")
    truth_proxy: str | None = None

    @field_validator("features", mode="before")
    @classmethod
    def _as_matrix(cls, v: object) -> np.ndarray:
        arr = np.array(v, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"features must be a non-empty n x d matrix, got shape {arr.shape}")
        return arr

    @field_validator("labels", mode="before")
    @classmethod
    def _as_labels(cls, v: object) -> np.ndarray | None:
        if v is None:
            return None
        arr = np.array(v)
        if arr.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ValueError("labels must be integers")
        return as_int

    @model_validator(mode="after")
    def _check_labels(self) -> "LabelledDataset":
        if self.labels is None:
            return self
        if len(self.labels) != len(self.features):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative class indices")
        if self.n_classes is not None and len(self.labels) and self.labels.max() >= self.n_classes:
            raise ValueError(f"label {self.labels.max()} out of range for {self.n_classes} classes")
        return self

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def is_labelled(self) -> bool:
        return self.labels is not None


class MetricsReport(BaseModel):
    """Metrics for one (model, ID set, OOD set) triple."""

    model_config = ConfigDict(extra="ignore")

    accuracy: float
    brier_id: float = Field(ge=0.0, le=2.0)
    brier_ood: float = Field(ge=0.0, le=2.0)
    auroc: float = Field(ge=0.0, le=1.0)
    aupr: float = Field(ge=0.0, le=1.0)
    auroc_max_prob: float = Field(ge=0.0, le=1.0)
    aupr_max_prob: float = Field(ge=0.0, le=1.0)
    n_id: int
    n_ood: int
