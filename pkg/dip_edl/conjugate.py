"""Closed-form posteriors and predictives for the Categorical-Dirichlet models.

Three models are covered: independent per-observation Dirichlets (each
observation owns its own class-probability vector), the covariate-indexed
model (observations sharing a covariate value share a vector), and the
tempered variant of the first, where each likelihood is raised to a power
``nu`` and used unnormalized. These serve as ground truth for the
verification suite.
"""

from collections import defaultdict
from collections.abc import Hashable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from dip_edl.dirichlet import as_concentration, dirichlet_mean
from dip_edl.errors import DomainError
from dip_edl.models import ConcentrationVector


class DiscreteDataset(BaseModel):
    """Observations whose covariates are opaque hashable keys."""

    model_config = ConfigDict(frozen=True)

    covariates: tuple[Hashable, ...]
    labels: tuple[int, ...]

    @field_validator("covariates", mode="before")
    @classmethod
    def _as_tuple(cls, v: object) -> tuple:
        return tuple(v)  # type: ignore[arg-type]

    @field_validator("labels", mode="before")
    @classmethod
    def _as_ints(cls, v: object) -> tuple[int, ...]:
        return tuple(int(y) for y in v)  # type: ignore[union-attr]

    @model_validator(mode="after")
    def _check_lengths(self) -> "DiscreteDataset":
        if len(self.covariates) != len(self.labels):
            raise ValueError(f"{len(self.covariates)} covariates but {len(self.labels)} labels")
        return self


def _alpha(alpha: ConcentrationVector | ArrayLike) -> np.ndarray:
    a = as_concentration(alpha)
    if a.ndim != 1:
        raise DomainError("prior must be a single concentration vector")
    return a


def _check_label(y: int, n_classes: int) -> None:
    if not 0 <= y < n_classes:
        raise DomainError(f"class index {y} out of range for {n_classes} classes")


def icd_posterior(alpha: ConcentrationVector | ArrayLike, y: int, nu: float = 1.0) -> np.ndarray:
    """Posterior ``Dir(alpha + nu * e_y)`` of one independently indexed observation."""
    a = _alpha(alpha)
    _check_label(y, a.shape[0])
    if not nu > 0:
        raise DomainError(f"temperature must be positive, got {nu}")
    post = a.copy()
    post[y] += nu
    return post


def icd_predictive(alpha: ConcentrationVector | ArrayLike) -> np.ndarray:
    """Predictive for a new observation: the prior mean, whatever was observed."""
    return dirichlet_mean(_alpha(alpha))


def cicd_posterior_counts(data: DiscreteDataset, n_classes: int) -> dict[Hashable, np.ndarray]:
    """Label count vector ``c_j`` for every distinct covariate key."""
    if not data.labels:
        raise DomainError("cannot count labels of an empty dataset")
    counts: dict[Hashable, np.ndarray] = defaultdict(lambda: np.zeros(n_classes))
    for key, y in zip(data.covariates, data.labels):
        _check_label(y, n_classes)
        counts[key][y] += 1.0
    return dict(counts)


def cicd_predictive(
    alpha: ConcentrationVector | ArrayLike,
    counts: Mapping[Hashable, np.ndarray],
    query: Hashable,
) -> np.ndarray:
    """``(alpha + c_x) / (alpha_0 + S_x)``; an unseen key gets the prior predictive."""
    a = _alpha(alpha)
    c = counts.get(query)
    if c is None:
        return a / a.sum()
    return (a + c) / (a.sum() + np.sum(c))


def tempered_posterior_joint(
    alpha: ConcentrationVector | ArrayLike,
    labels: Sequence[int],
    nu: float = 1.0,
) -> np.ndarray:
    """Joint tempered posterior, one ``Dir(alpha + nu e_{y_i})`` row per label."""
    if len(labels) == 0:
        raise DomainError("tempered posterior needs at least one label")
    return np.stack([icd_posterior(alpha, int(y), nu) for y in labels])
