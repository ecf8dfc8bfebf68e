"""Density-informed pseudo-count posterior ``Dir(alpha + n * DE(x) * NN(x))``.

The three factors can be switched off one at a time for ablations; a
disabled factor is replaced by its neutral element (``n -> 1``,
``DE -> 1``, ``NN -> uniform``).
"""

import logging
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from dip_edl.constants import DEFAULT_EVIDENCE_CLAMP
from dip_edl.dirichlet import as_concentration, dirichlet_mean, vacuity
from dip_edl.errors import DimensionMismatchError, DomainError, NonFiniteEvidenceError
from dip_edl.models import ConcentrationVector

logger = logging.getLogger(__name__)


class ScoreKind(Enum):
    VACUITY = "vacuity"
    MAX_PROB = "max_prob"
    TOTAL_EVIDENCE = "total_evidence"

    @property
    def ood_increasing(self) -> bool:
        """Whether larger values of this score mean "more likely OOD"."""
        return self is ScoreKind.VACUITY


class DIPConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: ConcentrationVector
    n_train: int = Field(ge=1)
    use_n: bool = True
    use_de: bool = True
    use_nn: bool = True
    evidence_clamp: float = Field(default=DEFAULT_EVIDENCE_CLAMP, gt=0.0)

    @property
    def n_classes(self) -> int:
        return self.alpha.k

    @property
    def toggles(self) -> tuple[bool, bool, bool]:
        return self.use_n, self.use_de, self.use_nn


class DIPPosterior(BaseModel):
    """Posterior for one input or a batch; arrays keep the batch on the leading axis."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    concentration: np.ndarray
    evidence: np.ndarray
    predictive: np.ndarray
    vacuity: np.ndarray | float
    density_scale: np.ndarray | float | None = None
    evidence_total: np.ndarray | float | None = None

    @property
    def labels(self) -> np.ndarray | int:
        """Hard predictions; ``argmax`` returns the lowest index on ties."""
        out = np.argmax(self.predictive, axis=-1)
        return int(out) if np.ndim(out) == 0 else out

    @property
    def max_prob(self) -> np.ndarray | float:
        out = np.max(self.predictive, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def total_evidence(self) -> np.ndarray | float:
        out = np.sum(self.evidence, axis=-1) if self.evidence_total is None else self.evidence_total
        return float(out) if np.ndim(out) == 0 else out


def _class_probs(config: DIPConfig, class_probs: ArrayLike) -> np.ndarray:
    probs = np.asarray(class_probs, dtype=float)
    if probs.shape[-1] != config.n_classes:
        raise DimensionMismatchError("class probabilities", config.n_classes, probs.shape[-1])
    if not np.all(np.isfinite(probs)):
        raise NonFiniteEvidenceError("class_probs")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-9):
        raise DomainError("class probabilities must lie on the simplex")
    if not config.use_nn:
        probs = np.full_like(probs, 1.0 / config.n_classes)
    return probs


def _density(config: DIPConfig, density_scale_value: ArrayLike) -> np.ndarray:
    scale = np.asarray(density_scale_value, dtype=float)
    if not np.all(np.isfinite(scale)):
        raise NonFiniteEvidenceError("density")
    if np.any(scale < 0):
        raise DomainError("density scale must be non-negative")
    return np.ones_like(scale) if not config.use_de else scale


def _pseudo_counts(config: DIPConfig, density_scale_value: ArrayLike, class_probs: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    """Clipped pseudo-counts and their per-sample total.

    Unclipped rows total exactly ``n * DE``, so samples sharing ``n * DE``
    share one vacuity bit for bit.
    """
    probs = _class_probs(config, class_probs)
    scale = _density(config, density_scale_value)
    n = float(config.n_train) if config.use_n else 1.0
    if scale.ndim and probs.ndim == 1:
        probs = np.broadcast_to(probs, scale.shape + probs.shape)
    elif scale.ndim and scale.shape[0] != probs.shape[0]:
        raise DimensionMismatchError("density scale batch", probs.shape[0], scale.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        raw = n * np.asarray(scale)[..., None] * probs
    if not np.all(np.isfinite(raw)):
        raise NonFiniteEvidenceError("product")
    evidence = np.clip(raw, 0.0, config.evidence_clamp)
    exact = np.broadcast_to(n * np.asarray(scale), raw.shape[:-1])
    clipped = np.any(raw > config.evidence_clamp, axis=-1)
    total = np.where(clipped, evidence.sum(axis=-1), exact)
    return evidence, total


def dip_evidence(config: DIPConfig, density_scale_value: ArrayLike, class_probs: ArrayLike) -> np.ndarray:
    """Clipped pseudo-counts ``clip(n * DE * NN, 0, evidence_clamp)``."""
    return _pseudo_counts(config, density_scale_value, class_probs)[0]


def dip_concentration(config: DIPConfig, density_scale_value: ArrayLike, class_probs: ArrayLike) -> np.ndarray:
    return config.alpha.array + dip_evidence(config, density_scale_value, class_probs)


def posterior_from_evidence(
    alpha: ConcentrationVector | ArrayLike,
    evidence: ArrayLike,
    density_scale: ArrayLike | None = None,
    total_evidence: ArrayLike | None = None,
) -> DIPPosterior:
    """Assemble the posterior summary for ``Dir(alpha + evidence)``; also serves plain EDL.

    ``total_evidence`` overrides the row sums of ``evidence`` in the vacuity.
    """
    e = np.asarray(evidence, dtype=float)
    a = as_concentration(alpha)
    beta = as_concentration(a + e)
    if total_evidence is None:
        vac = vacuity(beta)
        total = None
    else:
        total = np.asarray(total_evidence, dtype=float)
        vac = beta.shape[-1] / (np.sum(a) + total)
        vac = float(vac) if np.ndim(vac) == 0 else vac
        total = float(total) if np.ndim(total) == 0 else total
    return DIPPosterior(
        concentration=beta,
        evidence=e,
        predictive=dirichlet_mean(beta),
        vacuity=vac,
        density_scale=None if density_scale is None else np.asarray(density_scale, dtype=float),
        evidence_total=total,
    )


def dip_predict(config: DIPConfig, density_scale_value: ArrayLike, class_probs: ArrayLike) -> DIPPosterior:
    evidence, total = _pseudo_counts(config, density_scale_value, class_probs)
    return posterior_from_evidence(config.alpha, evidence, density_scale_value, total)


def uncertainty_score(posterior: DIPPosterior, kind: ScoreKind | str = ScoreKind.VACUITY) -> np.ndarray | float:
    """Raw score of the requested kind; see ``ScoreKind.ood_increasing`` for its orientation."""
    try:
        kind = ScoreKind(kind)
    except ValueError:
        raise DomainError(f"Unknown uncertainty score {kind!r}") from None
    if kind is ScoreKind.VACUITY:
        return posterior.vacuity
    if kind is ScoreKind.MAX_PROB:
        return posterior.max_prob
    return posterior.total_evidence


def ood_score(posterior: DIPPosterior, kind: ScoreKind | str = ScoreKind.VACUITY) -> np.ndarray | float:
    """Score oriented so that larger means more likely OOD."""
    raw = uncertainty_score(posterior, kind)
    return raw if ScoreKind(kind).ood_increasing else -raw
