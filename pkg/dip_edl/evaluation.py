"""Classification and OOD-detection metrics.

OOD samples are the positive class for AUROC and AUPR; scores passed in are
expected to increase with "OOD-ness" (see ``dip_head.ood_score``).
"""

import logging
from collections.abc import Sequence
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import rankdata

from dip_edl.dip_head import DIPPosterior, ScoreKind, ood_score
from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.models import MetricsReport

logger = logging.getLogger(__name__)


class BrierTarget(Enum):
    ONE_HOT = "one_hot"
    UNIFORM = "uniform"


class ScoredSample(BaseModel):
    """One evaluated input; ``true_label`` is ``None`` for OOD samples."""

    model_config = ConfigDict(frozen=True)

    predictive: tuple[float, ...]
    uncertainty: float
    true_label: int | None = None


class ScoredSamples(BaseModel):
    """Column-wise batch of scored samples."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    predictive: np.ndarray
    uncertainty: np.ndarray
    true_labels: np.ndarray | None = None

    @model_validator(mode="after")
    def _check(self) -> "ScoredSamples":
        n = self.predictive.shape[0]
        if self.predictive.ndim != 2 or self.uncertainty.shape != (n,):
            raise ValueError("predictive must be n x K with one uncertainty per row")
        if self.true_labels is not None and self.true_labels.shape != (n,):
            raise ValueError("one label per row is required")
        return self

    @classmethod
    def from_samples(cls, samples: Sequence[ScoredSample]) -> "ScoredSamples":
        if not samples:
            raise DomainError("no samples to score")
        labels = [s.true_label for s in samples]
        labelled = [y is not None for y in labels]
        if any(labelled) and not all(labelled):
            raise DomainError("a batch must be all ID or all OOD")
        return cls(
            predictive=np.array([s.predictive for s in samples], dtype=float),
            uncertainty=np.array([s.uncertainty for s in samples], dtype=float),
            true_labels=np.array(labels, dtype=np.int64) if all(labelled) else None,
        )

    @classmethod
    def from_posterior(
        cls,
        posterior: DIPPosterior,
        labels: ArrayLike | None = None,
        kind: ScoreKind | str = ScoreKind.VACUITY,
    ) -> "ScoredSamples":
        return cls(
            predictive=np.atleast_2d(posterior.predictive),
            uncertainty=np.atleast_1d(np.asarray(ood_score(posterior, kind), dtype=float)),
            true_labels=None if labels is None else np.asarray(labels).astype(np.int64),
        )

    @property
    def n(self) -> int:
        return self.predictive.shape[0]


def _batch(samples: ScoredSamples | Sequence[ScoredSample]) -> ScoredSamples:
    batch = samples if isinstance(samples, ScoredSamples) else ScoredSamples.from_samples(samples)
    if batch.n == 0:
        raise DomainError("no samples to score")
    return batch


def accuracy(samples: ScoredSamples | Sequence[ScoredSample]) -> float:
    batch = _batch(samples)
    if batch.true_labels is None:
        raise DomainError("accuracy needs labelled samples")
    return float(np.mean(np.argmax(batch.predictive, axis=1) == batch.true_labels))


def brier_score(
    samples: ScoredSamples | Sequence[ScoredSample],
    target_kind: BrierTarget | str = BrierTarget.ONE_HOT,
) -> float:
    """Mean over samples of the per-sample sum of squared probability errors."""
    batch = _batch(samples)
    target_kind = BrierTarget(target_kind)
    k = batch.predictive.shape[1]
    if target_kind is BrierTarget.UNIFORM:
        target = np.full_like(batch.predictive, 1.0 / k)
    else:
        if batch.true_labels is None:
            raise DomainError("one-hot Brier score needs labelled samples")
        target = np.zeros_like(batch.predictive)
        target[np.arange(batch.n), batch.true_labels] = 1.0
    diff = batch.predictive - target
    return float(np.mean(np.sum(diff * diff, axis=1)))


def _split_scores(id_scores: ArrayLike, ood_scores: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    neg = np.asarray(id_scores, dtype=float).ravel()
    pos = np.asarray(ood_scores, dtype=float).ravel()
    if neg.size == 0 or pos.size == 0:
        raise DomainError("both ID and OOD scores are required")
    if not (np.all(np.isfinite(neg)) and np.all(np.isfinite(pos))):
        raise DomainError("scores must be finite")
    return neg, pos


def auroc(id_scores: ArrayLike, ood_scores: ArrayLike) -> float:
    """Mann-Whitney statistic with average ranks for ties."""
    neg, pos = _split_scores(id_scores, ood_scores)
    ranks = rankdata(np.concatenate([neg, pos]))
    rank_sum = ranks[neg.size :].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (neg.size * pos.size))


def aupr(id_scores: ArrayLike, ood_scores: ArrayLike) -> float:
    """Step-wise area ``sum (R_i - R_{i-1}) P_i`` over descending distinct thresholds."""
    neg, pos = _split_scores(id_scores, ood_scores)
    scores = np.concatenate([neg, pos])
    truth = np.concatenate([np.zeros(neg.size), np.ones(pos.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, truth = scores[order], truth[order]
    cuts = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tps = np.cumsum(truth)[cuts]
    precision = tps / (cuts + 1)
    recall = tps / pos.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def evaluate(
    id_posterior: DIPPosterior,
    id_labels: ArrayLike,
    ood_posterior: DIPPosterior,
    score: ScoreKind | str = ScoreKind.VACUITY,
) -> MetricsReport:
    """Full metric row for one (ID, OOD) pair; max-prob ranking figures ride along."""
    labels = np.asarray(id_labels).astype(np.int64)
    id_batch = ScoredSamples.from_posterior(id_posterior, labels, score)
    ood_batch = ScoredSamples.from_posterior(ood_posterior, None, score)
    if id_batch.predictive.shape[1] != ood_batch.predictive.shape[1]:
        raise DimensionMismatchError("classes", id_batch.predictive.shape[1], ood_batch.predictive.shape[1])
    id_conf = np.atleast_1d(ood_score(id_posterior, ScoreKind.MAX_PROB))
    ood_conf = np.atleast_1d(ood_score(ood_posterior, ScoreKind.MAX_PROB))
    report = MetricsReport(
        accuracy=accuracy(id_batch),
        brier_id=brier_score(id_batch, BrierTarget.ONE_HOT),
        brier_ood=brier_score(ood_batch, BrierTarget.UNIFORM),
        auroc=auroc(id_batch.uncertainty, ood_batch.uncertainty),
        aupr=aupr(id_batch.uncertainty, ood_batch.uncertainty),
        auroc_max_prob=auroc(id_conf, ood_conf),
        aupr_max_prob=aupr(id_conf, ood_conf),
        n_id=id_batch.n,
        n_ood=ood_batch.n,
    )
    logger.info("Evaluated ID/OOD pair", extra=report.model_dump())
    return report
