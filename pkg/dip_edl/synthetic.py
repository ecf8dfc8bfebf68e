"""Seeded synthetic generators with known (or proxied) ground truth."""

import logging
import math

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp, softmax

from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.models import LabelledDataset
from dip_edl.seeding import make_rng

logger = logging.getLogger(__name__)


class BlobTruth(BaseModel):
    """Exact density and Bayes conditional of an isotropic Gaussian mixture."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str = "blobs"
    centers: np.ndarray
    sigma: float = Field(gt=0.0)
    priors: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "BlobTruth":
        if self.priors.shape != (self.centers.shape[0],) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("one prior per center, summing to 1")
        return self

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def _log_joint(self, x: ArrayLike) -> tuple[np.ndarray, bool]:
        q = np.asarray(x, dtype=float)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        if q.shape[1] != self.d:
            raise DimensionMismatchError("query", self.d, q.shape[1])
        sq = np.sum((q[:, None, :] - self.centers[None]) ** 2, axis=2)
        log_norm = -0.5 * self.d * math.log(2.0 * math.pi * self.sigma**2)
        return np.log(self.priors) + log_norm - 0.5 * sq / self.sigma**2, single

    def log_density(self, x: ArrayLike) -> np.ndarray | float:
        joint, single = self._log_joint(x)
        out = logsumexp(joint, axis=1)
        return float(out[0]) if single else out

    def conditional(self, x: ArrayLike) -> np.ndarray:
        joint, single = self._log_joint(x)
        out = softmax(joint, axis=1)
        return out[0] if single else out

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        labels = rng.choice(self.n_classes, size=n, p=self.priors)
        features = self.centers[labels] + self.sigma * rng.standard_normal((n, self.d))
        return features, labels


def circle_centers(k: int, radius: float = 10.0) -> np.ndarray:
    """``k`` points evenly spaced on a circle; ``k=2`` gives ``(+-radius, 0)``."""
    if k < 2:
        raise DomainError(f"need at least 2 centers, got {k}")
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    centers[np.abs(centers) < 1e-12 * radius] = 0.0
    return centers


def make_blobs(
    n_classes: int,
    per_class: int,
    centers: ArrayLike,
    sigma: float,
    seed: int,
) -> LabelledDataset:
    """``per_class`` isotropic Gaussian draws around each center, shuffled."""
    if per_class < 1:
        raise DomainError(f"per_class must be positive, got {per_class}")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    if c.shape[0] != n_classes:
        raise DimensionMismatchError("centers", n_classes, c.shape[0])
    gaps = np.linalg.norm(c[:, None] - c[None], axis=2)[np.triu_indices(n_classes, 1)]
    if np.any(gaps == 0):
        raise DomainError("centers must be pairwise distinct")

    rng = make_rng(seed)
    labels = np.repeat(np.arange(n_classes), per_class)
    features = c[labels] + sigma * rng.standard_normal((labels.size, c.shape[1]))
    order = rng.permutation(labels.size)
    truth = BlobTruth(centers=c, sigma=float(sigma), priors=np.full(n_classes, 1.0 / n_classes))
    logger.debug("Generated blobs", extra={"n_classes": n_classes, "count": int(labels.size)})
    return LabelledDataset(features=features[order], labels=labels[order], n_classes=n_classes, truth=truth)


def make_two_moons(n: int, noise: float, seed: int) -> LabelledDataset:
    """Interleaved half-circles; class 0 gets ``ceil(n/2)`` points. No exact truth, KDE is the proxy."""
    if n < 2:
        raise DomainError(f"two moons needs n >= 2, got {n}")
    if noise < 0:
        raise DomainError(f"noise must be non-negative, got {noise}")
    n_outer = (n + 1) // 2
    n_inner = n // 2
    outer = np.linspace(0.0, np.pi, n_outer)
    inner = np.linspace(0.0, np.pi, n_inner)
    features = np.vstack(
        [
            np.column_stack([np.cos(outer), np.sin(outer)]),
            np.column_stack([1.0 - np.cos(inner), 0.5 - np.sin(inner)]),
        ]
    )
    labels = np.r_[np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)]
    rng = make_rng(seed)
    if noise > 0:
        features = features + noise * rng.standard_normal(features.shape)
    order = rng.permutation(n)
    return LabelledDataset(features=features[order], labels=labels[order], n_classes=2, truth_proxy="kde")


def make_ood_shift(
    base: LabelledDataset,
    shift: ArrayLike,
    scale: float,
    seed: int,
    n: int | None = None,
) -> LabelledDataset:
    """Unlabelled set ``mean + scale * (x - mean) + shift`` from fresh or resampled base draws.

    Fresh draws come from the generator truth when the base carries one,
    otherwise rows of ``base`` are bootstrapped.
    """
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    offset = np.asarray(shift, dtype=float)
    if offset.ndim == 0:
        offset = np.full(base.d, float(offset))
    if offset.shape != (base.d,):
        raise DimensionMismatchError("shift", base.d, offset.shape)
    count = base.n if n is None else n
    if count < 1:
        raise DomainError(f"OOD set size must be positive, got {count}")
    rng = make_rng(seed)
    sampler = getattr(base.truth, "sample", None)
    if sampler is not None:
        draws, _ = sampler(count, rng)
    else:
        draws = base.features[rng.integers(0, base.n, size=count)]
    center = base.features.mean(axis=0)
    features = center + scale * (draws - center) + offset
    return LabelledDataset(features=features, labels=None, n_classes=base.n_classes)
