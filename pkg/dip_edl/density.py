"""Marginal density estimators and the log-likelihood z-score normalizer.

Three estimators are available: a Gaussian KDE with per-dimension bandwidth,
an EM-fitted Gaussian mixture, and the class-conditional Gaussian fit (one
component per class, weighted by class frequency) whose marginal serves as
the density. All log-densities are evaluated with log-sum-exp so they stay
finite far from the data.
"""

import logging
import math

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg
from scipy.special import logsumexp

from dip_edl.constants import (
    BANDWIDTH_FLOOR,
    COVARIANCE_RIDGE_SCALE,
    DEFAULT_DENSITY_CLAMP,
    DEGENERATE_COMPONENT_MASS,
    GDA_RIDGE_FLOOR,
)
from dip_edl.errors import DegenerateEstimatorError, DimensionMismatchError, DomainError
from dip_edl.seeding import make_rng

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_KDE_CHUNK = 512


def _as_data(data: ArrayLike) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DomainError(f"data must be a non-empty n x d matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("data must be finite")
    return arr


def _as_queries(x: ArrayLike, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    arr = arr.reshape(1, -1) if single else arr
    if arr.ndim != 2 or arr.shape[1] != d:
        raise DimensionMismatchError("density query", d, arr.shape[-1])
    return arr, single


class KDEModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    support_points: np.ndarray
    bandwidth: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "KDEModel":
        if self.support_points.ndim != 2 or self.support_points.shape[0] < 1:
            raise ValueError("KDE needs at least one support point")
        if self.bandwidth.shape != (self.support_points.shape[1],) or np.any(self.bandwidth <= 0):
            raise ValueError("bandwidth must be positive, one value per dimension")
        return self

    @property
    def d(self) -> int:
        return self.support_points.shape[1]

    def log_density(self, x: ArrayLike) -> np.ndarray | float:
        q, single = _as_queries(x, self.d)
        n = self.support_points.shape[0]
        const = -np.sum(np.log(self.bandwidth)) - 0.5 * self.d * _LOG_2PI - math.log(n)
        out = np.empty(q.shape[0])
        for start in range(0, q.shape[0], _KDE_CHUNK):
            block = q[start : start + _KDE_CHUNK]
            scaled = (block[:, None, :] - self.support_points[None, :, :]) / self.bandwidth
            out[start : start + _KDE_CHUNK] = logsumexp(-0.5 * np.sum(scaled * scaled, axis=2), axis=1)
        out += const
        return float(out[0]) if single else out


class GaussianMixtureModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood_trace: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "GaussianMixtureModel":
        m, d = self.means.shape
        if self.weights.shape != (m,) or self.covariances.shape != (m, d, d):
            raise ValueError("mixture parameter shapes are inconsistent")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        return self

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def component_log_densities(self, q: np.ndarray) -> np.ndarray:
        """``ln N(x; mu_m, Sigma_m)`` for every query row and component."""
        out = np.empty((q.shape[0], self.n_components))
        for m in range(self.n_components):
            chol = linalg.cholesky(self.covariances[m], lower=True)
            solved = linalg.solve_triangular(chol, (q - self.means[m]).T, lower=True)
            out[:, m] = (
                -0.5 * np.sum(solved * solved, axis=0)
                - np.sum(np.log(np.diag(chol)))
                - 0.5 * self.d * _LOG_2PI
            )
        return out

    def log_density(self, x: ArrayLike) -> np.ndarray | float:
        q, single = _as_queries(x, self.d)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        out = logsumexp(self.component_log_densities(q) + log_w, axis=1)
        return float(out[0]) if single else out


DensityModel = KDEModel | GaussianMixtureModel


class LogLikelihoodNormalizer(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean_loglik: float
    std_loglik: float = Field(gt=0.0)

    @field_validator("mean_loglik")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("mean log-likelihood must be finite")
        return v


def kde_build(data: ArrayLike, bandwidth_rule: str | float = "scott") -> KDEModel:
    """Gaussian KDE; ``"scott"`` sets ``h_j = n^(-1/(d+4)) * std_j``, a number fixes ``h``."""
    x = _as_data(data)
    n, d = x.shape
    if isinstance(bandwidth_rule, str) and bandwidth_rule.lower() == "scott":
        spread = x.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
        h = n ** (-1.0 / (d + 4)) * spread
        flat = h <= 0
        if flat.any():
            logger.warning(
                "Zero-variance dimension, using bandwidth floor",
                extra={"dimensions": np.flatnonzero(flat).tolist(), "floor": BANDWIDTH_FLOOR},
            )
            h = np.where(flat, BANDWIDTH_FLOOR, h)
    else:
        value = float(bandwidth_rule)
        if not value > 0:
            raise DomainError(f"bandwidth must be positive, got {bandwidth_rule}")
        h = np.full(d, value)
    return KDEModel(support_points=x.copy(), bandwidth=h)


def _regularize(cov: np.ndarray, floor: float | None = None) -> np.ndarray:
    """Raise the spectrum to the ridge floor when the covariance is near-singular."""
    d = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    ridge = floor if floor is not None else COVARIANCE_RIDGE_SCALE * max(np.trace(cov) / d, 1.0)
    smallest = np.linalg.eigvalsh(cov)[0]
    if smallest < ridge:
        logger.debug("Applying covariance ridge", extra={"smallest_eigenvalue": float(smallest), "ridge": ridge})
        cov = cov + (ridge - min(smallest, 0.0)) * np.eye(d)
    return cov


def _mle_covariance(x: np.ndarray, weights: np.ndarray, mean: np.ndarray) -> np.ndarray:
    centered = x - mean
    return (weights[:, None] * centered).T @ centered / weights.sum()


def gmm_fit_em(
    data: ArrayLike,
    n_components: int,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> GaussianMixtureModel:
    """Fit a full-covariance Gaussian mixture with EM.

    Stops when the mean log-likelihood improves by less than ``tol``. A
    component whose responsibility mass drops below 1e-8 is re-seeded at a
    random datum.
    """
    x = _as_data(data)
    n, d = x.shape
    if n_components < 1 or n < n_components:
        raise DomainError(f"need 1 <= n_components <= n, got {n_components} for n={n}")
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol}")
    rng = make_rng(seed)
    base_cov = _regularize(np.cov(x.T, bias=True).reshape(d, d))
    model = GaussianMixtureModel(
        weights=np.full(n_components, 1.0 / n_components),
        means=x[rng.choice(n, size=n_components, replace=False)].copy(),
        covariances=np.repeat(base_cov[None], n_components, axis=0),
    )
    log_joint = model.component_log_densities(x) + np.log(model.weights)
    trace = [float(np.mean(logsumexp(log_joint, axis=1)))]

    for iteration in range(max_iter):
        log_norm = logsumexp(log_joint, axis=1, keepdims=True)
        resp = np.exp(log_joint - log_norm)
        mass = resp.sum(axis=0)
        weights = np.empty(n_components)
        means = np.empty((n_components, d))
        covs = np.empty((n_components, d, d))
        for m in range(n_components):
            if mass[m] < DEGENERATE_COMPONENT_MASS:
                logger.warning("Re-seeding degenerate mixture component", extra={"component": m, "iteration": iteration})
                means[m] = x[rng.integers(n)]
                covs[m] = base_cov
                weights[m] = 1.0 / n_components
                continue
            means[m] = resp[:, m] @ x / mass[m]
            covs[m] = _regularize(_mle_covariance(x, resp[:, m], means[m]))
            weights[m] = mass[m] / n
        model = GaussianMixtureModel(weights=weights / weights.sum(), means=means, covariances=covs)
        log_joint = model.component_log_densities(x) + np.log(model.weights)
        trace.append(float(np.mean(logsumexp(log_joint, axis=1))))
        logger.debug("EM iteration", extra={"iteration": iteration, "mean_loglik": trace[-1]})
        if trace[-1] - trace[-2] < tol:
            break
    return model.model_copy(update={"log_likelihood_trace": trace})


def gda_fit(features: ArrayLike, labels: ArrayLike, n_classes: int) -> GaussianMixtureModel:
    """One Gaussian per class, weighted by class frequency; the mixture is the marginal density."""
    x = _as_data(features)
    y = np.asarray(labels).astype(np.int64)
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError("labels", (x.shape[0],), y.shape)
    n, d = x.shape
    weights, means, covs = [], [], []
    for k in range(n_classes):
        members = x[y == k]
        if members.shape[0] == 0:
            logger.warning("Class absent from training data, dropping its component", extra={"class": k})
            continue
        mean = members.mean(axis=0)
        cov = _mle_covariance(members, np.ones(members.shape[0]), mean)
        if members.shape[0] < d + 1:
            logger.warning(
                "Under-populated class, inflating covariance",
                extra={"class": k, "count": int(members.shape[0]), "ridge": GDA_RIDGE_FLOOR},
            )
            cov = _regularize(cov + GDA_RIDGE_FLOOR * np.eye(d), floor=GDA_RIDGE_FLOOR)
        else:
            cov = _regularize(cov)
        weights.append(members.shape[0] / n)
        means.append(mean)
        covs.append(cov)
    if not weights:
        raise DomainError("no class has any training sample")
    w = np.asarray(weights)
    return GaussianMixtureModel(weights=w / w.sum(), means=np.asarray(means), covariances=np.asarray(covs))


def log_density(model: DensityModel, x: ArrayLike) -> np.ndarray | float:
    return model.log_density(x)


def normalizer_fit(train_logliks: ArrayLike) -> LogLikelihoodNormalizer:
    """Mean and population standard deviation of the training log-densities."""
    values = np.asarray(train_logliks, dtype=float).ravel()
    if values.size < 2:
        raise DegenerateEstimatorError(f"need at least 2 log-likelihoods, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise DegenerateEstimatorError("training log-likelihoods must be finite")
    std = float(values.std())
    if std <= 0:
        raise DegenerateEstimatorError("training log-likelihoods have zero spread")
    return LogLikelihoodNormalizer(mean_loglik=float(values.mean()), std_loglik=std)


def density_scale(
    normalizer: LogLikelihoodNormalizer,
    log_density_value: ArrayLike,
    clamp: float = DEFAULT_DENSITY_CLAMP,
) -> np.ndarray | float:
    """``exp(clip(z, -clamp, clamp))`` with ``z`` the z-scored log-density."""
    if not clamp > 0:
        raise DomainError(f"clamp must be positive, got {clamp}")
    z = (np.asarray(log_density_value, dtype=float) - normalizer.mean_loglik) / normalizer.std_loglik
    out = np.exp(np.clip(z, -clamp, clamp))
    return float(out) if out.ndim == 0 else out


class FittedDensity(BaseModel):
    """A fitted marginal density, its log-likelihood normalizer and the training-set size."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    model: DensityModel
    normalizer: LogLikelihoodNormalizer
    n_train: int = Field(ge=1)

    def scale(self, x: ArrayLike, clamp: float = DEFAULT_DENSITY_CLAMP) -> np.ndarray | float:
        return density_scale(self.normalizer, self.model.log_density(x), clamp)


def fit_density(model: DensityModel, train_features: ArrayLike) -> FittedDensity:
    """Attach the normalizer fitted on the model's own training log-likelihoods."""
    x = _as_data(train_features)
    normalizer = normalizer_fit(model.log_density(x))
    logger.info(
        "Density normalizer fitted",
        extra={"mean_loglik": normalizer.mean_loglik, "std_loglik": normalizer.std_loglik},
    )
    return FittedDensity(model=model, normalizer=normalizer, n_train=x.shape[0])
