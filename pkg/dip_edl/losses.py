"""Per-sample losses on network outputs, with exact output-space gradients.

These are the leaves of reverse-mode differentiation: ``backbone`` pushes the
returned output gradients back through the layers.
"""

from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dip_edl.dirichlet import as_concentration, dirichlet_kl, digamma, log_multivariate_beta, trigamma
from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.models import ConcentrationVector

_CONTRACT_TOL = 1e-12


class LossKind(Enum):
    EDL = "edl"
    TEMPERED_KL = "tempered_kl"
    CROSS_ENTROPY = "cross_entropy"
    SQUARED_ERROR = "squared_error"


class EDLLossConfig(BaseModel):
    """Prior, regularization weight and temperature of the EDL objective.

    ``lam`` and ``nu`` are tied by ``lam * nu == 1``; supplying one derives
    the other and supplying neither gives ``lam = nu = 1``.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    alpha: ConcentrationVector
    lam: float | None = Field(default=None, alias="lambda", ge=0.0)
    nu: float | None = Field(default=None, gt=0.0)
    anneal_epochs: int = Field(default=0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _tie_lambda_nu(cls, data: object) -> object:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        lam = data.get("lam", data.get("lambda"))
        nu = data.get("nu")
        data.pop("lambda", None)
        if lam is not None and nu is not None:
            if abs(float(lam) * float(nu) - 1.0) > _CONTRACT_TOL:
                raise ValueError(f"lambda * nu must equal 1, got lambda={lam}, nu={nu}")
        elif lam is not None:
            if float(lam) <= 0:
                raise ValueError("lambda must be positive to derive nu")
            nu = 1.0 / float(lam)
        elif nu is not None:
            lam = 1.0 / float(nu)
        else:
            lam, nu = 1.0, 1.0
        data["lam"], data["nu"] = float(lam), float(nu)
        return data

    @property
    def n_classes(self) -> int:
        return self.alpha.k


def _check_outputs(outputs: np.ndarray, labels: np.ndarray, n_classes: int | None = None) -> None:
    if outputs.ndim != 2:
        raise DimensionMismatchError("network outputs", "(n, K)", outputs.shape)
    if labels.shape != (outputs.shape[0],):
        raise DimensionMismatchError("labels", (outputs.shape[0],), labels.shape)
    if n_classes is not None and outputs.shape[1] != n_classes:
        raise DimensionMismatchError("classes", n_classes, outputs.shape[1])
    if labels.size and (labels.min() < 0 or labels.max() >= outputs.shape[1]):
        raise DomainError(f"labels must lie in 0..{outputs.shape[1] - 1}")


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def edl_data_values(beta: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Expected negative log-likelihood ``psi(beta_0) - psi(beta_y)`` per row."""
    picked = np.take_along_axis(beta, labels[:, None], axis=1)[:, 0]
    return digamma(beta.sum(axis=1)) - digamma(picked)


def _kl_gradient(beta: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d KL(Dir(beta) || Dir(target)) / d beta."""
    excess0 = (beta - target).sum(axis=1, keepdims=True)
    return (beta - target) * trigamma(beta) - excess0 * trigamma(beta.sum(axis=1, keepdims=True))


def edl_output_loss(
    evidence: np.ndarray,
    labels: np.ndarray,
    config: EDLLossConfig,
    anneal_factor: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``data + anneal * lam * KL(Dir(alpha + e) || Dir(alpha))`` and its evidence gradient."""
    if not 0.0 <= anneal_factor <= 1.0:
        raise DomainError(f"anneal factor must lie in [0, 1], got {anneal_factor}")
    _check_outputs(evidence, labels, config.n_classes)
    alpha = config.alpha.array
    beta = as_concentration(alpha + evidence)
    weight = anneal_factor * config.lam

    grad = np.broadcast_to(trigamma(beta.sum(axis=1, keepdims=True)), beta.shape).copy()
    rows = np.arange(beta.shape[0])
    grad[rows, labels] -= trigamma(beta[rows, labels])
    loss = edl_data_values(beta, labels)
    if weight:
        prior = np.broadcast_to(alpha, beta.shape)
        loss = loss + weight * dirichlet_kl(beta, prior)
        grad += weight * _kl_gradient(beta, prior)
    return loss, grad


def tempered_targets(alpha: np.ndarray, labels: np.ndarray, nu: float) -> np.ndarray:
    """Rows ``alpha + nu * e_{y_i}``."""
    return alpha[None, :] + nu * one_hot(labels, alpha.shape[0])


def tempered_output_loss(
    evidence: np.ndarray,
    labels: np.ndarray,
    alpha: np.ndarray,
    nu: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``KL(Dir(alpha + e) || Dir(alpha + nu e_y))`` and its evidence gradient."""
    if not nu > 0:
        raise DomainError(f"temperature must be positive, got {nu}")
    _check_outputs(evidence, labels, alpha.shape[0])
    beta = as_concentration(alpha + evidence)
    target = tempered_targets(alpha, labels, nu)
    return dirichlet_kl(beta, target), _kl_gradient(beta, target)


def tempered_offset(alpha: np.ndarray, labels: np.ndarray, nu: float) -> float:
    """Parameter-independent gap between the tempered KL and nu times the EDL loss."""
    target = tempered_targets(alpha, labels, nu)
    return float(np.sum(log_multivariate_beta(target) - log_multivariate_beta(alpha)))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_output_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample softmax cross-entropy and its gradient with respect to the logits."""
    _check_outputs(logits, labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    loss = log_norm - shifted[rows, labels]
    grad = softmax(logits) - one_hot(labels, logits.shape[1])
    return loss, grad


def squared_error_output_loss(outputs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``0.5 * ||z - e_y||^2`` on raw outputs."""
    _check_outputs(outputs, labels)
    diff = outputs - one_hot(labels, outputs.shape[1])
    return 0.5 * np.sum(diff * diff, axis=1), diff
