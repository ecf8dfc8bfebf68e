"""EDL training objective, its tempered-KL form, the empirical risk and KL annealing.

Every parameter-level objective has an ``*_from_evidence`` twin operating on
per-sample evidence directly, which is what the verification checks use
when no network is involved.
"""

import logging

import numpy as np
from numpy.typing import ArrayLike
from scipy import optimize

from dip_edl.backbone import HeadKind, MLPParameters, mlp_forward
from dip_edl.dirichlet import as_concentration, dirichlet_expected_log_prob, trigamma
from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.losses import (
    EDLLossConfig,
    edl_output_loss,
    one_hot,
    tempered_offset,
    tempered_output_loss,
)
from dip_edl.models import ConcentrationVector

logger = logging.getLogger(__name__)

__all__ = [
    "EDLLossConfig",
    "anneal_coefficient",
    "edl_data_term",
    "edl_loss",
    "edl_loss_from_evidence",
    "empirical_risk",
    "empirical_risk_from_concentration",
    "fit_pointwise_concentration",
    "oracle_concentration",
    "tempered_kl_from_evidence",
    "tempered_kl_objective",
    "tempered_offset",
]


def edl_data_term(beta: ConcentrationVector | ArrayLike, y: ArrayLike) -> np.ndarray | float:
    """``psi(beta_0) - psi(beta_y)``, the expected negative log-likelihood of label y."""
    return -dirichlet_expected_log_prob(beta, y)


def _evidence(params: MLPParameters, features: ArrayLike) -> np.ndarray:
    if params.head_kind is not HeadKind.EVIDENCE:
        raise DomainError("EDL objectives need the evidence head")
    out = mlp_forward(params, features)
    return out[None, :] if out.ndim == 1 else out


def _labels(labels: ArrayLike, n: int) -> np.ndarray:
    y = np.asarray(labels).astype(np.int64)
    if y.shape != (n,):
        raise DimensionMismatchError("labels", (n,), y.shape)
    return y


def edl_loss_from_evidence(
    evidence: ArrayLike,
    labels: ArrayLike,
    config: EDLLossConfig,
    anneal_factor: float = 1.0,
) -> float:
    """Summed loss ``sum_i data_i + anneal * lam * sum_i KL(Dir(alpha + e_i) || Dir(alpha))``."""
    e = np.atleast_2d(np.asarray(evidence, dtype=float))
    losses, _ = edl_output_loss(e, _labels(labels, e.shape[0]), config, anneal_factor)
    return float(np.sum(losses))


def edl_loss(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    config: EDLLossConfig,
    anneal_factor: float = 1.0,
) -> float:
    return edl_loss_from_evidence(_evidence(params, features), labels, config, anneal_factor)


def tempered_kl_from_evidence(evidence: ArrayLike, labels: ArrayLike, alpha: ConcentrationVector | ArrayLike, nu: float) -> float:
    """``sum_i KL(Dir(alpha + e_i) || Dir(alpha + nu e_{y_i}))``."""
    e = np.atleast_2d(np.asarray(evidence, dtype=float))
    losses, _ = tempered_output_loss(e, _labels(labels, e.shape[0]), as_concentration(alpha), nu)
    return float(np.sum(losses))


def tempered_kl_objective(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    alpha: ConcentrationVector | ArrayLike,
    nu: float,
) -> float:
    return tempered_kl_from_evidence(_evidence(params, features), labels, alpha, nu)


def empirical_risk_from_concentration(
    beta: ArrayLike,
    labels: ArrayLike,
    alpha: ConcentrationVector | ArrayLike,
    nu: float,
) -> float:
    """Mean per-sample tempered KL given the per-sample concentrations ``beta``."""
    b = np.atleast_2d(as_concentration(beta))
    y = np.asarray(labels).astype(np.int64)
    if y.size == 0:
        raise DomainError("empirical risk needs at least one sample")
    a = as_concentration(alpha)
    if b.shape[0] == 1 and y.size > 1:
        b = np.broadcast_to(b, (y.size, b.shape[1]))
    return tempered_kl_from_evidence(b - a, y, a, nu) / y.size


def empirical_risk(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    alpha: ConcentrationVector | ArrayLike,
    nu: float,
) -> float:
    n = np.asarray(labels).size
    if n == 0:
        raise DomainError("empirical risk needs at least one sample")
    return tempered_kl_objective(params, features, labels, alpha, nu) / n


def anneal_coefficient(epoch: int, anneal_epochs: int) -> float:
    """Linear KL ramp ``min(1, epoch / anneal_epochs)``; zero ramp length means always 1."""
    if epoch < 0:
        raise DomainError(f"epoch must be non-negative, got {epoch}")
    if anneal_epochs < 0:
        raise DomainError(f"anneal_epochs must be non-negative, got {anneal_epochs}")
    if anneal_epochs == 0:
        return 1.0
    return min(1.0, epoch / anneal_epochs)


def oracle_concentration(p_true: ArrayLike, alpha: ConcentrationVector | ArrayLike, nu: float) -> np.ndarray:
    """Optimal variational concentration ``alpha + nu * P*(.|x)``."""
    a = as_concentration(alpha)
    p = np.asarray(p_true, dtype=float)
    if p.shape[-1] != a.shape[-1]:
        raise DimensionMismatchError("class probabilities", a.shape[-1], p.shape[-1])
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise DomainError("p_true must lie on the simplex")
    return a + nu * p


def _risk_gradient(beta: np.ndarray, target_mean: np.ndarray) -> np.ndarray:
    """Gradient of the frequency-weighted tempered KL; ``target_mean`` is alpha + nu * p_hat."""
    excess0 = beta.sum() - target_mean.sum()
    return (beta - target_mean) * trigamma(beta) - excess0 * trigamma(beta.sum())


def fit_pointwise_concentration(
    labels: ArrayLike,
    alpha: ConcentrationVector | ArrayLike,
    nu: float,
    polish_steps: int = 4,
) -> np.ndarray:
    """Minimize the empirical risk over one free concentration shared by all labels.

    The risk only depends on the labels through their frequencies, so the
    stationarity condition is solved in log-space with MINPACK's hybrid
    method and then polished with Newton steps on a central-difference
    Jacobian.
    """
    a = as_concentration(alpha)
    y = np.asarray(labels).astype(np.int64)
    if y.size == 0:
        raise DomainError("need at least one label")
    freq = one_hot(y, a.shape[0]).mean(axis=0)
    target = a + nu * freq

    def stationarity(log_beta: np.ndarray) -> np.ndarray:
        return _risk_gradient(np.exp(log_beta), target)

    start = np.log(a + nu / a.shape[0])
    solution = optimize.root(stationarity, start, method="hybr", tol=1e-12)
    beta = np.exp(solution.x)
    if not solution.success:
        logger.debug("Root finder stopped early, Newton polish finishes", extra={"reason": solution.message})

    for _ in range(polish_steps):
        grad = _risk_gradient(beta, target)
        h = 1e-6 * beta
        jac = np.empty((beta.size, beta.size))
        for j in range(beta.size):
            up, down = beta.copy(), beta.copy()
            up[j] += h[j]
            down[j] -= h[j]
            jac[:, j] = (_risk_gradient(up, target) - _risk_gradient(down, target)) / (2.0 * h[j])
        beta = beta - np.linalg.solve(jac, grad)
    return beta
