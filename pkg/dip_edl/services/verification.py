"""Numerical certificates for the Dirichlet mathematics and the EDL / DIP theory.

Each check returns a ``CheckResult`` with the measured quantity and the bound
it was held to. ``run_verification`` runs every check under one seed and never
raises: an exception inside a check is reported as a failure.
"""

import logging
import math
from collections.abc import Callable
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import special
from scipy.stats import norm

from dip_edl.backbone import HeadKind, finite_difference_check, init_mlp, layer_specs, mlp_gradient
from dip_edl.conjugate import (
    DiscreteDataset,
    cicd_posterior_counts,
    cicd_predictive,
    icd_posterior,
    icd_predictive,
    tempered_posterior_joint,
)
from dip_edl.density import gmm_fit_em
from dip_edl.dip_head import DIPConfig, dip_predict
from dip_edl.dirichlet import (
    digamma,
    dirichlet_expected_log_prob,
    dirichlet_kl,
    dirichlet_mean,
    dirichlet_sample,
    dirichlet_variance,
    log_gamma,
    log_multivariate_beta,
    vacuity,
)
from dip_edl.evaluation import BrierTarget, ScoredSamples, accuracy, aupr, auroc, brier_score
from dip_edl.losses import EDLLossConfig, LossKind, tempered_offset
from dip_edl.models import ConcentrationVector
from dip_edl.objective import (
    edl_loss,
    empirical_risk,
    empirical_risk_from_concentration,
    fit_pointwise_concentration,
    tempered_kl_objective,
)
from dip_edl.seeding import derive_seed, make_rng
from dip_edl.services.reports import write_rows
from dip_edl.synthetic import BlobTruth

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
MC_SAMPLES = 1_000_000
_MC_CHUNK = 250_000
_KL_PAIRS = 20
# Three-sigma two-sided level, Bonferroni-corrected over the Monte Carlo pairs.
_MC_Z = float(norm.isf(0.0027 / 2 / _KL_PAIRS))


def _mc_detail(what: str, worst: float) -> str:
    plain = "met" if worst <= 3.0 else "exceeded"
    return f"{what}; 3 standard errors Bonferroni-corrected over {_KL_PAIRS} pairs is z={_MC_Z:.3f}, plain 3-sigma {plain}"


class CheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def _result(name: str, value: float, threshold: float, detail: str = "") -> CheckResult:
    passed = bool(value <= threshold)
    return CheckResult(name=name, passed=passed, value=float(value), threshold=float(threshold), detail=detail)


def _dirichlet_log_pdf(samples: np.ndarray, beta: np.ndarray) -> np.ndarray:
    logs = np.log(np.maximum(samples, np.finfo(float).tiny))
    return logs @ (beta - 1.0) - log_multivariate_beta(beta)


def _mc_moments(values: Callable[[np.ndarray], np.ndarray], beta: np.ndarray, seed: int) -> tuple[float, float]:
    """Mean and standard error of ``values(p)`` for ``p ~ Dir(beta)``, sampled in chunks."""
    total, total_sq = 0.0, 0.0
    for chunk in range(MC_SAMPLES // _MC_CHUNK):
        v = values(dirichlet_sample(beta, _MC_CHUNK, derive_seed(seed, chunk)))
        total += float(v.sum())
        total_sq += float(np.dot(v, v))
    mean = total / MC_SAMPLES
    var = (total_sq - MC_SAMPLES * mean * mean) / (MC_SAMPLES - 1)
    return mean, math.sqrt(max(var, 0.0) / MC_SAMPLES)


def check_special_functions(seed: int) -> CheckResult:
    grid = np.logspace(-3, 6, 400)
    lg_err = np.abs(log_gamma(grid) - special.gammaln(grid)) / np.maximum(np.abs(special.gammaln(grid)), 1.0)
    dg_err = np.abs(digamma(grid) - special.digamma(grid)) / np.maximum(np.abs(special.digamma(grid)), 1.0)
    points = np.array([0.1, 1.0, 10.0, 1000.0])
    recurrence = np.abs(digamma(points + 1.0) - digamma(points) - 1.0 / points)
    anchors = max(abs(digamma(1.0) + EULER_GAMMA), abs(log_gamma(1.0)), abs(digamma(2.0) - digamma(1.0) - 1.0))
    worst = float(max(lg_err.max(), dg_err.max(), recurrence.max(), anchors))
    return _result("special_functions", worst, 1e-10, "max relative error over [1e-3, 1e6] and recurrence")


def check_log_beta(seed: int) -> CheckResult:
    cases = [([1.0, 1.0], 0.0), ([2.0, 2.0], math.log(1.0 / 6.0)), ([1.0, 1.0, 1.0], -math.log(2.0))]
    worst = max(abs(log_multivariate_beta(np.array(b)) - expected) for b, expected in cases)
    return _result("log_multivariate_beta", worst, 1e-12, "hand-computed Beta values")


def check_kl_properties(seed: int) -> CheckResult:
    rng = make_rng(seed, 10)
    worst = 0.0
    for k in (2, 5, 10):
        a = rng.uniform(0.1, 10.0, size=(500, k))
        b = rng.uniform(0.1, 10.0, size=(500, k))
        worst = max(worst, float(-np.min(dirichlet_kl(a, b))), float(np.max(np.abs(dirichlet_kl(a, a)))))
        close = rng.uniform(1.0, 1e4, size=(500, k))
        worst = max(worst, float(-np.min(dirichlet_kl(close, close * (1.0 + rng.normal(0.0, 1e-7, size=close.shape))))))
        jensen = dirichlet_expected_log_prob(a, 0) - np.log(dirichlet_mean(a)[:, 0])
        worst = max(worst, float(np.max(jensen)))
    return _result("kl_nonnegative_and_jensen", worst, 1e-12, "min KL, KL(a||a) and Jensen gap violations")


def check_kl_monte_carlo(seed: int) -> CheckResult:
    rng = make_rng(seed, 11)
    worst = 0.0
    for pair in range(_KL_PAIRS):
        k = (2, 5, 10)[pair % 3]
        source = rng.uniform(0.5, 5.0, size=k)
        target = rng.uniform(0.5, 5.0, size=k)
        estimate, se = _mc_moments(
            lambda p: _dirichlet_log_pdf(p, source) - _dirichlet_log_pdf(p, target),
            source,
            derive_seed(seed, 1000 + pair),
        )
        worst = max(worst, abs(dirichlet_kl(source, target) - estimate) / se)
    return _result("kl_monte_carlo", worst, _MC_Z, _mc_detail("max |closed - MC| in standard errors", worst))


def check_moments_monte_carlo(seed: int) -> CheckResult:
    beta = np.array([5.0, 1.0])
    mean, mean_se = _mc_moments(lambda p: p[:, 0], beta, derive_seed(seed, 2000))
    m = dirichlet_mean(beta)[0]
    z_mean = abs(mean - m) / mean_se
    second, second_se = _mc_moments(lambda p: (p[:, 0] - m) ** 2, beta, derive_seed(seed, 2001))
    z_var = abs(second - dirichlet_variance(beta, 0)) / second_se
    return _result("moments_monte_carlo", max(z_mean, z_var), _MC_Z, _mc_detail("mean and variance of p_0 for beta=[5,1]", max(z_mean, z_var)))


def check_conjugate_oracles(seed: int) -> CheckResult:
    alpha = np.array([1.0, 2.0, 3.0])
    errors = [
        np.abs(icd_posterior(alpha, 1, 0.5) - [1.0, 2.5, 3.0]).max(),
        np.abs(icd_predictive(alpha) - alpha / 6.0).max(),
    ]
    data = DiscreteDataset(covariates=["a", "a", "b"], labels=[0, 1, 1])
    counts = cicd_posterior_counts(data, 2)
    prior = np.ones(2)
    errors.append(np.abs(cicd_predictive(prior, counts, "a") - [0.5, 0.5]).max())
    errors.append(np.abs(cicd_predictive(prior, counts, "b") - [1.0 / 3.0, 2.0 / 3.0]).max())
    errors.append(np.abs(cicd_predictive(prior, counts, "unseen") - [0.5, 0.5]).max())
    joint = tempered_posterior_joint(prior, [0, 1, 1], nu=2.0)
    errors.append(np.abs(joint - [[3.0, 1.0], [1.0, 3.0], [1.0, 3.0]]).max())
    return _result("conjugate_oracles", float(max(errors)), 1e-12, "closed-form posteriors and predictives")


def _random_problem(rng: np.random.Generator) -> tuple:
    k = int(rng.integers(2, 5))
    d = int(rng.integers(1, 4))
    features = rng.normal(size=(int(rng.integers(3, 9)), d))
    labels = rng.integers(0, k, size=features.shape[0])
    alpha = ConcentrationVector.of(rng.uniform(0.5, 2.0, size=k))
    return k, d, features, labels, alpha


def check_tempered_equivalence(seed: int) -> list[CheckResult]:
    """Tempered KL minus nu times the EDL loss is the parameter-free offset; gradients agree."""
    rng = make_rng(seed, 20)
    spread, offset_err, grad_err = 0.0, 0.0, 0.0
    for trial in range(20):
        nu = (0.2, 1.0, 5.0)[trial % 3]
        k, d, x, y, alpha = _random_problem(rng)
        config = EDLLossConfig(alpha=alpha, nu=nu)
        offset = tempered_offset(alpha.array, y, nu)
        diffs = []
        for setting in range(3):
            params = init_mlp(layer_specs(d, k, (5,)), HeadKind.EVIDENCE, derive_seed(seed, 100 * trial + setting))
            diffs.append(tempered_kl_objective(params, x, y, alpha, nu) - nu * edl_loss(params, x, y, config, 1.0))
            tempered = mlp_gradient(params, x, y, LossKind.TEMPERED_KL, config).arrays()
            scaled = mlp_gradient(params, x, y, LossKind.EDL, config, 1.0).scaled(nu).arrays()
            scale = max(float(np.abs(g).max()) for g in tempered)
            for a, b in zip(tempered, scaled):
                denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6 * scale)
                grad_err = max(grad_err, float(np.max(np.abs(a - b) / denom)))
        spread = max(spread, max(diffs) - min(diffs))
        offset_err = max(offset_err, max(abs(v - offset) for v in diffs))
    return [
        _result("tempered_kl_constant_offset", spread, 1e-8, "spread of tempered - nu * EDL over parameter settings"),
        _result("tempered_kl_offset_value", offset_err, 1e-8, "deviation from sum of log-Beta differences"),
        _result("tempered_kl_gradient", grad_err, 1e-6, "elementwise relative gradient difference"),
    ]


def check_empirical_risk(seed: int) -> CheckResult:
    rng = make_rng(seed, 30)
    k, d, x, y, alpha = _random_problem(rng)
    params = init_mlp(layer_specs(d, k, (5,)), HeadKind.EVIDENCE, derive_seed(seed, 30))
    err = abs(empirical_risk(params, x, y, alpha, 2.0) - tempered_kl_objective(params, x, y, alpha, 2.0) / y.size)
    beta = alpha.array + rng.uniform(0.0, 3.0, size=k)
    single = empirical_risk_from_concentration(beta, y[:1], alpha, 2.0)
    repeated = empirical_risk_from_concentration(beta, np.repeat(y[:1], 7), alpha, 2.0)
    err = max(err, abs(single - repeated))
    return _result("empirical_risk", err, 1e-12, "risk is the mean tempered KL; duplicates do not change it")


def check_oracle_recovery(seed: int) -> list[CheckResult]:
    """Per-point risk minimization recovers alpha + nu * empirical frequencies."""
    rng = make_rng(seed, 40)
    p_true = np.array([0.5, 0.3, 0.2])
    alpha = np.ones(3)
    nu = 1.0
    labels = rng.choice(3, size=100_000, p=p_true)
    freq = np.bincount(labels, minlength=3) / labels.size
    beta = fit_pointwise_concentration(labels, alpha, nu)
    vac_err = abs(vacuity(beta) - 3.0 / (alpha.sum() + nu))
    interpolated = alpha + nu * np.eye(3)[labels[:50]]
    interp_vac = float(np.max(np.abs(vacuity(interpolated) - 3.0 / (alpha.sum() + nu))))
    interp_risk = abs(empirical_risk_from_concentration(interpolated, labels[:50], alpha, nu))
    return [
        _result("oracle_concentration", float(np.max(np.abs(beta - (alpha + nu * freq)))), 1e-6, "L-inf to alpha + nu * p_hat"),
        _result("empirical_frequencies", float(np.max(np.abs(freq - p_true))), 0.01, "L-inf of p_hat - p_true"),
        _result("optimal_vacuity", vac_err, 1e-9, "vacuity vs K / (alpha_0 + nu)"),
        _result("interpolation_vacuity", max(interp_vac, interp_risk), 1e-12, "perfect interpolation: constant vacuity, zero risk"),
    ]


def _overlapping_truth() -> BlobTruth:
    return BlobTruth(centers=np.array([[-1.0, 0.0], [1.0, 0.0]]), sigma=1.0, priors=np.array([0.5, 0.5]))


def check_consistency(seed: int) -> list[CheckResult]:
    """True density and conditional plugged in: error shrinks and variance falls like 1/n."""
    truth = _overlapping_truth()
    alpha = ConcentrationVector.symmetric(2)
    queries, _ = truth.sample(100, make_rng(seed, 50))
    errors = []
    for n in (100, 1_000, 10_000):
        post = dip_predict(DIPConfig(alpha=alpha, n_train=n), np.exp(truth.log_density(queries)), truth.conditional(queries))
        errors.append(float(np.mean(np.abs(post.predictive - truth.conditional(queries)).sum(axis=1))))
    monotone = all(later < earlier for earlier, later in zip(errors, errors[1:]))

    boundary = np.column_stack([np.zeros(5), np.linspace(-1.0, 1.0, 5)])
    density = np.exp(truth.log_density(boundary))
    conditional = truth.conditional(boundary)
    variances = {}
    for n in (1_000, 10_000):
        beta = dip_predict(DIPConfig(alpha=alpha, n_train=n), density, conditional).concentration
        variances[n] = np.column_stack([dirichlet_variance(beta, k) for k in range(2)])
    ratios = variances[1_000] / variances[10_000]
    in_band = float(np.max(np.abs(ratios - 10.0)))
    return [
        CheckResult(
            name="consistency_l1_error",
            passed=monotone,
            value=errors[-1],
            threshold=errors[0],
            detail="mean L1 error at n=1e2,1e3,1e4: " + ", ".join(f"{e:.6g}" for e in errors),
        ),
        _result("consistency_variance_ratio", in_band, 2.0, f"variance ratio range [{ratios.min():.4f}, {ratios.max():.4f}]"),
    ]


def check_dip_properties(seed: int) -> CheckResult:
    alpha = ConcentrationVector.of([1.0, 2.0, 3.0])
    probs = np.array([0.6, 0.3, 0.1])
    config = DIPConfig(alpha=alpha, n_train=500)
    errors = [float(np.abs(dip_predict(config, 0.0, probs).predictive - alpha.array / alpha.total).max())]
    neutral = DIPConfig(alpha=alpha, n_train=1)
    errors.append(float(np.abs(dip_predict(neutral, 1.0, probs).concentration - (alpha.array + probs)).max()))
    vac = dip_predict(config, np.linspace(0.0, 5.0, 50), probs).vacuity
    errors.append(0.0 if np.all(np.diff(vac) < 0) else 1.0)
    return _result("dip_properties", max(errors), 1e-12, "prior reversion, toggle neutrality, vacuity decreasing in density")


def check_gradients(seed: int) -> CheckResult:
    rng = make_rng(seed, 60)
    worst = 0.0
    for trial in range(10):
        k, d, x, y, alpha = _random_problem(rng)
        specs = layer_specs(d, k, (6,))
        evidence = init_mlp(specs, HeadKind.EVIDENCE, derive_seed(seed, 600 + trial))
        config = EDLLossConfig(alpha=alpha, lam=float(rng.uniform(0.2, 2.0)))
        worst = max(worst, finite_difference_check(evidence, x, y, LossKind.EDL, edl_config=config, anneal_factor=0.7))
        probability = init_mlp(specs, HeadKind.PROBABILITY, derive_seed(seed, 700 + trial))
        worst = max(worst, finite_difference_check(probability, x, y, LossKind.CROSS_ENTROPY))
    return _result("finite_difference_gradients", worst, 1e-4, "EDL and cross-entropy, 10 random networks")


def check_metrics(seed: int) -> CheckResult:
    rng = make_rng(seed, 70)
    errors = [abs(auroc([0.1, 0.2], [0.15, 0.3]) - 0.75), abs(aupr(np.linspace(0, 0.8, 9), [0.9]) - 1.0)]
    id_scores, ood_scores = rng.uniform(size=200), rng.uniform(0.3, 1.3, size=150)
    base = auroc(id_scores, ood_scores)
    for t in range(10):
        a, b = rng.uniform(0.5, 3.0, size=2)
        transform = (lambda s: a * s**3 + b * s) if t % 2 else (lambda s: np.exp(a * s) + b)
        errors.append(abs(auroc(transform(id_scores), transform(ood_scores)) - base))
    errors.append(abs(base + auroc(ood_scores, id_scores) - 1.0))
    return _result("metric_oracles", float(max(errors)), 1e-12, "hand examples, monotone invariance, antisymmetry")


def check_em_monotone(seed: int) -> CheckResult:
    rng = make_rng(seed, 80)
    worst = 0.0
    for trial in range(10):
        centers = rng.uniform(-4.0, 4.0, size=(3, 2))
        data = centers[rng.integers(0, 3, size=300)] + rng.normal(size=(300, 2))
        model = gmm_fit_em(data, 3, seed=derive_seed(seed, 800 + trial), tol=1e-10, max_iter=100)
        worst = max(worst, float(-np.min(np.diff(model.log_likelihood_trace))))
    return _result("em_monotone", max(worst, 0.0), 1e-10, "largest decrease of the EM mean log-likelihood")


def check_forced_ablation_rows(seed: int) -> CheckResult:
    """With the classifier switched off every class gets equal evidence."""
    rng = make_rng(seed, 90)
    k = 10
    labels = rng.permutation(np.repeat(np.arange(k), 100))
    config = DIPConfig(alpha=ConcentrationVector.symmetric(k), n_train=2000, use_nn=False)
    probs = rng.dirichlet(np.ones(k), size=labels.size)
    id_post = dip_predict(config, rng.uniform(0.1, 3.0, size=labels.size), probs)
    ood_post = dip_predict(config, rng.uniform(0.0, 1e-6, size=500), rng.dirichlet(np.ones(k), size=500))
    id_batch = ScoredSamples(predictive=id_post.predictive, uncertainty=id_post.vacuity, true_labels=labels)
    ood_batch = ScoredSamples(predictive=ood_post.predictive, uncertainty=ood_post.vacuity)
    errors = [
        abs(brier_score(id_batch, BrierTarget.ONE_HOT) - 0.9),
        abs(brier_score(ood_batch, BrierTarget.UNIFORM)),
        abs(accuracy(id_batch) - np.mean(labels == 0)),
    ]
    return _result("forced_ablation_rows", float(max(errors)), 1e-12, "ID Brier 0.9, OOD Brier 0, chance accuracy")


CHECKS: tuple[Callable[[int], CheckResult | list[CheckResult]], ...] = (
    check_special_functions,
    check_log_beta,
    check_kl_properties,
    check_kl_monte_carlo,
    check_moments_monte_carlo,
    check_conjugate_oracles,
    check_tempered_equivalence,
    check_empirical_risk,
    check_oracle_recovery,
    check_consistency,
    check_dip_properties,
    check_gradients,
    check_metrics,
    check_em_monotone,
    check_forced_ablation_rows,
)


def run_verification(seed: int = 0) -> list[CheckResult]:
    results: list[CheckResult] = []
    for check in CHECKS:
        name = check.__name__.removeprefix("check_")
        try:
            outcome = check(seed)
        except Exception as exc:
            logger.warning("Check raised", extra={"check": name, "error": str(exc)})
            outcome = CheckResult(name=name, passed=False, value=math.nan, threshold=math.nan, detail=repr(exc))
        for result in outcome if isinstance(outcome, list) else [outcome]:
            logger.info("Check finished", extra={"check": result.name, "passed": result.passed, "value": result.value})
            results.append(result)
    return results


def write_verification(path: Path | str, results: list[CheckResult]) -> Path:
    fields = tuple(CheckResult.model_fields)
    return write_rows(path, fields, ([getattr(r, f) for f in fields] for r in results))
