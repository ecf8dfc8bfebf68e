import numpy as np
import pytest
from scipy import special

from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.losses import (
    EDLLossConfig,
    cross_entropy_output_loss,
    edl_output_loss,
    one_hot,
    softmax,
    squared_error_output_loss,
    tempered_offset,
    tempered_output_loss,
)
from dip_edl.models import ConcentrationVector


def _numeric_gradient(fn, x, step=1e-6):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (fn(up).sum() - fn(down).sum()) / (2 * step)
    return grad


@pytest.fixture()
def batch():
    rng = np.random.default_rng(0)
    evidence = rng.uniform(0.1, 5.0, size=(6, 3))
    labels = np.array([0, 1, 2, 2, 1, 0])
    return evidence, labels


class TestEDLLossConfig:
    def test_defaults(self):
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(3))
        assert cfg.lam == 1.0 and cfg.nu == 1.0 and cfg.n_classes == 3

    def test_lambda_alias_derives_nu(self):
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(2), **{"lambda": 0.25})
        assert cfg.nu == pytest.approx(4.0)

    def test_nu_derives_lambda(self):
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(2), nu=0.5)
        assert cfg.lam == pytest.approx(2.0)

    def test_inconsistent_pair_rejected(self):
        with pytest.raises(ValueError, match="lambda \\* nu"):
            EDLLossConfig(alpha=ConcentrationVector.symmetric(2), lam=2.0, nu=2.0)


class TestEDLOutputLoss:
    def test_value(self, batch):
        evidence, labels = batch
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(3), lam=0.5)
        loss, _ = edl_output_loss(evidence, labels, cfg, anneal_factor=0.0)
        beta = evidence + 1.0
        expected = special.digamma(beta.sum(axis=1)) - special.digamma(beta[np.arange(6), labels])
        np.testing.assert_allclose(loss, expected, atol=1e-12)

    @pytest.mark.parametrize("anneal", [0.0, 0.3, 1.0])
    def test_gradient(self, batch, anneal):
        evidence, labels = batch
        cfg = EDLLossConfig(alpha=ConcentrationVector.of([0.5, 1.0, 2.0]), lam=0.7)
        _, grad = edl_output_loss(evidence, labels, cfg, anneal)
        numeric = _numeric_gradient(lambda e: edl_output_loss(e, labels, cfg, anneal)[0], evidence)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)

    def test_bad_anneal(self, batch):
        evidence, labels = batch
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(3))
        with pytest.raises(DomainError):
            edl_output_loss(evidence, labels, cfg, anneal_factor=1.5)

    def test_class_mismatch(self, batch):
        evidence, labels = batch
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(4))
        with pytest.raises(DimensionMismatchError):
            edl_output_loss(evidence, labels, cfg)

    def test_label_out_of_range(self, batch):
        evidence, _ = batch
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(3))
        with pytest.raises(DomainError):
            edl_output_loss(evidence, np.array([0, 1, 2, 3, 0, 0]), cfg)


class TestTemperedLoss:
    def test_gradient(self, batch):
        evidence, labels = batch
        alpha = np.array([1.0, 2.0, 0.5])
        _, grad = tempered_output_loss(evidence, labels, alpha, 0.5)
        numeric = _numeric_gradient(lambda e: tempered_output_loss(e, labels, alpha, 0.5)[0], evidence)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("nu", [0.1, 1.0, 3.0])
    def test_equals_scaled_edl_plus_offset(self, batch, nu):
        evidence, labels = batch
        alpha = np.array([1.0, 2.0, 0.5])
        cfg = EDLLossConfig(alpha=ConcentrationVector.of(alpha), nu=nu)
        tempered, _ = tempered_output_loss(evidence, labels, alpha, nu)
        edl, _ = edl_output_loss(evidence, labels, cfg, 1.0)
        assert tempered.sum() == pytest.approx(nu * edl.sum() + tempered_offset(alpha, labels, nu), abs=1e-9)

    def test_zero_at_target(self):
        alpha = np.ones(3)
        labels = np.array([1])
        loss, grad = tempered_output_loss(np.array([[0.0, 2.0, 0.0]]), labels, alpha, 2.0)
        assert abs(loss[0]) < 1e-12
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_rejects_nonpositive_nu(self, batch):
        evidence, labels = batch
        with pytest.raises(DomainError):
            tempered_output_loss(evidence, labels, np.ones(3), 0.0)


class TestClassicLosses:
    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot(np.array([2, 0]), 3), [[0, 0, 1], [1, 0, 0]])

    def test_softmax_stable(self):
        p = softmax(np.array([[1000.0, 1000.0], [0.0, -1000.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5], [1.0, 0.0]])

    def test_cross_entropy(self, batch):
        logits, labels = batch
        loss, grad = cross_entropy_output_loss(logits, labels)
        expected = special.logsumexp(logits, axis=1) - logits[np.arange(6), labels]
        np.testing.assert_allclose(loss, expected, atol=1e-12)
        numeric = _numeric_gradient(lambda z: cross_entropy_output_loss(z, labels)[0], logits)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-7)

    def test_squared_error(self):
        loss, grad = squared_error_output_loss(np.array([[1.0, 1.0]]), np.array([0]))
        assert loss[0] == pytest.approx(0.5)
        np.testing.assert_allclose(grad, [[0.0, 1.0]])
