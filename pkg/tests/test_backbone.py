import numpy as np
import pytest

from dip_edl.backbone import (
    AdamState,
    EvidenceActivation,
    HeadKind,
    MLPParameters,
    Nonlinearity,
    batch_loss,
    finite_difference_check,
    init_mlp,
    layer_specs,
    mlp_forward,
    mlp_gradient,
    mlp_logits,
    optimizer_step,
)
from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.losses import EDLLossConfig, LossKind
from dip_edl.models import ConcentrationVector


@pytest.fixture()
def data():
    rng = np.random.default_rng(1)
    return rng.normal(size=(8, 3)), np.array([0, 1, 2, 0, 1, 2, 0, 1])


@pytest.fixture()
def edl_config():
    return EDLLossConfig(alpha=ConcentrationVector.symmetric(3), lam=0.5)


def _net(head=HeadKind.EVIDENCE, activation=EvidenceActivation.SOFTPLUS, seed=0):
    return init_mlp(layer_specs(3, 3, (5,)), head, seed, activation)


class TestArchitecture:
    def test_layer_specs(self):
        specs = layer_specs(2, 4, (8, 6))
        assert [(s.input_dim, s.output_dim) for s in specs] == [(2, 8), (8, 6), (6, 4)]
        assert [s.nonlinearity for s in specs] == [Nonlinearity.RECTIFIER, Nonlinearity.RECTIFIER, Nonlinearity.IDENTITY]

    def test_init_deterministic(self):
        a, b = _net(seed=5), _net(seed=5)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_init_bounded_by_fan_in(self):
        net = _net()
        assert np.all(np.abs(net.weights[0]) <= 1 / np.sqrt(3))
        assert np.all(np.abs(net.weights[1]) <= 1 / np.sqrt(5))

    def test_shape_validation(self):
        net = _net()
        with pytest.raises(ValueError):
            MLPParameters(layers=net.layers, weights=net.weights[::-1], biases=net.biases, head_kind=HeadKind.EVIDENCE)

    def test_dims(self):
        net = _net()
        assert net.input_dim == 3 and net.output_dim == 3


class TestForward:
    def test_evidence_nonnegative(self, data):
        x, _ = data
        out = mlp_forward(_net(), x)
        assert out.shape == (8, 3) and np.all(out >= 0)

    def test_exp_head_is_exp_of_logits(self, data):
        x, _ = data
        net = _net(activation=EvidenceActivation.EXP)
        np.testing.assert_allclose(mlp_forward(net, x), np.exp(mlp_logits(net, x)))

    def test_probability_head_on_simplex(self, data):
        x, _ = data
        out = mlp_forward(_net(HeadKind.PROBABILITY), x)
        np.testing.assert_allclose(out.sum(axis=1), 1.0)

    def test_single_input(self, data):
        x, _ = data
        net = _net()
        np.testing.assert_allclose(mlp_forward(net, x[0]), mlp_forward(net, x)[0])

    def test_wrong_width(self):
        with pytest.raises(DimensionMismatchError):
            mlp_forward(_net(), np.zeros((2, 4)))

    def test_non_finite_input(self):
        with pytest.raises(DomainError):
            mlp_forward(_net(), np.array([[np.nan, 0.0, 0.0]]))


class TestGradients:
    @pytest.mark.parametrize("kind,head,activation", [
        (LossKind.EDL, HeadKind.EVIDENCE, EvidenceActivation.SOFTPLUS),
        (LossKind.EDL, HeadKind.EVIDENCE, EvidenceActivation.EXP),
        (LossKind.TEMPERED_KL, HeadKind.EVIDENCE, EvidenceActivation.SOFTPLUS),
        (LossKind.CROSS_ENTROPY, HeadKind.PROBABILITY, EvidenceActivation.SOFTPLUS),
        (LossKind.SQUARED_ERROR, HeadKind.EVIDENCE, EvidenceActivation.SOFTPLUS),
    ])
    def test_matches_finite_differences(self, data, edl_config, kind, head, activation):
        x, y = data
        net = _net(head, activation, seed=2)
        err = finite_difference_check(net, x, y, kind, edl_config=edl_config, anneal_factor=0.5)
        assert err < 1e-3

    def test_gradient_linear_in_anneal_weight(self, data, edl_config):
        x, y = data
        net = _net(seed=3)
        plain = mlp_gradient(net, x, y, "edl", edl_config, anneal_factor=0.0)
        full = mlp_gradient(net, x, y, "edl", edl_config, anneal_factor=1.0)
        mixed = mlp_gradient(net, x, y, "edl", edl_config, anneal_factor=0.3)
        for g, g0, g1 in zip(mixed.arrays(), plain.arrays(), full.arrays()):
            np.testing.assert_allclose(g, 0.7 * g0 + 0.3 * g1, rtol=0, atol=1e-10)

    def test_gradient_linear_across_batches(self, data, edl_config):
        x, y = data
        net = _net(seed=4)
        head = mlp_gradient(net, x[:3], y[:3], "edl", edl_config)
        tail = mlp_gradient(net, x[3:], y[3:], "edl", edl_config)
        whole = mlp_gradient(net, x, y, "edl", edl_config)
        for g, g1, g2 in zip(whole.arrays(), head.arrays(), tail.arrays()):
            np.testing.assert_allclose(g, (3 * g1 + 5 * g2) / 8, rtol=0, atol=1e-10)

    def test_duplicated_batch_same_gradient(self, data, edl_config):
        x, y = data
        net = _net(seed=5)
        once = mlp_gradient(net, x, y, "edl", edl_config)
        twice = mlp_gradient(net, np.vstack([x, x]), np.r_[y, y], "edl", edl_config)
        assert twice.loss == pytest.approx(once.loss, abs=1e-12)
        for a, b in zip(once.arrays(), twice.arrays()):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_error_floor_contract(self, data):
        x, y = data
        net = _net(HeadKind.PROBABILITY, seed=6)
        loose = finite_difference_check(net, x, y, "cross_entropy", floor=1.0)
        tight = finite_difference_check(net, x, y, "cross_entropy", floor=1e-6)
        assert loose <= tight
        # Once the floor exceeds every |gradient|, the result is the max absolute error over the floor.
        big = finite_difference_check(net, x, y, "cross_entropy", floor=1e8)
        bigger = finite_difference_check(net, x, y, "cross_entropy", floor=1e9)
        assert big * 1e8 == pytest.approx(bigger * 1e9, rel=1e-12)

    def test_loss_matches_batch_loss(self, data, edl_config):
        x, y = data
        net = _net()
        assert mlp_gradient(net, x, y, "edl", edl_config).loss == pytest.approx(batch_loss(net, x, y, "edl", edl_config))

    def test_cross_entropy_needs_probability_head(self, data):
        x, y = data
        with pytest.raises(DomainError):
            mlp_gradient(_net(), x, y, LossKind.CROSS_ENTROPY)

    def test_edl_needs_config(self, data):
        x, y = data
        with pytest.raises(DomainError):
            mlp_gradient(_net(), x, y, LossKind.EDL)

    def test_label_length_mismatch(self, data, edl_config):
        x, y = data
        with pytest.raises(DimensionMismatchError):
            mlp_gradient(_net(), x, y[:-1], LossKind.EDL, edl_config)

    def test_step_out_of_range(self, data, edl_config):
        x, y = data
        with pytest.raises(DomainError):
            finite_difference_check(_net(), x, y, LossKind.EDL, step=1e-1, edl_config=edl_config)


class TestOptimizer:
    def test_first_step_moves_by_lr(self, data, edl_config):
        x, y = data
        net = _net()
        grads = mlp_gradient(net, x, y, LossKind.EDL, edl_config)
        new, state = optimizer_step(net, grads, AdamState.fresh(net), lr=0.01)
        assert state.step == 1
        for before, after, g in zip(net.arrays(), new.arrays(), grads.arrays()):
            moved = np.abs(after - before)
            assert np.all(moved <= 0.01 + 1e-12)
            np.testing.assert_allclose(moved[np.abs(g) > 1e-4], 0.01, rtol=1e-3)

    def test_steps_reduce_loss(self, data, edl_config):
        x, y = data
        net = _net()
        state = AdamState()
        start = batch_loss(net, x, y, LossKind.EDL, edl_config)
        for _ in range(50):
            net, state = optimizer_step(net, mlp_gradient(net, x, y, LossKind.EDL, edl_config), state, lr=0.01)
        assert batch_loss(net, x, y, LossKind.EDL, edl_config) < start

    def test_rejects_bad_lr(self, data, edl_config):
        x, y = data
        net = _net()
        with pytest.raises(DomainError):
            optimizer_step(net, mlp_gradient(net, x, y, LossKind.EDL, edl_config), AdamState(), lr=0.0)

    def test_rejects_non_finite_gradient(self, data, edl_config):
        x, y = data
        net = _net()
        grads = mlp_gradient(net, x, y, LossKind.EDL, edl_config)
        grads.biases[0][0] = np.nan
        with pytest.raises(DomainError):
            optimizer_step(net, grads, AdamState(), lr=0.01)
