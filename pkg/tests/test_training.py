import numpy as np
import pytest

from dip_edl.backbone import HeadKind, init_mlp, layer_specs, mlp_forward
from dip_edl.errors import DimensionMismatchError, TrainingDivergedError
from dip_edl.losses import EDLLossConfig, LossKind
from dip_edl.models import ConcentrationVector
from dip_edl.synthetic import circle_centers, make_blobs
from dip_edl import training
from dip_edl.training import LRSchedule, TrainingSettings, learning_rate_at, train_classifier


@pytest.fixture()
def blobs():
    return make_blobs(2, 40, circle_centers(2, 4.0), 1.0, seed=0)


def _fit(blobs, kind, head, settings, edl_config=None):
    params = init_mlp(layer_specs(2, 2, (16,)), head, seed=1)
    return train_classifier(params, blobs.features, blobs.labels, kind, settings, edl_config)


class TestSchedule:
    def test_constant(self):
        settings = TrainingSettings(epochs=10, learning_rate=0.1)
        assert learning_rate_at(settings, 7) == 0.1

    def test_cosine(self):
        settings = TrainingSettings(epochs=10, learning_rate=0.1, lr_schedule=LRSchedule.COSINE)
        assert learning_rate_at(settings, 0) == pytest.approx(0.1)
        assert learning_rate_at(settings, 5) == pytest.approx(0.05)


class TestTrainClassifier:
    def test_cross_entropy_learns_blobs(self, blobs):
        settings = TrainingSettings(epochs=30, batch_size=16, learning_rate=0.01, seed=2)
        result = _fit(blobs, LossKind.CROSS_ENTROPY, HeadKind.PROBABILITY, settings)
        assert len(result.log) == 30
        assert result.log[-1].loss < result.log[0].loss
        accuracy = np.mean(np.argmax(mlp_forward(result.params, blobs.features), axis=1) == blobs.labels)
        assert accuracy > 0.9

    def test_edl_anneal_ramp_in_log(self, blobs):
        settings = TrainingSettings(epochs=6, batch_size=32, learning_rate=0.01, anneal_epochs=4)
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(2))
        result = _fit(blobs, LossKind.EDL, HeadKind.EVIDENCE, settings, cfg)
        assert [r.anneal_factor for r in result.log] == [0.0, 0.25, 0.5, 0.75, 1.0, 1.0]

    def test_edl_evidence_follows_labels(self, blobs):
        settings = TrainingSettings(epochs=40, batch_size=16, learning_rate=0.01, anneal_epochs=5)
        cfg = EDLLossConfig(alpha=ConcentrationVector.symmetric(2), lam=0.1)
        result = _fit(blobs, LossKind.EDL, HeadKind.EVIDENCE, settings, cfg)
        evidence = mlp_forward(result.params, blobs.features)
        assert np.mean(np.argmax(evidence, axis=1) == blobs.labels) > 0.9

    def test_reproducible(self, blobs):
        settings = TrainingSettings(epochs=3, batch_size=8, learning_rate=0.01, seed=5)
        a = _fit(blobs, LossKind.CROSS_ENTROPY, HeadKind.PROBABILITY, settings)
        b = _fit(blobs, LossKind.CROSS_ENTROPY, HeadKind.PROBABILITY, settings)
        for x, y in zip(a.params.arrays(), b.params.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_divergence_reports_epoch(self, blobs, monkeypatch):
        real = training.mlp_gradient
        calls = []

        def flaky(*args, **kwargs):
            grads = real(*args, **kwargs)
            calls.append(1)
            return grads.model_copy(update={"loss": float("nan")}) if len(calls) == 3 else grads

        monkeypatch.setattr("dip_edl.training.mlp_gradient", flaky)
        settings = TrainingSettings(epochs=5, batch_size=80, learning_rate=0.01)
        with pytest.raises(TrainingDivergedError) as excinfo:
            _fit(blobs, LossKind.CROSS_ENTROPY, HeadKind.PROBABILITY, settings)
        assert excinfo.value.epoch == 2

    def test_label_mismatch(self, blobs):
        with pytest.raises(DimensionMismatchError):
            _fit(
                blobs.model_copy(update={"labels": blobs.labels[:-1]}),
                LossKind.CROSS_ENTROPY,
                HeadKind.PROBABILITY,
                TrainingSettings(epochs=1),
            )
