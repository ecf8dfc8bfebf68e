import csv

import numpy as np
import pytest

from dip_edl.dip_head import DIPConfig, ScoreKind, dip_predict, posterior_from_evidence
from dip_edl.models import ConcentrationVector, MetricsReport
from dip_edl.services.reports import (
    METRIC_COLUMNS,
    write_ablation,
    write_metrics,
    write_rows,
    write_scores,
    write_training_log,
)
from dip_edl.training import EpochRecord


@pytest.fixture()
def report():
    return MetricsReport(
        accuracy=0.9, brier_id=0.1, brier_ood=0.05, auroc=0.99, aupr=0.98,
        auroc_max_prob=0.7, aupr_max_prob=0.6, n_id=100, n_ood=50,
    )


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_write_rows_formats_cells(tmp_path):
    path = write_rows(tmp_path / "t.csv", ("a", "b", "c", "d"), [[True, 1 / 3, None, "x"]])
    assert path.read_text() == "a,b,c,d\n1,0.33333333333333331,,x\n"


def test_metrics_file(tmp_path, report):
    rows = _read(write_metrics(tmp_path / "metrics.csv", [("dip", "blobs", "shift40", report)]))
    assert rows[0]["model"] == "dip" and rows[0]["ood_set"] == "shift40"
    assert float(rows[0]["auroc"]) == 0.99
    assert list(rows[0])[3:] == list(METRIC_COLUMNS)


def test_ablation_file(tmp_path, report):
    rows = _read(write_ablation(tmp_path / "ablation.csv", [((True, False, True), report)]))
    assert (rows[0]["use_n"], rows[0]["use_de"], rows[0]["use_nn"]) == ("1", "0", "1")
    assert rows[0]["n_ood"] == "50"


def test_scores_file(tmp_path):
    config = DIPConfig(alpha=ConcentrationVector.symmetric(2), n_train=10)
    probs = np.array([[0.9, 0.1], [0.5, 0.5]])
    id_post = dip_predict(config, np.array([1.0, 2.0]), probs)
    ood_post = dip_predict(config, np.array([0.001]), probs[:1])
    rows = _read(write_scores(tmp_path / "scores.csv", id_post, ood_post, ScoreKind.VACUITY))
    assert [r["split"] for r in rows] == ["id", "id", "ood"]
    assert float(rows[1]["density_scale"]) == 2.0
    assert float(rows[2]["score"]) == pytest.approx(float(ood_post.vacuity[0]))


def test_scores_without_density(tmp_path):
    post = posterior_from_evidence(np.ones(2), np.array([[1.0, 0.0]]))
    rows = _read(write_scores(tmp_path / "scores.csv", post, post, "max_prob"))
    assert rows[0]["density_scale"] == ""
    assert float(rows[0]["max_prob"]) == pytest.approx(2 / 3)


def test_training_log(tmp_path):
    records = [EpochRecord(epoch=0, loss=1.5, anneal_factor=0.0, learning_rate=0.001)]
    rows = _read(write_training_log(tmp_path / "log.csv", records))
    assert rows == [{"epoch": "0", "loss": "1.5", "anneal_factor": "0", "learning_rate": "0.001"}]
