"""CSV writers for metrics, ablation grids, per-sample scores and training logs."""

import csv
import io
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from dip_edl.dip_head import DIPPosterior, ScoreKind, uncertainty_score
from dip_edl.models import MetricsReport
from dip_edl.services.checkpoint import atomic_write_text, format_real
from dip_edl.training import EpochRecord

METRIC_COLUMNS = tuple(MetricsReport.model_fields)
TOGGLE_COLUMNS = ("use_n", "use_de", "use_nn")


def _cell(value: object) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return format_real(value)
    if value is None:
        return ""
    return str(value)


def write_rows(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return atomic_write_text(path, buffer.getvalue())


def _metric_cells(report: MetricsReport) -> list[object]:
    return [getattr(report, name) for name in METRIC_COLUMNS]


def write_metrics(path: Path | str, rows: Sequence[tuple[str, str, str, MetricsReport]]) -> Path:
    """One row per (model, ID set, OOD set)."""
    return write_rows(
        path,
        ("model", "id_set", "ood_set", *METRIC_COLUMNS),
        ([model, id_set, ood_set, *_metric_cells(report)] for model, id_set, ood_set, report in rows),
    )


def write_ablation(path: Path | str, rows: Sequence[tuple[tuple[bool, bool, bool], MetricsReport]]) -> Path:
    return write_rows(
        path,
        (*TOGGLE_COLUMNS, *METRIC_COLUMNS),
        ([*toggles, *_metric_cells(report)] for toggles, report in rows),
    )


def write_scores(
    path: Path | str,
    id_posterior: DIPPosterior,
    ood_posterior: DIPPosterior,
    kind: ScoreKind = ScoreKind.VACUITY,
) -> Path:
    """Per-sample dump ``split,score,max_prob,density_scale``; density is blank for plain EDL."""

    def rows(split: str, posterior: DIPPosterior) -> Iterable[list[object]]:
        scores = np.atleast_1d(uncertainty_score(posterior, kind))
        confidence = np.atleast_1d(posterior.max_prob)
        density = posterior.density_scale
        dens = np.atleast_1d(density) if density is not None else None
        for i in range(scores.size):
            yield [split, float(scores[i]), float(confidence[i]), None if dens is None else float(dens[i])]

    return write_rows(
        path,
        ("split", "score", "max_prob", "density_scale"),
        [*rows("id", id_posterior), *rows("ood", ood_posterior)],
    )


def write_training_log(path: Path | str, records: Sequence[EpochRecord]) -> Path:
    fields = tuple(EpochRecord.model_fields)
    return write_rows(path, fields, ([getattr(r, f) for f in fields] for r in records))
