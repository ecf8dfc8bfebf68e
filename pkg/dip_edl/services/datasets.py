"""CSV dataset files: header ``x1,...,xd[,label]``, one sample per row.

A file without the ``label`` column loads as an unlabelled (OOD) set. Class
labels are 0-based integers.
"""

import csv
import io
import logging
from enum import Enum
from pathlib import Path

import numpy as np

from dip_edl.errors import DatasetFormatError, DomainError
from dip_edl.models import LabelledDataset
from dip_edl.services.checkpoint import atomic_write_text, format_real

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"


class Direction(Enum):
    READ = "read"
    WRITE = "write"


def _parse_header(cells: list[str]) -> tuple[int, bool]:
    names = [c.strip() for c in cells]
    labelled = bool(names) and names[-1] == LABEL_COLUMN
    feature_names = names[:-1] if labelled else names
    if not feature_names:
        raise DatasetFormatError(1, "header needs at least one feature column x1")
    expected = [f"x{j}" for j in range(1, len(feature_names) + 1)]
    if feature_names != expected:
        raise DatasetFormatError(1, f"header must be {','.join(expected)}[,label], got {','.join(names)}")
    return len(feature_names), labelled


def read_dataset(path: Path | str, n_classes: int | None = None) -> LabelledDataset:
    path = Path(path)
    if not path.exists():
        raise DomainError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError(1, "missing header")
        d, labelled = _parse_header(header)
        width = d + 1 if labelled else d
        rows: list[list[float]] = []
        labels: list[int] = []
        for cells in reader:
            line = reader.line_num
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != width:
                raise DatasetFormatError(line, f"expected {width} fields, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells[:d]])
            except ValueError:
                raise DatasetFormatError(line, "non-numeric feature value") from None
            if not all(np.isfinite(rows[-1])):
                raise DatasetFormatError(line, "feature values must be finite")
            if labelled:
                try:
                    label = int(cells[d])
                except ValueError:
                    raise DatasetFormatError(line, f"label must be an integer, got {cells[d]!r}") from None
                if label < 0 or (n_classes is not None and label >= n_classes):
                    raise DatasetFormatError(line, f"label {label} out of range")
                labels.append(label)
    if not rows:
        raise DatasetFormatError(2, "no data rows")
    logger.info("Dataset read", extra={"path": str(path), "rows": len(rows), "labelled": labelled})
    return LabelledDataset(
        features=np.array(rows),
        labels=np.array(labels, dtype=np.int64) if labelled else None,
        n_classes=n_classes,
    )


def write_dataset(path: Path | str, dataset: LabelledDataset) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = [f"x{j}" for j in range(1, dataset.d + 1)]
    if dataset.is_labelled:
        header.append(LABEL_COLUMN)
    writer.writerow(header)
    for i in range(dataset.n):
        row = [format_real(v) for v in dataset.features[i]]
        if dataset.labels is not None:
            row.append(str(int(dataset.labels[i])))
        writer.writerow(row)
    return atomic_write_text(path, buffer.getvalue())


def csv_io(
    path: Path | str,
    direction: Direction | str,
    dataset: LabelledDataset | None = None,
    n_classes: int | None = None,
) -> LabelledDataset | None:
    """Read a dataset from ``path`` or write ``dataset`` to it."""
    if Direction(direction) is Direction.READ:
        return read_dataset(path, n_classes)
    if dataset is None:
        raise DomainError("writing needs a dataset")
    write_dataset(path, dataset)
    return None
