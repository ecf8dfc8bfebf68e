"""Plain-text checkpoints for the classifier and the density model.

Every real is written with 17 significant digits, so a checkpoint reloads
bit-for-bit and two identical runs produce identical bytes. Writes go to a
temporary file that is renamed into place.
"""

import logging
from collections.abc import Iterator
from pathlib import Path

import numpy as np

from dip_edl.backbone import EvidenceActivation, HeadKind, LayerSpec, MLPParameters, Nonlinearity
from dip_edl.constants import SIGNIFICANT_DIGITS
from dip_edl.density import DensityModel, FittedDensity, GaussianMixtureModel, KDEModel, LogLikelihoodNormalizer
from dip_edl.errors import CheckpointError

logger = logging.getLogger(__name__)


def format_real(value: float) -> str:
    return format(float(value), f".{SIGNIFICANT_DIGITS}g")


def _row(values: np.ndarray) -> str:
    return " ".join(format_real(v) for v in np.ravel(values))


def atomic_write_text(path: Path | str, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.rename(path)
    return path


class _Lines:
    """Numbered, whitespace-tokenized reader over a checkpoint file."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._iter: Iterator[tuple[int, str]] = enumerate(path.read_text().splitlines(), start=1)
        self.number = 0

    def next(self) -> list[str]:
        for self.number, line in self._iter:
            if line.strip():
                return line.split()
        raise CheckpointError(f"{self.path}: unexpected end of file after line {self.number}")

    def fail(self, message: str) -> CheckpointError:
        return CheckpointError(f"{self.path}:{self.number}: {message}")

    def reals(self, count: int) -> np.ndarray:
        tokens = self.next()
        if len(tokens) != count:
            raise self.fail(f"expected {count} values, got {len(tokens)}")
        try:
            return np.array([float(t) for t in tokens])
        except ValueError:
            raise self.fail("non-numeric value") from None

    def header(self, tag: str, count: int, optional: int = 0) -> list[str]:
        tokens = self.next()
        if not tokens or tokens[0] != tag or not count <= len(tokens) - 1 <= count + optional:
            raise self.fail(f"expected '{tag}' with {count} fields")
        return tokens[1:]

    def ints(self, tokens: list[str]) -> list[int]:
        try:
            return [int(t) for t in tokens]
        except ValueError:
            raise self.fail("expected integers") from None


def save_classifier(params: MLPParameters, path: Path | str) -> Path:
    lines = [f"mlp {len(params.layers)} {params.head_kind.value} {params.evidence_activation.value}"]
    for layer, w, b in zip(params.layers, params.weights, params.biases):
        lines.append(f"layer {layer.input_dim} {layer.output_dim} {layer.nonlinearity.value}")
        lines.extend(_row(row) for row in w)
        lines.append(_row(b))
    written = atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info("Classifier checkpoint written", extra={"path": str(written)})
    return written


def load_classifier(path: Path | str) -> MLPParameters:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Lines(path)
    # The activation token is optional; files without it use softplus.
    fields = reader.header("mlp", 2, optional=1)
    count, head = fields[:2]
    activation = fields[2] if len(fields) > 2 else EvidenceActivation.SOFTPLUS.value
    try:
        n_layers = int(count)
        head_kind = HeadKind(head)
        evidence_activation = EvidenceActivation(activation)
    except ValueError:
        raise reader.fail("malformed network header") from None
    layers, weights, biases = [], [], []
    for _ in range(n_layers):
        fan_in, fan_out, nonlinearity = reader.header("layer", 3)
        n_in, n_out = reader.ints([fan_in, fan_out])
        try:
            layers.append(LayerSpec(input_dim=n_in, output_dim=n_out, nonlinearity=Nonlinearity(nonlinearity)))
        except ValueError:
            raise reader.fail("malformed layer header") from None
        weights.append(np.vstack([reader.reals(n_out) for _ in range(n_in)]))
        biases.append(reader.reals(n_out))
    try:
        return MLPParameters(
            layers=layers,
            weights=weights,
            biases=biases,
            head_kind=head_kind,
            evidence_activation=evidence_activation,
        )
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def save_density(fitted: FittedDensity, path: Path | str) -> Path:
    model, normalizer = fitted.model, fitted.normalizer
    if isinstance(model, KDEModel):
        n, d = model.support_points.shape
        lines = [f"kde {d} {n}", _row(model.bandwidth)]
        lines.extend(_row(point) for point in model.support_points)
    else:
        lines = [f"gmm {model.d} {model.n_components}"]
        for m in range(model.n_components):
            lines.append(format_real(model.weights[m]))
            lines.append(_row(model.means[m]))
            lines.extend(_row(row) for row in model.covariances[m])
    lines.append(f"norm {format_real(normalizer.mean_loglik)} {format_real(normalizer.std_loglik)}")
    lines.append(f"n_train {fitted.n_train}")
    written = atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info("Density checkpoint written", extra={"path": str(written)})
    return written


def load_density(path: Path | str) -> FittedDensity:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Lines(path)
    tokens = reader.next()
    if len(tokens) != 3 or tokens[0] not in ("kde", "gmm"):
        raise reader.fail("expected 'kde <d> <n>' or 'gmm <d> <M>'")
    d, count = reader.ints(tokens[1:])
    try:
        model: DensityModel
        if tokens[0] == "kde":
            bandwidth = reader.reals(d)
            points = np.vstack([reader.reals(d) for _ in range(count)])
            model = KDEModel(support_points=points, bandwidth=bandwidth)
        else:
            weights, means, covs = [], [], []
            for _ in range(count):
                weights.append(reader.reals(1)[0])
                means.append(reader.reals(d))
                covs.append(np.vstack([reader.reals(d) for _ in range(d)]))
            model = GaussianMixtureModel(weights=np.array(weights), means=np.array(means), covariances=np.array(covs))
        mean, std = reader.header("norm", 2)
        normalizer = LogLikelihoodNormalizer(mean_loglik=float(mean), std_loglik=float(std))
        (n_train,) = reader.ints(reader.header("n_train", 1))
        return FittedDensity(model=model, normalizer=normalizer, n_train=n_train)
    except CheckpointError:
        raise
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
