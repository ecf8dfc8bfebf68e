"""Run configuration: flat ``key=value`` files merged with command-line overrides.

Sources merge in order of precedence: built-in defaults, then the ``--config``
file, then repeated ``--set key=value`` overrides, then the dedicated
``--seed``/``--out`` flags. Later sources win key by key.
"""

import logging
from collections.abc import Mapping, Sequence
from enum import Enum
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dip_edl.backbone import EvidenceActivation
from dip_edl.constants import DEFAULT_DENSITY_CLAMP, DEFAULT_EVIDENCE_CLAMP, DEFAULT_HIDDEN, MIN_CONCENTRATION
from dip_edl.dip_head import DIPConfig, ScoreKind
from dip_edl.errors import ConfigError
from dip_edl.losses import EDLLossConfig
from dip_edl.models import ConcentrationVector
from dip_edl.training import LRSchedule, TrainingSettings

logger = logging.getLogger(__name__)

_CONTRACT_TOL = 1e-12
_TIED = ("lambda", "nu")


class RunMode(Enum):
    DIP = "dip"
    EDL = "edl"


class DatasetKind(Enum):
    BLOBS = "blobs"
    MOONS = "moons"
    CSV = "csv"


class DensityKind(Enum):
    KDE = "kde"
    GMM = "gmm"
    GDA = "gda"


def _split_list(value: object) -> object:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    if isinstance(value, (int, float)):
        return (value,)
    return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    mode: RunMode = RunMode.DIP
    dataset: DatasetKind = DatasetKind.BLOBS
    n_classes: int = Field(default=10, ge=2)
    n_train: int = Field(default=2000, ge=1)
    n_test: int = Field(default=1000, ge=1)
    n_ood: int = Field(default=1000, ge=1)
    blob_radius: float = Field(default=10.0, gt=0.0)
    blob_sigma: float = Field(default=1.0, gt=0.0)
    moons_noise: float = Field(default=0.1, ge=0.0)
    ood_shift: float = 40.0
    ood_scale: float = Field(default=1.0, gt=0.0)
    train_csv: str = ""
    id_csv: str = ""
    ood_csv: str = ""

    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    evidence_activation: EvidenceActivation = EvidenceActivation.SOFTPLUS
    alpha: tuple[float, ...] = (1.0,)
    lam: float = Field(default=1.0, alias="lambda", gt=0.0)
    nu: float = Field(default=1.0, gt=0.0)
    anneal_epochs: int = Field(default=10, ge=0)
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    lr_schedule: LRSchedule = LRSchedule.CONSTANT

    density: DensityKind = DensityKind.KDE
    bandwidth: Literal["scott"] | float = "scott"
    gmm_components: int = Field(default=10, ge=1)
    gmm_tol: float = Field(default=1e-8, gt=0.0)
    gmm_max_iter: int = Field(default=200, ge=1)
    density_clamp: float = Field(default=DEFAULT_DENSITY_CLAMP, gt=0.0)
    evidence_clamp: float = Field(default=DEFAULT_EVIDENCE_CLAMP, gt=0.0)

    use_n: bool = True
    use_de: bool = True
    use_nn: bool = True
    score: ScoreKind = ScoreKind.VACUITY

    seed: int = Field(default=0, ge=0, lt=2**64)
    out_dir: str = "runs"

    @model_validator(mode="before")
    @classmethod
    def _resolve_dependent_keys(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        lam = data.pop("lambda", data.pop("lam", None))
        nu = data.pop("nu", None)
        lam = None if lam in (None, "") else float(lam)
        nu = None if nu in (None, "") else float(nu)
        if lam is not None and nu is not None:
            if abs(lam * nu - 1.0) > _CONTRACT_TOL:
                raise ValueError(f"lambda * nu must equal 1, got lambda={lam}, nu={nu}")
        elif lam is not None:
            nu = 1.0 / lam if lam > 0 else None
        elif nu is not None:
            lam = 1.0 / nu if nu > 0 else None
        if lam is not None:
            data["lambda"] = lam
        if nu is not None:
            data["nu"] = nu
        dataset = data.get("dataset", "")
        if str(getattr(dataset, "value", dataset)).lower() == DatasetKind.MOONS.value:
            data.setdefault("n_classes", 2)
        return data

    @field_validator("hidden", "alpha", mode="before")
    @classmethod
    def _parse_list(cls, v: object) -> object:
        return _split_list(v)

    @field_validator("bandwidth", mode="before")
    @classmethod
    def _parse_bandwidth(cls, v: object) -> object:
        if isinstance(v, str) and v.strip().lower() == "scott":
            return "scott"
        value = float(v)  # type: ignore[arg-type]
        if not value > 0:
            raise ValueError("bandwidth must be 'scott' or a positive number")
        return value

    @field_validator("hidden")
    @classmethod
    def _check_hidden(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(width < 1 for width in v):
            raise ValueError("hidden layer widths must be positive")
        return v

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if len(self.alpha) not in (1, self.n_classes):
            raise ValueError(f"alpha needs 1 or {self.n_classes} entries, got {len(self.alpha)}")
        if min(self.alpha) < MIN_CONCENTRATION:
            raise ValueError(f"alpha entries must be >= {MIN_CONCENTRATION}")
        if self.dataset is DatasetKind.MOONS and self.n_classes != 2:
            raise ValueError("the two-moons dataset has exactly 2 classes")
        if self.dataset is DatasetKind.CSV and not (self.train_csv and self.id_csv and self.ood_csv):
            raise ValueError("dataset=csv needs train_csv, id_csv and ood_csv")
        return self

    def alpha_vector(self) -> ConcentrationVector:
        values = self.alpha * self.n_classes if len(self.alpha) == 1 else self.alpha
        return ConcentrationVector.of(values)

    def edl_loss_config(self) -> EDLLossConfig:
        return EDLLossConfig(alpha=self.alpha_vector(), lam=self.lam, nu=self.nu, anneal_epochs=self.anneal_epochs)

    def dip_config(self, n_train: int) -> DIPConfig:
        return DIPConfig(
            alpha=self.alpha_vector(),
            n_train=n_train,
            use_n=self.use_n,
            use_de=self.use_de,
            use_nn=self.use_nn,
            evidence_clamp=self.evidence_clamp,
        )

    def training_settings(self) -> TrainingSettings:
        return TrainingSettings(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            lr_schedule=self.lr_schedule,
            anneal_epochs=self.anneal_epochs,
            seed=self.seed,
        )

    def to_text(self) -> str:
        """Serialize in the ``key=value`` file format; ``parse_config`` reads it back."""
        lines = []
        for name, field in type(self).model_fields.items():
            key = field.alias or name
            lines.append(f"{key}={_format_value(getattr(self, name))}")
        return "\n".join(lines) + "\n"


def _format_value(value: object) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_key_values(lines: Sequence[str], source: str) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values: dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}", f"expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{number}", "empty key")
        values[key] = value.strip()
    return values


def load_config_file(path: Path | str) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    return parse_key_values(path.read_text().splitlines(), str(path))


def _merge_sources(*sources: Mapping[str, object]) -> dict[str, object]:
    """Later sources win; setting one of lambda/nu alone drops the other from earlier sources."""
    merged: dict[str, object] = {}
    for source in sources:
        present = [key for key in _TIED if key in source]
        if len(present) == 1:
            partner = _TIED[1 - _TIED.index(present[0])]
            merged.pop(partner, None)
        merged.update(source)
    return merged


def _config_error(exc: ValidationError) -> ConfigError:
    first = exc.errors()[0]
    loc = first.get("loc") or ()
    key = ".".join(str(part) for part in loc) or "config"
    if key == "lam":
        key = "lambda"
    if key == "config" and "lambda" in first.get("msg", ""):
        key = "lambda"
    expected = f" (got {first['input']!r})" if "input" in first and not isinstance(first["input"], dict) else ""
    return ConfigError(key, f"{first['msg']}{expected}")


def parse_config(
    path: Path | str | None = None,
    overrides: Sequence[str] | Mapping[str, object] = (),
    seed: int | None = None,
    out_dir: Path | str | None = None,
) -> RunConfig:
    """Build a validated ``RunConfig`` from an optional file, overrides and flags."""
    file_values: Mapping[str, object] = load_config_file(path) if path else {}
    if isinstance(overrides, Mapping):
        override_values: Mapping[str, object] = overrides
    else:
        override_values = parse_key_values(list(overrides), "--set")
    flags: dict[str, object] = {}
    if seed is not None:
        flags["seed"] = seed
    if out_dir is not None:
        flags["out_dir"] = str(out_dir)
    merged = _merge_sources(file_values, override_values, flags)
    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise _config_error(exc) from exc
    logger.debug("Resolved configuration", extra={"keys": sorted(merged)})
    return config


def save_config_snapshot(config: RunConfig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_text())
    return path
