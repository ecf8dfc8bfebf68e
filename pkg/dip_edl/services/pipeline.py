"""Train, evaluate and ablate workflows behind the command-line front end.

DIP models are trained in two independent stages: a softmax classifier with
cross-entropy and a marginal density estimator with its log-likelihood
normalizer. EDL models are a single evidence network trained with the
annealed EDL loss.
"""

import logging
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict

from dip_edl.backbone import HeadKind, MLPParameters, init_mlp, layer_specs, mlp_forward
from dip_edl.config import DatasetKind, DensityKind, RunConfig, RunMode, save_config_snapshot
from dip_edl.constants import (
    ABLATION_FILE,
    CLASSIFIER_CHECKPOINT,
    CONFIG_SNAPSHOT,
    DENSITY_CHECKPOINT,
    METRICS_FILE,
    SCORES_FILE,
    TRAINING_LOG,
)
from dip_edl.density import FittedDensity, fit_density, gda_fit, gmm_fit_em, kde_build
from dip_edl.dip_head import DIPPosterior, dip_predict, posterior_from_evidence
from dip_edl.errors import ConfigError, DimensionMismatchError
from dip_edl.evaluation import evaluate
from dip_edl.losses import LossKind
from dip_edl.models import LabelledDataset, MetricsReport
from dip_edl.seeding import derive_seed
from dip_edl.services.checkpoint import load_classifier, load_density, save_classifier, save_density
from dip_edl.services.datasets import read_dataset
from dip_edl.services.reports import write_ablation, write_metrics, write_scores, write_training_log
from dip_edl.synthetic import circle_centers, make_blobs, make_ood_shift, make_two_moons
from dip_edl.training import EpochRecord, train_classifier

logger = logging.getLogger(__name__)

# Seed streams for the independent pieces of one run.
_TRAIN_SPLIT, _TEST_SPLIT, _OOD_SPLIT, _INIT, _DENSITY = range(5)

# Full model first, then every other non-empty toggle combination.
ABLATION_GRID: tuple[tuple[bool, bool, bool], ...] = (
    (True, True, True),
    (False, True, True),
    (True, False, True),
    (True, True, False),
    (False, False, True),
    (False, True, False),
    (True, False, False),
)


class DataSplits(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    train: LabelledDataset
    test: LabelledDataset
    ood: LabelledDataset
    test_name: str
    ood_name: str


class TrainedModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mode: RunMode
    classifier: MLPParameters
    density: FittedDensity | None = None
    log: list[EpochRecord] = []


def _shift_vector(config: RunConfig, d: int) -> np.ndarray:
    shift = np.zeros(d)
    shift[0] = config.ood_shift
    return shift


def _ood_name(config: RunConfig) -> str:
    return f"shift{config.ood_shift:g}-scale{config.ood_scale:g}"


def _unlabelled(dataset: LabelledDataset) -> LabelledDataset:
    return dataset if dataset.labels is None else dataset.model_copy(update={"labels": None})


def build_datasets(config: RunConfig) -> DataSplits:
    """Train, ID test and OOD sets for ``config``; the same config always yields the same data."""
    k = config.n_classes
    if config.dataset is DatasetKind.CSV:
        train = read_dataset(config.train_csv, k)
        test = read_dataset(config.id_csv, k)
        ood = _unlabelled(read_dataset(config.ood_csv))
        if not (train.is_labelled and test.is_labelled):
            raise ConfigError("train_csv", "training and ID test files need a label column")
        return DataSplits(
            train=train, test=test, ood=ood, test_name=Path(config.id_csv).stem, ood_name=Path(config.ood_csv).stem
        )

    if config.dataset is DatasetKind.BLOBS:
        centers = circle_centers(k, config.blob_radius)
        if config.n_train % k or config.n_test % k:
            logger.warning("Split sizes not divisible by class count, rounding down", extra={"n_classes": k})
        train = make_blobs(k, max(1, config.n_train // k), centers, config.blob_sigma, derive_seed(config.seed, _TRAIN_SPLIT))
        test = make_blobs(k, max(1, config.n_test // k), centers, config.blob_sigma, derive_seed(config.seed, _TEST_SPLIT))
        test_name = "blobs"
    else:
        train = make_two_moons(config.n_train, config.moons_noise, derive_seed(config.seed, _TRAIN_SPLIT))
        test = make_two_moons(config.n_test, config.moons_noise, derive_seed(config.seed, _TEST_SPLIT))
        test_name = "moons"
    ood = make_ood_shift(
        test, _shift_vector(config, test.d), config.ood_scale, derive_seed(config.seed, _OOD_SPLIT), n=config.n_ood
    )
    return DataSplits(train=train, test=test, ood=ood, test_name=test_name, ood_name=_ood_name(config))


def fit_density_model(config: RunConfig, train: LabelledDataset) -> FittedDensity:
    if config.density is DensityKind.KDE:
        model = kde_build(train.features, config.bandwidth)
    elif config.density is DensityKind.GMM:
        model = gmm_fit_em(
            train.features,
            config.gmm_components,
            seed=derive_seed(config.seed, _DENSITY),
            tol=config.gmm_tol,
            max_iter=config.gmm_max_iter,
        )
    else:
        model = gda_fit(train.features, train.labels, config.n_classes)
    return fit_density(model, train.features)


def train_model(config: RunConfig, train: LabelledDataset) -> TrainedModel:
    """Fit the classifier (and, for DIP, the density) on ``train``."""
    if train.labels is None:
        raise ConfigError("dataset", "training data must be labelled")
    specs = layer_specs(train.d, config.n_classes, config.hidden)
    init_seed = derive_seed(config.seed, _INIT)
    settings = config.training_settings()
    if config.mode is RunMode.EDL:
        params = init_mlp(specs, HeadKind.EVIDENCE, init_seed, config.evidence_activation)
        result = train_classifier(params, train.features, train.labels, LossKind.EDL, settings, config.edl_loss_config())
        return TrainedModel(mode=config.mode, classifier=result.params, log=result.log)

    params = init_mlp(specs, HeadKind.PROBABILITY, init_seed)
    result = train_classifier(params, train.features, train.labels, LossKind.CROSS_ENTROPY, settings)
    density = fit_density_model(config, train)
    return TrainedModel(mode=config.mode, classifier=result.params, density=density, log=result.log)


def predict(
    config: RunConfig,
    model: TrainedModel,
    features: ArrayLike,
    toggles: tuple[bool, bool, bool] | None = None,
) -> DIPPosterior:
    """Posterior for every row of ``features``; ``toggles`` override the config's DIP switches."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != model.classifier.input_dim:
        raise DimensionMismatchError("feature dimension", model.classifier.input_dim, x.shape[1])
    outputs = mlp_forward(model.classifier, x)
    if model.mode is RunMode.EDL:
        return posterior_from_evidence(config.alpha_vector(), outputs)
    if model.density is None:
        raise ConfigError("mode", "a DIP model needs a fitted density")
    dip = config.dip_config(model.density.n_train)
    if toggles is not None:
        dip = dip.model_copy(update=dict(zip(("use_n", "use_de", "use_nn"), toggles)))
    scale = model.density.scale(x, config.density_clamp)
    return dip_predict(dip, scale, outputs)


def evaluate_model(
    config: RunConfig,
    model: TrainedModel,
    test: LabelledDataset,
    ood: LabelledDataset,
    toggles: tuple[bool, bool, bool] | None = None,
) -> tuple[MetricsReport, DIPPosterior, DIPPosterior]:
    id_posterior = predict(config, model, test.features, toggles)
    ood_posterior = predict(config, model, ood.features, toggles)
    report = evaluate(id_posterior, test.labels, ood_posterior, config.score)
    return report, id_posterior, ood_posterior


def _out_dir(config: RunConfig) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def save_model(model: TrainedModel, out_dir: Path) -> list[Path]:
    written = [save_classifier(model.classifier, out_dir / CLASSIFIER_CHECKPOINT)]
    if model.density is not None:
        written.append(save_density(model.density, out_dir / DENSITY_CHECKPOINT))
    return written


def load_model(config: RunConfig, checkpoint_dir: Path | str) -> TrainedModel:
    checkpoint_dir = Path(checkpoint_dir)
    classifier = load_classifier(checkpoint_dir / CLASSIFIER_CHECKPOINT)
    if classifier.output_dim != config.n_classes:
        raise DimensionMismatchError("classifier outputs", config.n_classes, classifier.output_dim)
    if config.mode is RunMode.EDL:
        if classifier.head_kind is not HeadKind.EVIDENCE:
            raise ConfigError("mode", "checkpoint holds a probability head, not an EDL evidence head")
        return TrainedModel(mode=config.mode, classifier=classifier)
    if classifier.head_kind is not HeadKind.PROBABILITY:
        raise ConfigError("mode", "checkpoint holds an EDL evidence head, not a DIP classifier")
    density = load_density(checkpoint_dir / DENSITY_CHECKPOINT)
    if density.model.d != classifier.input_dim:
        raise DimensionMismatchError("density dimension", classifier.input_dim, density.model.d)
    return TrainedModel(mode=config.mode, classifier=classifier, density=density)


def cmd_train(config: RunConfig) -> list[Path]:
    """Train on the configured data and write checkpoints, training log and config snapshot."""
    out_dir = _out_dir(config)
    splits = build_datasets(config)
    model = train_model(config, splits.train)
    written = save_model(model, out_dir)
    written.append(write_training_log(out_dir / TRAINING_LOG, model.log))
    written.append(save_config_snapshot(config, out_dir / CONFIG_SNAPSHOT))
    logger.info("Training run finished", extra={"out_dir": str(out_dir), "mode": config.mode.value})
    return written


def cmd_eval(
    config: RunConfig,
    checkpoint_dir: Path | str | None = None,
    id_set: LabelledDataset | None = None,
    ood_set: LabelledDataset | None = None,
) -> MetricsReport:
    """Score ID and OOD sets with saved checkpoints; write the metrics row and the score dump.

    Sets not passed in are regenerated from ``config`` exactly as ``cmd_train`` built them.
    """
    out_dir = _out_dir(config)
    model = load_model(config, checkpoint_dir or out_dir)
    test_name, ood_name = "id", "ood"
    if id_set is None or ood_set is None:
        splits = build_datasets(config)
        if id_set is None:
            id_set, test_name = splits.test, splits.test_name
        if ood_set is None:
            ood_set, ood_name = splits.ood, splits.ood_name
    if id_set.labels is None:
        raise ConfigError("id_csv", "the ID set needs labels")
    report, id_post, ood_post = evaluate_model(config, model, id_set, _unlabelled(ood_set))
    write_metrics(out_dir / METRICS_FILE, [(config.mode.value, test_name, ood_name, report)])
    write_scores(out_dir / SCORES_FILE, id_post, ood_post, config.score)
    return report


def cmd_ablate(
    config: RunConfig,
    id_set: LabelledDataset | None = None,
    ood_set: LabelledDataset | None = None,
) -> list[tuple[tuple[bool, bool, bool], MetricsReport]]:
    """Train the full DIP model once and evaluate it under every toggle combination."""
    if config.mode is not RunMode.DIP:
        raise ConfigError("mode", "the ablation grid needs mode=dip")
    out_dir = _out_dir(config)
    splits = build_datasets(config)
    model = train_model(config, splits.train)
    test = id_set if id_set is not None else splits.test
    ood = _unlabelled(ood_set) if ood_set is not None else splits.ood
    rows = []
    for toggles in ABLATION_GRID:
        report, _, _ = evaluate_model(config, model, test, ood, toggles)
        logger.info("Ablation row evaluated", extra={"toggles": toggles, "auroc": report.auroc})
        rows.append((toggles, report))
    write_ablation(out_dir / ABLATION_FILE, rows)
    return rows
