"""Minibatch training loop for the classifier network."""

import logging
import math
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from dip_edl.backbone import AdamState, MLPParameters, mlp_gradient, optimizer_step
from dip_edl.errors import DimensionMismatchError, DomainError, TrainingDivergedError
from dip_edl.losses import EDLLossConfig, LossKind
from dip_edl.objective import anneal_coefficient
from dip_edl.seeding import make_rng

logger = logging.getLogger(__name__)

_SHUFFLE_STREAM = 1


class LRSchedule(Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class TrainingSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    lr_schedule: LRSchedule = LRSchedule.CONSTANT
    anneal_epochs: int = Field(default=10, ge=0)
    seed: int = 0


class EpochRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    loss: float
    anneal_factor: float
    learning_rate: float


class TrainingResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: MLPParameters
    log: list[EpochRecord]


def learning_rate_at(settings: TrainingSettings, epoch: int) -> float:
    if settings.lr_schedule is LRSchedule.COSINE:
        return settings.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / settings.epochs))
    return settings.learning_rate


def train_classifier(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    loss_kind: LossKind | str,
    settings: TrainingSettings,
    edl_config: EDLLossConfig | None = None,
) -> TrainingResult:
    """Adam on shuffled minibatches; the KL weight ramps per epoch for the EDL loss.

    Raises ``TrainingDivergedError`` with the epoch index as soon as a batch
    loss or gradient stops being finite.
    """
    kind = LossKind(loss_kind)
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels).astype(np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError("training needs a non-empty n x d feature matrix")
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError("labels", (x.shape[0],), y.shape)

    rng = make_rng(settings.seed, _SHUFFLE_STREAM)
    state = AdamState.fresh(params)
    log: list[EpochRecord] = []
    for epoch in range(settings.epochs):
        anneal = anneal_coefficient(epoch, settings.anneal_epochs)
        lr = learning_rate_at(settings, epoch)
        order = rng.permutation(x.shape[0])
        total = 0.0
        for start in range(0, x.shape[0], settings.batch_size):
            batch = order[start : start + settings.batch_size]
            grads = mlp_gradient(params, x[batch], y[batch], kind, edl_config, anneal)
            if not math.isfinite(grads.loss) or not all(np.all(np.isfinite(g)) for g in grads.arrays()):
                logger.warning("Training diverged", extra={"epoch": epoch, "loss": grads.loss})
                raise TrainingDivergedError(epoch, grads.loss)
            params, state = optimizer_step(params, grads, state, lr, settings.weight_decay)
            total += grads.loss * batch.size
        record = EpochRecord(epoch=epoch, loss=total / x.shape[0], anneal_factor=anneal, learning_rate=lr)
        log.append(record)
        logger.info("Epoch finished", extra=record.model_dump())
    return TrainingResult(params=params, log=log)
