"""Small multilayer perceptron with exact reverse-mode gradients and Adam.

Hidden layers use the rectifier; the output layer is affine and followed by
the head activation: softplus (or exp) for the evidence head, softmax for the
probability head.
"""

import logging
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from dip_edl.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_HIDDEN
from dip_edl.errors import DimensionMismatchError, DomainError
from dip_edl.losses import (
    EDLLossConfig,
    LossKind,
    cross_entropy_output_loss,
    edl_output_loss,
    softmax,
    squared_error_output_loss,
    tempered_output_loss,
)
from dip_edl.seeding import make_rng

logger = logging.getLogger(__name__)


class Nonlinearity(Enum):
    RECTIFIER = "rectifier"
    IDENTITY = "identity"


class HeadKind(Enum):
    EVIDENCE = "evidence"
    PROBABILITY = "probability"


class EvidenceActivation(Enum):
    SOFTPLUS = "softplus"
    EXP = "exp"


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(ge=1)
    output_dim: int = Field(ge=1)
    nonlinearity: Nonlinearity = Nonlinearity.RECTIFIER


class MLPParameters(BaseModel):
    """Weights ``(in, out)`` and biases ``(out,)`` for every layer."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_kind: HeadKind
    evidence_activation: EvidenceActivation = EvidenceActivation.SOFTPLUS

    @model_validator(mode="after")
    def _check_shapes(self) -> "MLPParameters":
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if not len(self.layers) == len(self.weights) == len(self.biases):
            raise ValueError("layers, weights and biases must have equal length")
        for i, (layer, w, b) in enumerate(zip(self.layers, self.weights, self.biases)):
            if w.shape != (layer.input_dim, layer.output_dim) or b.shape != (layer.output_dim,):
                raise ValueError(f"layer {i} shapes {w.shape}/{b.shape} do not match {layer}")
            if i and self.layers[i - 1].output_dim != layer.input_dim:
                raise ValueError(f"layer {i} input {layer.input_dim} does not chain from {self.layers[i - 1].output_dim}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite entries")
        return self

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved per layer."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "MLPParameters":
        return self.model_copy(update={"weights": list(arrays[0::2]), "biases": list(arrays[1::2])})


class GradientBundle(BaseModel):
    """Gradient of the mean batch loss, shaped like the parameters it belongs to."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss: float

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, factor: float) -> "GradientBundle":
        return GradientBundle(
            weights=[factor * w for w in self.weights],
            biases=[factor * b for b in self.biases],
            loss=factor * self.loss,
        )


class AdamState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = 0
    first_moment: list[np.ndarray] = Field(default_factory=list)
    second_moment: list[np.ndarray] = Field(default_factory=list)

    @classmethod
    def fresh(cls, params: MLPParameters) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls(step=0, first_moment=zeros, second_moment=[z.copy() for z in zeros])


def layer_specs(input_dim: int, output_dim: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN) -> list[LayerSpec]:
    dims = [input_dim, *hidden, output_dim]
    return [
        LayerSpec(
            input_dim=dims[i],
            output_dim=dims[i + 1],
            nonlinearity=Nonlinearity.IDENTITY if i == len(dims) - 2 else Nonlinearity.RECTIFIER,
        )
        for i in range(len(dims) - 1)
    ]


def init_mlp(
    layers: list[LayerSpec],
    head_kind: HeadKind,
    seed: int,
    evidence_activation: EvidenceActivation = EvidenceActivation.SOFTPLUS,
) -> MLPParameters:
    """Fan-in scaled uniform initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = make_rng(seed)
    weights, biases = [], []
    for layer in layers:
        bound = 1.0 / np.sqrt(layer.input_dim)
        weights.append(rng.uniform(-bound, bound, size=(layer.input_dim, layer.output_dim)))
        biases.append(rng.uniform(-bound, bound, size=layer.output_dim))
    return MLPParameters(
        layers=layers,
        weights=weights,
        biases=biases,
        head_kind=head_kind,
        evidence_activation=evidence_activation,
    )


def _as_inputs(params: MLPParameters, x: ArrayLike) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != params.input_dim:
        raise DimensionMismatchError("network input", params.input_dim, arr.shape[-1] if arr.ndim else arr.shape)
    if not np.all(np.isfinite(arr)):
        raise DomainError("network inputs must be finite")
    return arr, single


def _forward_cache(params: MLPParameters, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Layer inputs and pre-activations; the last pre-activation is the logit."""
    inputs, pre = [], []
    h = x
    for layer, w, b in zip(params.layers, params.weights, params.biases):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.nonlinearity is Nonlinearity.RECTIFIER else z
    return inputs, pre


def _head(params: MLPParameters, logits: np.ndarray) -> np.ndarray:
    if params.head_kind is HeadKind.PROBABILITY:
        return softmax(logits)
    if params.evidence_activation is EvidenceActivation.EXP:
        return np.exp(logits)
    return np.logaddexp(0.0, logits)


def _head_derivative(params: MLPParameters, logits: np.ndarray) -> np.ndarray:
    if params.evidence_activation is EvidenceActivation.EXP:
        return np.exp(logits)
    # d softplus / dz is the logistic function
    return np.exp(-np.logaddexp(0.0, -logits))


def _last_activation(params: MLPParameters, pre: list[np.ndarray]) -> np.ndarray:
    z = pre[-1]
    return np.maximum(z, 0.0) if params.layers[-1].nonlinearity is Nonlinearity.RECTIFIER else z


def mlp_forward(params: MLPParameters, x: ArrayLike) -> np.ndarray:
    """Evidence (non-negative) or class probabilities for one input or a batch."""
    arr, single = _as_inputs(params, x)
    _, pre = _forward_cache(params, arr)
    out = _head(params, _last_activation(params, pre))
    return out[0] if single else out


def mlp_logits(params: MLPParameters, x: ArrayLike) -> np.ndarray:
    arr, single = _as_inputs(params, x)
    _, pre = _forward_cache(params, arr)
    out = _last_activation(params, pre)
    return out[0] if single else out


def _output_gradient(
    params: MLPParameters,
    logits: np.ndarray,
    labels: np.ndarray,
    loss_kind: LossKind,
    edl_config: EDLLossConfig | None,
    anneal_factor: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and their gradient with respect to the logits."""
    if loss_kind is LossKind.SQUARED_ERROR:
        return squared_error_output_loss(logits, labels)
    if loss_kind is LossKind.CROSS_ENTROPY:
        if params.head_kind is not HeadKind.PROBABILITY:
            raise DomainError("cross-entropy needs the probability head")
        return cross_entropy_output_loss(logits, labels)
    if params.head_kind is not HeadKind.EVIDENCE:
        raise DomainError(f"{loss_kind.value} loss needs the evidence head")
    if edl_config is None:
        raise DomainError(f"{loss_kind.value} loss needs an EDLLossConfig")
    evidence = _head(params, logits)
    if loss_kind is LossKind.EDL:
        losses, grad_e = edl_output_loss(evidence, labels, edl_config, anneal_factor)
    else:
        losses, grad_e = tempered_output_loss(evidence, labels, edl_config.alpha.array, edl_config.nu)
    return losses, grad_e * _head_derivative(params, logits)


def mlp_gradient(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    loss_kind: LossKind | str,
    edl_config: EDLLossConfig | None = None,
    anneal_factor: float = 1.0,
) -> GradientBundle:
    """Exact gradient of the mean batch loss with respect to every parameter."""
    kind = LossKind(loss_kind)
    x, _ = _as_inputs(params, features)
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise DomainError("batch must be non-empty")
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError("labels", (x.shape[0],), y.shape)
    y = y.astype(np.int64)

    inputs, pre = _forward_cache(params, x)
    logits = _last_activation(params, pre)
    losses, delta = _output_gradient(params, logits, y, kind, edl_config, anneal_factor)
    delta = delta / x.shape[0]

    grad_w: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(params.layers)
    for i in reversed(range(len(params.layers))):
        if params.layers[i].nonlinearity is Nonlinearity.RECTIFIER:
            delta = delta * (pre[i] > 0)
        grad_w[i] = inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = delta @ params.weights[i].T
    return GradientBundle(weights=grad_w, biases=grad_b, loss=float(np.mean(losses)))


def batch_loss(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    loss_kind: LossKind | str,
    edl_config: EDLLossConfig | None = None,
    anneal_factor: float = 1.0,
) -> float:
    """Mean batch loss without the backward pass."""
    x, _ = _as_inputs(params, features)
    y = np.asarray(labels).astype(np.int64)
    _, pre = _forward_cache(params, x)
    losses, _ = _output_gradient(params, _last_activation(params, pre), y, LossKind(loss_kind), edl_config, anneal_factor)
    return float(np.mean(losses))


def optimizer_step(
    params: MLPParameters,
    grads: GradientBundle,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[MLPParameters, AdamState]:
    """One Adam update with betas (0.9, 0.999) and eps 1e-8; L2 decay is added to the gradient."""
    if not lr > 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    param_arrays = params.arrays()
    grad_arrays = grads.arrays()
    if len(grad_arrays) != len(param_arrays) or any(g.shape != p.shape for g, p in zip(grad_arrays, param_arrays)):
        raise DimensionMismatchError("gradient bundle", [p.shape for p in param_arrays], [g.shape for g in grad_arrays])
    if not all(np.all(np.isfinite(g)) for g in grad_arrays):
        raise DomainError("gradients must be finite")
    if not state.first_moment:
        state = AdamState.fresh(params)

    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(param_arrays, grad_arrays, state.first_moment, state.second_moment):
        if weight_decay:
            g = g + weight_decay * p
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**step)
        v_hat = v / (1.0 - ADAM_BETA2**step)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_params), AdamState(step=step, first_moment=new_m, second_moment=new_v)


def finite_difference_check(
    params: MLPParameters,
    features: ArrayLike,
    labels: ArrayLike,
    loss_kind: LossKind | str,
    step: float = 1e-5,
    edl_config: EDLLossConfig | None = None,
    anneal_factor: float = 1.0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    Returns ``max_j |analytic_j - numeric_j| / max(|analytic_j|, floor)`` over
    every weight and bias. Gradients smaller than ``floor`` are therefore
    judged by their absolute error; ``floor=1e-12`` approximates the plain
    relative error ``|a - n| / (|a| + 1e-12)``.
    """
    if not 1e-7 <= step <= 1e-3:
        raise DomainError(f"finite-difference step must lie in [1e-7, 1e-3], got {step}")
    analytic = mlp_gradient(params, features, labels, loss_kind, edl_config, anneal_factor).arrays()
    arrays = [a.copy() for a in params.arrays()]
    worst = 0.0
    for which, (array, grad) in enumerate(zip(arrays, analytic)):
        flat = array.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            up = batch_loss(params.with_arrays(arrays), features, labels, loss_kind, edl_config, anneal_factor)
            flat[j] = original - step
            down = batch_loss(params.with_arrays(arrays), features, labels, loss_kind, edl_config, anneal_factor)
            flat[j] = original
            numeric = (up - down) / (2.0 * step)
            exact = grad.reshape(-1)[j]
            worst = max(worst, abs(exact - numeric) / max(abs(exact), floor))
    logger.debug("Finite-difference check finished", extra={"max_relative_error": worst, "loss_kind": str(loss_kind)})
    return worst
