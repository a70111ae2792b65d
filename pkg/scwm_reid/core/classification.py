"""Linear classifier heads, refined pseudo labels and the classification loss.

Part labels are smoothed towards uniform by how much the part agrees with its global feature;
global labels are distilled from the part predictions. Both stay valid distributions.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from scwm_reid.core.exceptions import (
    InvalidParameterError,
    NonPositiveProbabilityError,
    ShapeMismatchError,
)
from scwm_reid.core.numerics import as_tensor, softmax


@dataclass(frozen=True)
class LinearHeadParams:
    """Linear classifier over N_C pseudo identities: `weight` is N_C x D, `bias` has N_C entries."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = as_tensor(self.weight)
        bias = as_tensor(self.bias)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeMismatchError(
                f"Head weight must be N_C x D with N_C biases, got {weight.shape} and {bias.shape}."
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def from_centroids(cls, centroids: np.ndarray, scale: float = 1.0) -> "LinearHeadParams":
        centroids = np.asarray(centroids, dtype=np.float64)
        return cls(weight=scale * centroids, bias=np.zeros(centroids.shape[0]))


def _check_head_input(params: LinearHeadParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != params.weight.shape[1]:
        raise ShapeMismatchError(
            f"Head expects {params.weight.shape[1]}-dim features, got {features.shape[-1]}."
        )
    return features


def head_forward(params: LinearHeadParams, features: np.ndarray) -> np.ndarray:
    """Class distribution softmax(weight . f + bias) for one feature (D,) or a batch (B x D)."""
    features = _check_head_input(params, features)
    return softmax(features @ params.weight.T + params.bias, axis=-1)


def head_backward(
    params: LinearHeadParams, features: np.ndarray, grad_logits: np.ndarray
) -> Tuple[LinearHeadParams, np.ndarray]:
    """Gradients of the head for an upstream gradient on its logits.

    Returns:
        Tuple[LinearHeadParams, np.ndarray]: parameter gradients and gradient wrt the features.
    """
    features = _check_head_input(params, features)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape[-1] != params.num_classes:
        raise ShapeMismatchError("Logit gradient does not match the number of classes.")
    batch_features = np.atleast_2d(features)
    batch_grads = np.atleast_2d(grad_logits)
    grads = LinearHeadParams(
        weight=batch_grads.T @ batch_features, bias=batch_grads.sum(axis=0)
    )
    return grads, grad_logits @ params.weight


def _check_unit_interval(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise InvalidParameterError(f"{name} must be in [0, 1], got {value}.")


def refine_part_label(label: np.ndarray, alpha: float) -> np.ndarray:
    """Weighted label smoothing: alpha * y + (1 - alpha) * uniform."""
    _check_unit_interval(alpha, "alpha")
    label = np.asarray(label, dtype=np.float64)
    return alpha * label + (1.0 - alpha) / label.shape[-1]


def part_agreement_weights(alpha_p: np.ndarray) -> np.ndarray:
    """Share of each part in the distilled global label: softmax over the part agreements."""
    alpha_p = np.asarray(alpha_p, dtype=np.float64)
    if alpha_p.shape[-1] < 1:
        raise InvalidParameterError("Part weights need at least one part.")
    return softmax(alpha_p, axis=-1)


def distill_global_label(
    label: np.ndarray, beta: float, part_weights: np.ndarray, part_predictions: np.ndarray
) -> np.ndarray:
    """beta * y + (1 - beta) * sum_k w_k * q_k.

    The part predictions are copied in as constants, so nothing flows back into the part heads
    through the label.

    Args:
        label (np.ndarray): one-hot pseudo label over N_C classes.
        beta (float): weight kept on the pseudo label.
        part_weights (np.ndarray): l weights summing to 1, see `part_agreement_weights`.
        part_predictions (np.ndarray): l x N_C part class distributions.
    """
    _check_unit_interval(beta, "beta")
    label = np.asarray(label, dtype=np.float64)
    predictions = np.array(part_predictions, dtype=np.float64, copy=True)
    part_weights = np.asarray(part_weights, dtype=np.float64)
    if predictions.shape[-1] != label.shape[-1] or predictions.shape[-2] != part_weights.shape[-1]:
        raise ShapeMismatchError("Part predictions must be l x N_C, matching label and weights.")
    mixed = np.einsum("...k,...kc->...c", part_weights, predictions)
    return beta * label + (1.0 - beta) * mixed


def id_loss(
    global_prediction: np.ndarray,
    part_predictions: np.ndarray,
    global_label: np.ndarray,
    part_labels: np.ndarray,
    active_parts: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy of the global and part heads against their refined labels.

    Per sample: -y_g . log q_g - 1/l * sum_k y_pk . log q_pk. Works on one sample (N_C and
    l x N_C arrays) or a batch (leading B axis), averaging over the batch.

    Returns:
        Tuple[float, np.ndarray, np.ndarray]: loss and gradients wrt the global and part logits.
    """
    q_g = np.asarray(global_prediction, dtype=np.float64)
    q_p = np.asarray(part_predictions, dtype=np.float64)
    y_g = np.asarray(global_label, dtype=np.float64)
    y_p = np.asarray(part_labels, dtype=np.float64)
    if q_g.shape != y_g.shape or q_p.shape != y_p.shape or q_p.shape[-1] != q_g.shape[-1]:
        raise ShapeMismatchError("Predictions and labels must have matching shapes.")
    if np.any(q_g <= 0.0) or np.any(q_p <= 0.0):
        raise NonPositiveProbabilityError("Class predictions must be strictly positive.")

    batch = q_g.shape[0] if q_g.ndim == 2 else 1
    num_parts = q_p.shape[-2]
    if active_parts is None:
        active_parts = np.ones(q_p.shape[:-1], dtype=bool)
    active = np.asarray(active_parts, dtype=np.float64)[..., None]

    value = -np.sum(y_g * np.log(q_g)) - np.sum(active * y_p * np.log(q_p)) / num_parts
    grad_global = (q_g - y_g) / batch
    grad_parts = active * (q_p - y_p) / num_parts / batch
    return float(value / batch), grad_global, grad_parts


@dataclass
class LossTerm:
    """One term of the training objective: its value and gradients keyed by what they flow into."""

    value: float
    grads: Dict[str, np.ndarray] = field(default_factory=dict)


def total_loss(*terms: LossTerm) -> LossTerm:
    """Unweighted sum of parsing, weighted memory and classification terms and their gradients."""
    value = 0.0
    grads: Dict[str, np.ndarray] = {}
    for term in terms:
        value += term.value
        for name, grad in term.grads.items():
            grads[name] = grads[name] + grad if name in grads else np.array(grad, copy=True)
    return LossTerm(value=value, grads=grads)
