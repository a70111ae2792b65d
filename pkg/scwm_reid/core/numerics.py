"""Dense tensor helpers: pooling, normalisation and the 3x3 part classifier head.

Tensors are plain float64 numpy arrays. Feature maps are laid out C x H x W, masks l x H x W.
Every function here is pure: inputs are never modified in place.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from scwm_reid.core.exceptions import (
    InvalidParameterError,
    NonFiniteTensorError,
    ShapeMismatchError,
    ZeroVectorError,
)

MAX_TENSOR_RANK = 4
KERNEL_SIZE = 3


def as_tensor(values, max_rank: int = MAX_TENSOR_RANK) -> np.ndarray:
    """Converts `values` to a float64 array and checks the Tensor invariants.

    Args:
        values: anything numpy can turn into an array.
        max_rank (int, optional): maximum number of dimensions. Defaults to 4.

    Returns:
        np.ndarray: float64 array with finite entries.
    """
    array = np.asarray(values, dtype=np.float64)
    if array.ndim > max_rank:
        raise ShapeMismatchError(f"Tensors have at most {max_rank} dims, got {array.shape}.")
    if not np.all(np.isfinite(array)):
        raise NonFiniteTensorError("Tensor holds NaN or infinite values.")
    return array


def _check_feature_map(feature_map: np.ndarray) -> np.ndarray:
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3:
        raise ShapeMismatchError(f"Feature maps are C x H x W, got shape {feature_map.shape}.")
    if feature_map.shape[1] == 0 or feature_map.shape[2] == 0:
        raise ShapeMismatchError("Cannot pool an empty feature map.")
    return feature_map


def gap(feature_map: np.ndarray) -> np.ndarray:
    """Global average pooling: channel-wise mean over every spatial position."""
    feature_map = _check_feature_map(feature_map)
    return feature_map.mean(axis=(1, 2))


def gap_backward(feature_map_shape: Tuple[int, int, int], grad: np.ndarray) -> np.ndarray:
    """Gradient of `gap` with respect to its input map."""
    _, height, width = feature_map_shape
    return np.broadcast_to(
        np.asarray(grad, dtype=np.float64)[:, None, None] / (height * width), feature_map_shape
    ).copy()


def masked_gap(feature_map: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pools `mask * feature_map` over space, dividing by H * W like plain GAP does.

    Args:
        feature_map (np.ndarray): C x H x W map.
        mask (np.ndarray): H x W weights, usually one channel of a soft part mask.

    Returns:
        np.ndarray: C-dimensional part feature.
    """
    feature_map = _check_feature_map(feature_map)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != feature_map.shape[1:]:
        raise ShapeMismatchError(
            f"Mask of shape {mask.shape} does not match the map's spatial dims "
            f"{feature_map.shape[1:]}."
        )
    return (feature_map * mask[None, :, :]).mean(axis=(1, 2))


def masked_gap_backward(
    feature_map: np.ndarray, mask: np.ndarray, grad: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of `masked_gap` with respect to the feature map and to the mask.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (d feature_map, d mask).
    """
    _, height, width = feature_map.shape
    grad = np.asarray(grad, dtype=np.float64) / (height * width)
    grad_map = mask[None, :, :] * grad[:, None, None]
    grad_mask = np.einsum("chw,c->hw", feature_map, grad)
    return grad_map, grad_mask


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    """Scales `vector` to unit Euclidean norm.

    A zero vector is an error rather than something we quietly add an epsilon to:
    it almost always means a part mask wiped out the feature upstream.
    """
    vector = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ZeroVectorError("Cannot l2-normalise a zero vector.")
    return vector / norm


def l2_normalize_backward(vector: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient of `l2_normalize` at `vector` for an upstream gradient on the output."""
    vector = np.asarray(vector, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ZeroVectorError("Cannot differentiate the normalisation of a zero vector.")
    unit = vector / norm
    return (grad - unit * np.dot(unit, grad)) / norm


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along `axis`."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exponentials = np.exp(shifted)
    return exponentials / np.sum(exponentials, axis=axis, keepdims=True)


def softmax_backward(probabilities: np.ndarray, grad: np.ndarray, axis: int = -1) -> np.ndarray:
    """Maps a gradient on softmax outputs to a gradient on its logits."""
    inner = np.sum(probabilities * grad, axis=axis, keepdims=True)
    return probabilities * (grad - inner)


@dataclass(frozen=True)
class PartClassifierParams:
    """Weights of the part classifier: one 3x3 convolution followed by a channel softmax.

    `kernel` is l x C x 3 x 3 and `bias` has l entries. The last of the l channels is background.
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        kernel = as_tensor(self.kernel)
        bias = as_tensor(self.bias)
        if kernel.ndim != 4 or kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise ShapeMismatchError(f"Kernel must be l x C x 3 x 3, got {kernel.shape}.")
        if bias.shape != (kernel.shape[0],):
            raise ShapeMismatchError(
                f"Bias of shape {bias.shape} does not match {kernel.shape[0]} output channels."
            )
        if kernel.shape[0] < 2:
            raise InvalidParameterError("The part classifier needs at least 2 channels.")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)

    @property
    def num_parts(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @classmethod
    def zeros(cls, num_parts: int, in_channels: int) -> "PartClassifierParams":
        return cls(
            kernel=np.zeros((num_parts, in_channels, KERNEL_SIZE, KERNEL_SIZE)),
            bias=np.zeros(num_parts),
        )


def _patches(feature_map: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 neighbourhoods as a C x 3 x 3 x H x W array."""
    channels, height, width = feature_map.shape
    padded = np.pad(feature_map, ((0, 0), (1, 1), (1, 1)))
    patches = np.empty((channels, KERNEL_SIZE, KERNEL_SIZE, height, width))
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            patches[:, dy, dx] = padded[:, dy : dy + height, dx : dx + width]
    return patches


def _check_classifier_input(params: PartClassifierParams, feature_map: np.ndarray) -> np.ndarray:
    feature_map = _check_feature_map(feature_map)
    if feature_map.shape[0] != params.in_channels:
        raise ShapeMismatchError(
            f"Part classifier expects {params.in_channels} channels, "
            f"the feature map has {feature_map.shape[0]}."
        )
    return feature_map


def part_classifier_forward(params: PartClassifierParams, feature_map: np.ndarray) -> np.ndarray:
    """Predicts a soft part mask (l x H x W) from a feature map.

    The convolution uses zero padding of 1 so the mask keeps the map's H x W.
    """
    feature_map = _check_classifier_input(params, feature_map)
    logits = np.einsum("kcij,cijhw->khw", params.kernel, _patches(feature_map))
    logits += params.bias[:, None, None]
    return softmax(logits, axis=0)


def part_classifier_backward(
    params: PartClassifierParams, feature_map: np.ndarray, upstream_grad: np.ndarray
) -> Tuple[PartClassifierParams, np.ndarray]:
    """Back-propagates a gradient on the predicted mask through softmax and convolution.

    Args:
        params (PartClassifierParams): classifier weights used in the forward pass.
        feature_map (np.ndarray): C x H x W input of the forward pass.
        upstream_grad (np.ndarray): l x H x W gradient of the loss wrt the predicted mask.

    Returns:
        Tuple[PartClassifierParams, np.ndarray]: parameter gradients (packed in the params
            container) and the gradient wrt the feature map.
    """
    feature_map = _check_classifier_input(params, feature_map)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    expected = (params.num_parts,) + feature_map.shape[1:]
    if upstream_grad.shape != expected:
        raise ShapeMismatchError(
            f"Upstream gradient of shape {upstream_grad.shape} does not match {expected}."
        )

    patches = _patches(feature_map)
    logits = np.einsum("kcij,cijhw->khw", params.kernel, patches) + params.bias[:, None, None]
    probabilities = softmax(logits, axis=0)
    grad_logits = softmax_backward(probabilities, upstream_grad, axis=0)

    grad_kernel = np.einsum("khw,cijhw->kcij", grad_logits, patches)
    grad_bias = grad_logits.sum(axis=(1, 2))

    _, height, width = feature_map.shape
    grad_patches = np.einsum("kcij,khw->cijhw", params.kernel, grad_logits)
    grad_padded = np.zeros((feature_map.shape[0], height + 2, width + 2))
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            grad_padded[:, dy : dy + height, dx : dx + width] += grad_patches[:, dy, dx]
    grad_map = grad_padded[:, 1:-1, 1:-1].copy()

    return PartClassifierParams(kernel=grad_kernel, bias=grad_bias), grad_map
