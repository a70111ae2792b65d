"""Toy trainable backbone: one affine map applied to every pixel (a 1x1 convolution)."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from scwm_reid.core.exceptions import ShapeMismatchError
from scwm_reid.core.numerics import as_tensor


@dataclass(frozen=True)
class ToyExtractorParams:
    """`weight` maps C_in input channels to C feature channels, `bias` has C entries."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = as_tensor(self.weight)
        bias = as_tensor(self.bias)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeMismatchError(
                f"Extractor weight must be C x C_in with C biases, got {weight.shape} and "
                f"{bias.shape}."
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def random(
        cls, in_channels: int, feature_dim: int, rng: np.random.Generator, scale: float = 0.5
    ) -> "ToyExtractorParams":
        weight = scale * rng.normal(size=(feature_dim, in_channels)) / np.sqrt(in_channels)
        return cls(weight=weight, bias=np.zeros(feature_dim))


def _check_input(params: ToyExtractorParams, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != params.in_channels:
        raise ShapeMismatchError(
            f"Extractor expects a {params.in_channels} x H x W input, got {image.shape}."
        )
    return image


def extractor_forward(params: ToyExtractorParams, image: np.ndarray) -> np.ndarray:
    """C_in x H x W input to C x H x W feature map."""
    image = _check_input(params, image)
    return np.einsum("oc,chw->ohw", params.weight, image) + params.bias[:, None, None]


def extractor_backward(
    params: ToyExtractorParams, image: np.ndarray, grad_map: np.ndarray
) -> Tuple[ToyExtractorParams, np.ndarray]:
    """Parameter gradients and input gradient for an upstream gradient on the feature map."""
    image = _check_input(params, image)
    grad_map = np.asarray(grad_map, dtype=np.float64)
    if grad_map.shape != (params.feature_dim,) + image.shape[1:]:
        raise ShapeMismatchError(f"Feature map gradient has the wrong shape {grad_map.shape}.")
    grads = ToyExtractorParams(
        weight=np.einsum("ohw,chw->oc", grad_map, image), bias=grad_map.sum(axis=(1, 2))
    )
    return grads, np.einsum("oc,ohw->chw", params.weight, grad_map)
