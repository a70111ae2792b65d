"""The trainable model: toy extractor, part classifier and the global and part heads.

`forward_sample` computes the feature map F, the predicted part mask P = G(F), the global
feature GAP(F) and the part features GAP(P_k * F), all l2-normalised, plus head predictions.
`backward_sample` pushes gradients on those outputs back to every parameter.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from scwm_reid.core.classification import LinearHeadParams, head_backward, head_forward
from scwm_reid.core.config.config import PipelineConfig
from scwm_reid.core.exceptions import ShapeMismatchError
from scwm_reid.core.numerics import (
    PartClassifierParams,
    gap,
    gap_backward,
    l2_normalize,
    l2_normalize_backward,
    masked_gap,
    masked_gap_backward,
    part_classifier_backward,
    part_classifier_forward,
)
from scwm_reid.core.pipeline.extractor import (
    ToyExtractorParams,
    extractor_backward,
    extractor_forward,
)
from scwm_reid.core.weighted_memory import MemoryBank


@dataclass(frozen=True)
class ModelParams:
    extractor: ToyExtractorParams
    classifier: PartClassifierParams
    global_head: Optional[LinearHeadParams] = None
    part_heads: Tuple[LinearHeadParams, ...] = ()

    @property
    def num_parts(self) -> int:
        return self.classifier.num_parts

    @property
    def has_heads(self) -> bool:
        return self.global_head is not None

    def arrays(self) -> Dict[str, np.ndarray]:
        """Every parameter array by a stable dotted name, in a fixed order."""
        arrays = {
            "extractor.weight": self.extractor.weight,
            "extractor.bias": self.extractor.bias,
            "classifier.kernel": self.classifier.kernel,
            "classifier.bias": self.classifier.bias,
        }
        if self.global_head is not None:
            arrays["global_head.weight"] = self.global_head.weight
            arrays["global_head.bias"] = self.global_head.bias
        for k, head in enumerate(self.part_heads):
            arrays[f"part_head_{k + 1}.weight"] = head.weight
            arrays[f"part_head_{k + 1}.bias"] = head.bias
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        global_head = None
        if "global_head.weight" in arrays:
            global_head = LinearHeadParams(
                weight=arrays["global_head.weight"], bias=arrays["global_head.bias"]
            )
        part_heads = []
        k = 1
        while f"part_head_{k}.weight" in arrays:
            part_heads.append(
                LinearHeadParams(
                    weight=arrays[f"part_head_{k}.weight"], bias=arrays[f"part_head_{k}.bias"]
                )
            )
            k += 1
        return cls(
            extractor=ToyExtractorParams(
                weight=arrays["extractor.weight"], bias=arrays["extractor.bias"]
            ),
            classifier=PartClassifierParams(
                kernel=arrays["classifier.kernel"], bias=arrays["classifier.bias"]
            ),
            global_head=global_head,
            part_heads=tuple(part_heads),
        )


def init_model(config: PipelineConfig, rng: np.random.Generator) -> ModelParams:
    """Random extractor, near-uniform part classifier and no heads until the first clustering."""
    feature_dim = config.training.feature_dim
    extractor = ToyExtractorParams.random(
        config.synthetic.in_channels, feature_dim, rng, scale=config.training.extractor_init_scale
    )
    classifier = PartClassifierParams.zeros(config.parsing.num_parts, feature_dim)
    kernel = config.training.classifier_init_scale * rng.normal(size=classifier.kernel.shape)
    return ModelParams(
        extractor=extractor, classifier=PartClassifierParams(kernel=kernel, bias=classifier.bias)
    )


def reset_heads(params: ModelParams, bank: MemoryBank, scale: float) -> ModelParams:
    """New N_C-way heads whose weights are the memory centroids times `scale`, bias zero."""
    global_head = LinearHeadParams.from_centroids(bank.centroids[0], scale)
    part_heads = tuple(
        LinearHeadParams.from_centroids(centroids, scale) for centroids in bank.centroids[1:]
    )
    return ModelParams(
        extractor=params.extractor,
        classifier=params.classifier,
        global_head=global_head,
        part_heads=part_heads,
    )


def sgd_step(
    params: ModelParams, grads: Dict[str, np.ndarray], learning_rate: float
) -> ModelParams:
    """Plain gradient descent on every array that has a gradient."""
    arrays = params.arrays()
    missing = set(grads) - set(arrays)
    if missing:
        raise ShapeMismatchError(f"Gradients for unknown parameters: {sorted(missing)}.")
    updated = {
        name: value - learning_rate * grads[name] if name in grads else value
        for name, value in arrays.items()
    }
    return ModelParams.from_arrays(updated)


@dataclass
class SampleForward:
    """Everything one forward pass produces for a single input."""

    image: np.ndarray
    feature_map: np.ndarray
    mask: np.ndarray
    global_raw: np.ndarray
    global_feature: np.ndarray
    part_raw: np.ndarray
    part_features: np.ndarray
    part_valid: np.ndarray
    global_prediction: Optional[np.ndarray] = None
    part_predictions: Optional[np.ndarray] = None


@dataclass
class SampleGrads:
    """Gradients of the objective wrt the outputs of one forward pass. Missing entries are zero."""

    mask: Optional[np.ndarray] = None
    global_feature: Optional[np.ndarray] = None
    part_features: Optional[np.ndarray] = None
    global_logits: Optional[np.ndarray] = None
    part_logits: Optional[np.ndarray] = None


def forward_sample(params: ModelParams, image: np.ndarray) -> SampleForward:
    feature_map = extractor_forward(params.extractor, image)
    mask = part_classifier_forward(params.classifier, feature_map)
    global_raw = gap(feature_map)
    part_raw = np.stack([masked_gap(feature_map, mask[k]) for k in range(params.num_parts)])
    part_valid = np.linalg.norm(part_raw, axis=1) > 0.0
    part_features = np.zeros_like(part_raw)
    for k in np.flatnonzero(part_valid):
        part_features[k] = l2_normalize(part_raw[k])

    forward = SampleForward(
        image=np.asarray(image, dtype=np.float64),
        feature_map=feature_map,
        mask=mask,
        global_raw=global_raw,
        global_feature=l2_normalize(global_raw),
        part_raw=part_raw,
        part_features=part_features,
        part_valid=part_valid,
    )
    if params.has_heads:
        forward.global_prediction = head_forward(params.global_head, forward.global_feature)
        forward.part_predictions = np.stack(
            [head_forward(head, part_features[k]) for k, head in enumerate(params.part_heads)]
        )
    return forward


def backward_sample(
    params: ModelParams, forward: SampleForward, grads: SampleGrads
) -> Dict[str, np.ndarray]:
    """Back-propagates output gradients of one sample to named parameter gradients."""
    num_parts = params.num_parts
    grad_global = _or_zeros(grads.global_feature, forward.global_feature.shape)
    grad_parts = _or_zeros(grads.part_features, forward.part_features.shape)
    grad_mask = _or_zeros(grads.mask, forward.mask.shape)
    result: Dict[str, np.ndarray] = {}

    if params.has_heads and grads.global_logits is not None:
        head_grads, grad_feature = head_backward(
            params.global_head, forward.global_feature, grads.global_logits
        )
        result["global_head.weight"] = head_grads.weight
        result["global_head.bias"] = head_grads.bias
        grad_global = grad_global + grad_feature
    if params.has_heads and grads.part_logits is not None:
        for k, head in enumerate(params.part_heads):
            head_grads, grad_feature = head_backward(
                head, forward.part_features[k], grads.part_logits[k]
            )
            result[f"part_head_{k + 1}.weight"] = head_grads.weight
            result[f"part_head_{k + 1}.bias"] = head_grads.bias
            grad_parts[k] = grad_parts[k] + grad_feature

    grad_map = gap_backward(
        forward.feature_map.shape, l2_normalize_backward(forward.global_raw, grad_global)
    )
    for k in range(num_parts):
        if not forward.part_valid[k]:
            continue
        grad_raw = l2_normalize_backward(forward.part_raw[k], grad_parts[k])
        map_part, mask_part = masked_gap_backward(forward.feature_map, forward.mask[k], grad_raw)
        grad_map += map_part
        grad_mask[k] += mask_part

    classifier_grads, map_from_mask = part_classifier_backward(
        params.classifier, forward.feature_map, grad_mask
    )
    grad_map += map_from_mask
    extractor_grads, _ = extractor_backward(params.extractor, forward.image, grad_map)

    result["extractor.weight"] = extractor_grads.weight
    result["extractor.bias"] = extractor_grads.bias
    result["classifier.kernel"] = classifier_grads.kernel
    result["classifier.bias"] = classifier_grads.bias
    return result


def _or_zeros(value: Optional[np.ndarray], shape) -> np.ndarray:
    return np.zeros(shape) if value is None else np.array(value, dtype=np.float64, copy=True)


def accumulate(total: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    """Adds `grads` into `total` in place."""
    for name, grad in grads.items():
        total[name] = total[name] + grad if name in total else np.array(grad, copy=True)


@dataclass
class FeatureBatch:
    """Frozen-model outputs for a whole dataset."""

    global_features: np.ndarray
    part_features: np.ndarray
    part_valid: np.ndarray
    feature_maps: np.ndarray
    masks: np.ndarray


def extract_features(params: ModelParams, inputs: np.ndarray) -> FeatureBatch:
    """Runs the model on every input without touching its parameters."""
    forwards = [forward_sample(params, image) for image in inputs]
    return FeatureBatch(
        global_features=np.stack([f.global_feature for f in forwards]),
        part_features=np.stack([f.part_features for f in forwards]),
        part_valid=np.stack([f.part_valid for f in forwards]),
        feature_maps=np.stack([f.feature_map for f in forwards]),
        masks=np.stack([f.mask for f in forwards]),
    )
