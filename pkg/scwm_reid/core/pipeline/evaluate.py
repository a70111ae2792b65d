"""Evaluation: clustering quality, part-mask quality and toy retrieval, each against a fixed
horizontal-stripe baseline where it applies."""
from dataclasses import dataclass, field
from itertools import permutations
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from sklearn.metrics import normalized_mutual_info_score
from sklearn.metrics.cluster import pair_confusion_matrix

from scwm_reid.core.config.config import PipelineConfig
from scwm_reid.core.exceptions import DegenerateSplitError, ShapeMismatchError
from scwm_reid.core.id_clustering import OUTLIER
from scwm_reid.core.numerics import masked_gap
from scwm_reid.core.pipeline.model import FeatureBatch, ModelParams, extract_features
from scwm_reid.core.pipeline.stages import pseudo_labels
from scwm_reid.core.pipeline.synthetic import SyntheticDataset, stripe_masks


def outliers_as_singletons(labels: np.ndarray) -> np.ndarray:
    """Gives each outlier its own label so that it counts as a one-sample cluster."""
    labels = np.array(labels, dtype=int, copy=True)
    outliers = np.flatnonzero(labels == OUTLIER)
    start = labels.max() + 1 if labels.size else 0
    labels[outliers] = start + np.arange(outliers.size)
    return labels


def pairwise_f_score(true_labels: np.ndarray, predicted_labels: np.ndarray) -> float:
    """F-score over sample pairs: a pair is positive when both samples share a cluster."""
    matrix = pair_confusion_matrix(true_labels, predicted_labels)
    true_positive, false_positive = matrix[1, 1], matrix[0, 1]
    false_negative = matrix[1, 0]
    if true_positive == 0:
        return 1.0 if false_positive == 0 and false_negative == 0 else 0.0
    precision = true_positive / (true_positive + false_positive)
    recall = true_positive / (true_positive + false_negative)
    return float(2 * precision * recall / (precision + recall))


def clustering_metrics(predicted_labels: np.ndarray, true_labels: np.ndarray) -> Dict[str, Any]:
    """NMI and pairwise F-score against ground truth, with outliers as singleton clusters."""
    predicted_labels = np.asarray(predicted_labels, dtype=int)
    predicted = outliers_as_singletons(predicted_labels)
    true_labels = np.asarray(true_labels, dtype=int)
    return {
        "nmi": float(normalized_mutual_info_score(true_labels, predicted)),
        "pairwise_f": pairwise_f_score(true_labels, predicted),
        "num_clusters": int(np.unique(predicted_labels[predicted_labels != OUTLIER]).size),
        "outliers": int(np.sum(predicted_labels == OUTLIER)),
    }


def _hard_channels(masks: np.ndarray) -> np.ndarray:
    """N x l x H x W soft or hard masks to N x l x (H*W) one-hot booleans via argmax."""
    winners = masks.argmax(axis=1)
    channels = np.arange(masks.shape[1])[None, :, None, None]
    return (winners[:, None] == channels).reshape(masks.shape[0], masks.shape[1], -1)


def mask_iou(
    predicted_masks: np.ndarray, gt_masks: np.ndarray
) -> Tuple[float, List[Tuple[int, int]]]:
    """Mean IoU of argmax part masks against ground truth under the best channel matching.

    The IoU of every (predicted channel, ground-truth channel) pair is averaged over samples, then
    every one-to-one matching is tried. Unmatched channels count as zero IoU.

    Returns:
        Tuple[float, List[Tuple[int, int]]]: mean IoU and the matched (predicted, gt) pairs.
    """
    predicted_masks = np.asarray(predicted_masks, dtype=np.float64)
    gt_masks = np.asarray(gt_masks, dtype=np.float64)
    if (
        predicted_masks.shape[0] != gt_masks.shape[0]
        or predicted_masks.shape[2:] != gt_masks.shape[2:]
    ):
        raise ShapeMismatchError("Predicted and ground-truth masks must cover the same grids.")
    predicted = _hard_channels(predicted_masks).astype(np.float64)
    truth = _hard_channels(gt_masks).astype(np.float64)

    intersection = np.einsum("nap,nbp->nab", predicted, truth)
    union = predicted.sum(axis=2)[:, :, None] + truth.sum(axis=2)[:, None, :] - intersection
    iou = np.where(union > 0, intersection / np.maximum(union, 1.0), 1.0).mean(axis=0)

    num_predicted, num_truth = iou.shape
    best_score, best_pairs = -1.0, []
    if num_predicted <= num_truth:
        for assignment in permutations(range(num_truth), num_predicted):
            score = sum(iou[a, b] for a, b in enumerate(assignment))
            if score > best_score:
                best_score, best_pairs = score, list(enumerate(assignment))
    else:
        for assignment in permutations(range(num_predicted), num_truth):
            score = sum(iou[a, b] for b, a in enumerate(assignment))
            if score > best_score:
                best_score, best_pairs = score, [(a, b) for b, a in enumerate(assignment)]
    return float(best_score / max(num_predicted, num_truth)), best_pairs


def mask_agreement(predicted_masks: np.ndarray, target_masks: np.ndarray) -> float:
    """Fraction of pixels where the predicted and the target masks pick the same channel."""
    predicted_masks = np.asarray(predicted_masks)
    target_masks = np.asarray(target_masks)
    if predicted_masks.shape != target_masks.shape:
        raise ShapeMismatchError("Mask agreement needs masks of identical shape.")
    return float(np.mean(predicted_masks.argmax(axis=1) == target_masks.argmax(axis=1)))


def average_precision(matches: np.ndarray) -> float:
    """AP of one ranked list of booleans (True where the gallery item matches the query)."""
    matches = np.asarray(matches, dtype=bool)
    hits = np.flatnonzero(matches)
    if hits.size == 0:
        raise DegenerateSplitError("Average precision is undefined without a single match.")
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


def query_gallery_split(
    identities: np.ndarray, queries_per_identity: int
) -> Tuple[np.ndarray, np.ndarray]:
    """The first `queries_per_identity` samples of each identity are queries, the rest gallery."""
    identities = np.asarray(identities)
    queries: List[int] = []
    for identity in np.unique(identities):
        members = np.flatnonzero(identities == identity)
        if members.size <= queries_per_identity:
            raise DegenerateSplitError(
                f"Identity {identity} has {members.size} samples, nothing is left for the gallery."
            )
        queries.extend(members[:queries_per_identity].tolist())
    query_index = np.array(sorted(queries), dtype=int)
    gallery_index = np.setdiff1d(np.arange(identities.size), query_index)
    return query_index, gallery_index


def retrieval_metrics(
    descriptors: np.ndarray,
    identities: np.ndarray,
    cameras: np.ndarray,
    queries_per_identity: int = 2,
    cross_camera_only: bool = False,
) -> Dict[str, float]:
    """mAP and Rank-1 of cosine-similarity retrieval over a query/gallery split.

    With `cross_camera_only` the gallery samples of the query identity seen by the query camera
    are ignored for that query.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    identities = np.asarray(identities)
    cameras = np.asarray(cameras)
    query_index, gallery_index = query_gallery_split(identities, queries_per_identity)

    precisions, rank1 = [], []
    for query in query_index:
        similarity = descriptors[gallery_index] @ descriptors[query]
        order = gallery_index[np.argsort(-similarity, kind="stable")]
        if cross_camera_only:
            same_view = (identities[order] == identities[query]) & (
                cameras[order] == cameras[query]
            )
            order = order[~same_view]
        matches = identities[order] == identities[query]
        if not matches.any():
            continue
        precisions.append(average_precision(matches))
        rank1.append(float(matches[0]))
    if not precisions:
        raise DegenerateSplitError("No query has a matching gallery sample.")
    return {"map": float(np.mean(precisions)), "rank1": float(np.mean(rank1))}


def part_descriptors(global_features: np.ndarray, part_features: np.ndarray) -> np.ndarray:
    """Concatenated global and part features, l2-normalised per sample."""
    stacked = np.concatenate(
        [global_features, part_features.reshape(part_features.shape[0], -1)], axis=1
    )
    norms = np.linalg.norm(stacked, axis=1, keepdims=True)
    return stacked / np.where(norms > 0, norms, 1.0)


def stripe_features(feature_maps: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Part features pooled with the same fixed masks for every sample."""
    features = np.stack(
        [[masked_gap(feature_map, mask) for mask in masks] for feature_map in feature_maps]
    )
    norms = np.linalg.norm(features, axis=2, keepdims=True)
    return features / np.where(norms > 0, norms, 1.0)


@dataclass
class EvaluationReport:
    clustering: Dict[str, Any]
    parsing: Dict[str, Any]
    retrieval: Dict[str, Any]
    extras: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        report = {
            "clustering": self.clustering,
            "parsing": self.parsing,
            "retrieval": self.retrieval,
        }
        report.update(self.extras)
        return report


def evaluate(
    dataset: SyntheticDataset,
    params: ModelParams,
    config: PipelineConfig,
    labels: Optional[np.ndarray] = None,
    features: Optional[FeatureBatch] = None,
) -> EvaluationReport:
    """Metrics of a model on a dataset, next to a fixed-stripe baseline.

    Args:
        dataset (SyntheticDataset): samples with ground-truth identities and part masks.
        params (ModelParams): model to evaluate.
        config (PipelineConfig): pipeline settings.
        labels (Optional[np.ndarray]): pseudo labels to score. Clustered afresh when missing.
        features (Optional[FeatureBatch]): precomputed model outputs on `dataset`.
    """
    features = features or extract_features(params, dataset.inputs)
    if labels is None:
        labels = pseudo_labels(features.global_features, config)

    height, width = dataset.inputs.shape[2:]
    stripes = stripe_masks(params.num_parts, height, width)
    learned_iou, matching = mask_iou(features.masks, dataset.gt_masks)
    stripe_iou, _ = mask_iou(np.broadcast_to(stripes, features.masks.shape), dataset.gt_masks)

    settings = config.evaluation
    split = dict(
        identities=dataset.identities,
        cameras=dataset.cameras,
        queries_per_identity=settings.queries_per_identity,
        cross_camera_only=settings.cross_camera_only,
    )
    learned = retrieval_metrics(
        part_descriptors(features.global_features, features.part_features), **split
    )
    stripe = retrieval_metrics(
        part_descriptors(
            features.global_features, stripe_features(features.feature_maps, stripes)
        ),
        **split,
    )
    global_only = retrieval_metrics(features.global_features, **split)

    return EvaluationReport(
        clustering=clustering_metrics(labels, dataset.identities),
        parsing={
            "mask_iou": learned_iou,
            "stripe_mask_iou": stripe_iou,
            "matching": [[int(a), int(b)] for a, b in matching],
        },
        retrieval={
            "map": learned["map"],
            "rank1": learned["rank1"],
            "stripe_map": stripe["map"],
            "stripe_rank1": stripe["rank1"],
            "global_map": global_only["map"],
            "global_rank1": global_only["rank1"],
        },
    )
