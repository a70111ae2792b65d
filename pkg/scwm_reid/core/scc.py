"""Spatial cascaded clustering: pseudo part masks from a feature map, plus the parsing losses.

The pseudo masks come from two clustering passes over one feature map:

1. a foreground split on per-pixel feature norms (3 classes with foreground correction,
   2 classes for the uncorrected variant),
2. average-linkage agglomerative clustering of the foreground pixels, on feature distances
   censored for pixel pairs that are spatially too far apart (space correction).

Part channels are ordered top to bottom and the last channel is background.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from scwm_reid.core.exceptions import (
    InvalidParameterError,
    NonPositiveProbabilityError,
    ShapeMismatchError,
)
from scwm_reid.core.logger import GLOBAL_LOGGER as logger

INF_SENTINEL = 1e30
DEFAULT_ETA_RATIO = 0.35


@dataclass(frozen=True)
class ForegroundSplit:
    """Boolean H x W masks partitioning the grid into salient, regular and background pixels."""

    salient: np.ndarray
    regular: np.ndarray
    background: np.ndarray
    used_fallback: bool = False

    @property
    def foreground(self) -> np.ndarray:
        return self.salient | self.regular

    @property
    def shape(self) -> Tuple[int, int]:
        return self.background.shape


@dataclass(frozen=True)
class CensoredDistanceMatrix:
    """Pairwise distances between foreground pixels.

    `values` is n x n; censored pairs hold exactly `INF_SENTINEL`. `coords` holds the (row, col)
    of each pixel, in row-major order of the foreground.
    """

    values: np.ndarray
    coords: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AgglomerationResult:
    """Final cluster per pixel, plus the clusters linkage alone could reach."""

    labels: np.ndarray
    components: np.ndarray
    fallback_applied: bool


def default_eta(height: int, width: int, ratio: float = DEFAULT_ETA_RATIO) -> float:
    """Spatial censoring threshold as a fraction of the image diagonal."""
    return ratio * float(np.hypot(height, width))


def pixel_norms(feature_map: np.ndarray) -> np.ndarray:
    """Euclidean norm of the feature vector at every pixel (H x W)."""
    return np.linalg.norm(np.asarray(feature_map, dtype=np.float64), axis=0)


def _segment_sse(prefix: np.ndarray, prefix_sq: np.ndarray, start, stop):
    count = stop - start
    total = prefix[stop] - prefix[start]
    return (prefix_sq[stop] - prefix_sq[start]) - total * total / count


def best_contiguous_partition(sorted_values: np.ndarray, num_classes: int) -> Tuple[int, ...]:
    """Optimal 1-D k-means on sorted data, for 2 or 3 classes.

    In one dimension every k-means optimum is a contiguous run of the sorted values, so the
    optimum is found by scanning split points. Split points are only placed between distinct
    values. The result is a fixed point of Lloyd's iterations.

    Returns:
        Tuple[int, ...]: the `num_classes - 1` split indices into `sorted_values`.
    """
    values = np.asarray(sorted_values, dtype=np.float64)
    values = values - values.mean()
    n = values.size
    prefix = np.concatenate([[0.0], np.cumsum(values)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(values * values)])
    candidates = np.flatnonzero(values[1:] > values[:-1]) + 1
    if candidates.size < num_classes - 1:
        raise InvalidParameterError(
            f"{num_classes} classes need at least {num_classes} distinct values."
        )

    if num_classes == 2:
        costs = _segment_sse(prefix, prefix_sq, 0, candidates) + _segment_sse(
            prefix, prefix_sq, candidates, n
        )
        return (int(candidates[np.argmin(costs)]),)

    if num_classes == 3:
        first = candidates[:, None]
        second = candidates[None, :]
        valid = first < second
        safe_second = np.where(valid, second, n)
        with np.errstate(divide="ignore", invalid="ignore"):
            costs = (
                _segment_sse(prefix, prefix_sq, 0, first)
                + _segment_sse(prefix, prefix_sq, first, safe_second)
                + _segment_sse(prefix, prefix_sq, safe_second, n)
            )
        costs = np.where(valid, costs, np.inf)
        row, col = divmod(int(np.argmin(costs)), candidates.size)
        return int(candidates[row]), int(candidates[col])

    raise InvalidParameterError(f"Only 2 or 3 norm classes are supported, got {num_classes}.")


def _quantile_fallback(norms: np.ndarray, num_classes: int) -> np.ndarray:
    """Class per pixel (0 = highest) from the descending-norm ranking cut in equal thirds."""
    n = norms.size
    ranking = np.lexsort((np.arange(n), -norms))
    classes = np.empty(n, dtype=int)
    cuts = [n * i // num_classes for i in range(num_classes + 1)]
    for cls in range(num_classes):
        classes[ranking[cuts[cls] : cuts[cls + 1]]] = cls
    return classes


def foreground_split(
    feature_map: np.ndarray, foreground_correction: bool = True
) -> ForegroundSplit:
    """Splits the pixels of a feature map by the magnitude of their feature vectors.

    With foreground correction the norms are clustered into three classes (salient foreground,
    regular foreground, background) so that a few very strong responses cannot drag weaker
    foreground into the background class. Without it a two-class split is used and `regular`
    stays empty.

    Args:
        feature_map (np.ndarray): C x H x W map.
        foreground_correction (bool, optional): three classes when True. Defaults to True.

    Returns:
        ForegroundSplit: the three pixel sets as boolean H x W masks.
    """
    norms_2d = pixel_norms(feature_map)
    norms = norms_2d.ravel()
    num_classes = 3 if foreground_correction else 2
    if norms.size < num_classes:
        raise InvalidParameterError(
            f"A {num_classes}-class split needs at least {num_classes} pixels, got {norms.size}."
        )

    used_fallback = np.unique(norms).size < num_classes
    if used_fallback:
        logger.warning(
            f"Fewer than {num_classes} distinct pixel norms, splitting by norm ranking instead."
        )
        # 0 is the highest class in the fallback ranking
        classes = num_classes - 1 - _quantile_fallback(norms, num_classes)
    else:
        order = np.argsort(norms, kind="stable")
        splits = best_contiguous_partition(norms[order], num_classes)
        sorted_classes = np.searchsorted(np.asarray(splits), np.arange(norms.size), side="right")
        classes = np.empty(norms.size, dtype=int)
        classes[order] = sorted_classes

    # classes now count upwards from background (0) to the strongest responses
    classes = classes.reshape(norms_2d.shape)
    background = classes == 0
    if foreground_correction:
        regular = classes == 1
        salient = classes == 2
    else:
        regular = np.zeros_like(background)
        salient = classes == 1
    return ForegroundSplit(
        salient=salient, regular=regular, background=background, used_fallback=used_fallback
    )


def _pairwise_euclidean(points: np.ndarray) -> np.ndarray:
    differences = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(differences * differences, axis=-1))


def censored_distance(
    feature_map: np.ndarray, foreground: np.ndarray, eta: float
) -> CensoredDistanceMatrix:
    """Feature distances between foreground pixels, censored where pixels are `eta` apart or more.

    Args:
        feature_map (np.ndarray): C x H x W map.
        foreground (np.ndarray): H x W boolean mask of the pixels to cluster.
        eta (float): spatial threshold in pixels. `np.inf` disables censoring.

    Returns:
        CensoredDistanceMatrix: Euclidean feature distances, or `INF_SENTINEL` for pairs whose
            (row, col) distance is at least `eta`.
    """
    if not eta > 0:
        raise InvalidParameterError(f"eta must be positive, got {eta}.")
    feature_map = np.asarray(feature_map, dtype=np.float64)
    foreground = np.asarray(foreground, dtype=bool)
    if foreground.shape != feature_map.shape[1:]:
        raise ShapeMismatchError("Foreground mask does not match the feature map.")
    rows, cols = np.nonzero(foreground)
    if rows.size == 0:
        raise InvalidParameterError("Cannot compute distances over an empty foreground.")

    features = feature_map[:, rows, cols].T
    coords = np.stack([rows, cols], axis=1).astype(np.float64)
    feature_distance = _pairwise_euclidean(features)
    spatial_distance = _pairwise_euclidean(coords)
    values = np.where(spatial_distance < eta, feature_distance, INF_SENTINEL)
    return CensoredDistanceMatrix(values=values, coords=coords)


def _relabel_in_order(labels: np.ndarray) -> np.ndarray:
    _, first_seen, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first_seen))
    return rank[inverse]


def agglomerate(distances: CensoredDistanceMatrix, num_clusters: int) -> AgglomerationResult:
    """Average-linkage agglomerative clustering that refuses to merge across censored pairs.

    Linkage between two clusters is the mean of their finite cross distances; a merge whose
    cross pairs are all censored is forbidden. Merging stops at `num_clusters` clusters or when
    only forbidden merges remain. In the latter case the `num_clusters` largest clusters are kept
    and every other cluster joins the kept cluster with the nearest spatial centroid, so callers
    always get exactly `num_clusters` labels.

    Ties between equal linkages go to the pair with the smallest member indices.

    Args:
        distances (CensoredDistanceMatrix): n x n matrix (with pixel coords for the fallback).
        num_clusters (int): requested number of clusters, 1 <= num_clusters <= n.

    Returns:
        AgglomerationResult: labels in 0..num_clusters-1 and the pre-fallback components.
    """
    values = np.asarray(distances.values, dtype=np.float64)
    n = values.shape[0]
    if n == 0:
        raise InvalidParameterError("Cannot cluster zero points.")
    if not 1 <= num_clusters <= n:
        raise InvalidParameterError(f"num_clusters must be in [1, {n}], got {num_clusters}.")

    finite = values < INF_SENTINEL
    sums = np.where(finite, values, 0.0)
    counts = finite.astype(np.float64)
    active = np.ones(n, dtype=bool)
    labels = np.arange(n)
    num_active = n

    while num_active > num_clusters:
        index = np.flatnonzero(active)
        block = np.ix_(index, index)
        block_counts = counts[block]
        linkage = np.full(block_counts.shape, np.inf)
        np.divide(sums[block], block_counts, out=linkage, where=block_counts > 0)
        np.fill_diagonal(linkage, np.inf)
        best = int(np.argmin(linkage))
        if not np.isfinite(linkage.flat[best]):
            break
        row, col = divmod(best, index.size)
        keep, absorbed = index[row], index[col]

        sums[keep, :] += sums[absorbed, :]
        sums[:, keep] = sums[keep, :]
        counts[keep, :] += counts[absorbed, :]
        counts[:, keep] = counts[keep, :]
        labels[labels == absorbed] = keep
        active[absorbed] = False
        num_active -= 1

    components = _relabel_in_order(labels)
    if num_active == num_clusters:
        return AgglomerationResult(labels=components, components=components, fallback_applied=False)

    logger.warning(
        f"Only forbidden merges left at {num_active} clusters, "
        f"folding small clusters into the {num_clusters} largest."
    )
    coords = distances.coords
    if coords is None:
        coords = np.arange(n, dtype=np.float64)[:, None]
    num_components = int(components.max()) + 1
    sizes = np.bincount(components, minlength=num_components)
    centroids = np.stack([coords[components == c].mean(axis=0) for c in range(num_components)])
    kept = sorted(sorted(range(num_components), key=lambda c: (-sizes[c], c))[:num_clusters])

    final = np.empty(num_components, dtype=int)
    for new_label, component in enumerate(kept):
        final[component] = new_label
    for component in range(num_components):
        if component in kept:
            continue
        gaps = [np.linalg.norm(centroids[component] - centroids[k]) for k in kept]
        final[component] = int(np.argmin(gaps))
    return AgglomerationResult(
        labels=final[components], components=components, fallback_applied=True
    )


def build_masks(split: ForegroundSplit, assignment: np.ndarray, num_parts: int) -> np.ndarray:
    """Turns a cluster id per foreground pixel into a one-hot l x H x W pseudo mask.

    Foreground clusters are ordered by the mean row of their pixels, topmost first, and become
    channels 0..l-2. Channel l-1 holds the background pixels.

    Args:
        split (ForegroundSplit): the foreground split the assignment refers to.
        assignment (np.ndarray): one cluster id per foreground pixel, row-major order.
        num_parts (int): l, number of channels including background.

    Returns:
        np.ndarray: l x H x W one-hot float mask.
    """
    if num_parts < 2:
        raise InvalidParameterError("Masks need at least one part channel and background.")
    height, width = split.shape
    rows, cols = np.nonzero(split.foreground)
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != rows.shape:
        raise ShapeMismatchError(
            f"{rows.size} foreground pixels but {assignment.size} assignments were given."
        )

    masks = np.zeros((num_parts, height, width))
    masks[num_parts - 1][split.background] = 1.0
    if rows.size == 0:
        return masks

    clusters = np.unique(assignment)
    if clusters.size > num_parts - 1:
        raise InvalidParameterError(
            f"{clusters.size} foreground clusters do not fit in {num_parts - 1} part channels."
        )
    heights = {int(c): rows[assignment == c].mean() for c in clusters}
    ordered: List[int] = sorted(heights, key=lambda c: (heights[c], c))
    for channel, cluster in enumerate(ordered):
        members = assignment == cluster
        masks[channel, rows[members], cols[members]] = 1.0
    return masks


def parse_feature_map(
    feature_map: np.ndarray,
    num_parts: int,
    eta: float,
    foreground_correction: bool = True,
    space_correction: bool = True,
) -> np.ndarray:
    """Runs the full cascaded clustering on one feature map and returns its hard pseudo mask."""
    split = foreground_split(feature_map, foreground_correction=foreground_correction)
    num_foreground = int(split.foreground.sum())
    if num_foreground == 0:
        return build_masks(split, np.zeros(0, dtype=int), num_parts)

    threshold = eta if space_correction else np.inf
    distances = censored_distance(feature_map, split.foreground, threshold)
    result = agglomerate(distances, min(num_parts - 1, num_foreground))
    return build_masks(split, result.labels, num_parts)


def smooth_masks(previous: np.ndarray, current: np.ndarray, gamma: float) -> np.ndarray:
    """Momentum smoothing of pseudo masks: gamma * previous + (1 - gamma) * current."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"gamma must be in [0, 1], got {gamma}.")
    previous = np.asarray(previous, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if previous.shape != current.shape:
        raise ShapeMismatchError(f"Cannot smooth {previous.shape} masks with {current.shape}.")
    return gamma * previous + (1.0 - gamma) * current


def parsing_loss(smoothed: np.ndarray, predicted: np.ndarray) -> Tuple[float, np.ndarray]:
    """Cross-entropy of predicted masks against smoothed pseudo masks, averaged per pixel.

    Returns:
        Tuple[float, np.ndarray]: loss value and its gradient wrt `predicted`.
    """
    smoothed = np.asarray(smoothed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if smoothed.shape != predicted.shape:
        raise ShapeMismatchError(f"Pseudo mask {smoothed.shape} vs prediction {predicted.shape}.")
    if np.any(predicted <= 0.0):
        raise NonPositiveProbabilityError("Predicted masks must be strictly positive.")
    num_pixels = predicted.shape[1] * predicted.shape[2]
    loss = -np.sum(smoothed * np.log(predicted)) / num_pixels
    grad = -smoothed / predicted / num_pixels
    return float(loss), grad


def diversity_loss(predicted: np.ndarray) -> Tuple[float, np.ndarray]:
    """Pairwise overlap of predicted part masks, summed over pixels.

    loss = 2 / (l (l - 1)) * sum_{i<j} sum_{pixels} P_i * P_j

    Returns:
        Tuple[float, np.ndarray]: loss value and its gradient wrt `predicted`.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    num_parts = predicted.shape[0]
    if num_parts < 2:
        raise InvalidParameterError("The diversity loss needs at least 2 masks.")
    scale = 2.0 / (num_parts * (num_parts - 1))
    channel_sum = predicted.sum(axis=0)
    pair_sum = 0.5 * np.sum(channel_sum * channel_sum - np.sum(predicted * predicted, axis=0))
    grad = scale * (channel_sum[None, :, :] - predicted)
    return float(scale * pair_sum), grad


def scc_loss(smoothed: np.ndarray, predicted: np.ndarray) -> Tuple[float, np.ndarray]:
    """Parsing loss plus diversity loss, with the summed gradient wrt `predicted`."""
    parsing_value, parsing_grad = parsing_loss(smoothed, predicted)
    diversity_value, diversity_grad = diversity_loss(predicted)
    return parsing_value + diversity_value, parsing_grad + diversity_grad
