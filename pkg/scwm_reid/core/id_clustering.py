"""Identity pseudo labels: kNN search, k-reciprocal Jaccard distance, DBSCAN and memory init.

Pseudo labels are integer arrays where clusters are numbered 0..N_C-1 and outliers hold
`OUTLIER` (-1).
"""
from typing import List, Optional, Set

import numpy as np

from scwm_reid.core.exceptions import (
    EmptyClusteringError,
    InvalidParameterError,
    ShapeMismatchError,
)
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.weighted_memory import MemoryBank, UpdateStrategy

OUTLIER = -1


def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatchError(f"Features must be N x D, got {features.shape}.")
    if features.shape[0] < 2:
        raise InvalidParameterError("Neighbour search needs at least 2 samples.")
    return features


def _neighbor_ranking(features: np.ndarray) -> np.ndarray:
    """Every other sample ordered by descending cosine similarity, ties by ascending index."""
    similarity = features @ features.T
    np.fill_diagonal(similarity, -np.inf)
    # stable sort on the negated similarity keeps lower indices first on ties
    ranking = np.argsort(-similarity, axis=1, kind="stable")
    return ranking[:, :-1]


def knn(features: np.ndarray, k: int) -> np.ndarray:
    """K nearest neighbours of every sample, self excluded.

    Args:
        features (np.ndarray): N x D unit-norm features.
        k (int): neighbours per sample, capped at N - 1.

    Returns:
        np.ndarray: N x min(k, N - 1) sample indices, most similar first.
    """
    if k <= 0:
        raise InvalidParameterError(f"K must be positive, got {k}.")
    features = _check_features(features)
    return _neighbor_ranking(features)[:, : min(k, features.shape[0] - 1)]


def _reciprocal_sets(ranking: np.ndarray, k: int) -> List[Set[int]]:
    forward = [set(row[:k].tolist()) for row in ranking]
    return [
        {i} | {j for j in forward[i] if i in forward[j]} for i in range(ranking.shape[0])
    ]


def k_reciprocal_jaccard(features: np.ndarray, k1: int = 20, k2: int = 1) -> np.ndarray:
    """Jaccard distance between expanded k-reciprocal neighbour sets.

    The k-reciprocal set of i holds i and every j that is in i's k1 nearest neighbours while i is
    in j's. It is expanded with the round(k1 / 2)-reciprocal set of each member j whenever at least
    two thirds of that smaller set already lies in the set of i. With `k2 > 1` each membership
    vector is replaced by the mean over the sample's k2 nearest neighbours (self included) and the
    distance becomes 1 - sum(min) / sum(max), which is the set Jaccard distance for `k2 == 1`.

    Args:
        features (np.ndarray): N x D unit-norm global features.
        k1 (int, optional): neighbourhood size. Defaults to 20.
        k2 (int, optional): local query expansion size. Defaults to 1 (disabled).

    Returns:
        np.ndarray: symmetric N x N distances in [0, 1] with a zero diagonal.
    """
    if k1 < 2:
        raise InvalidParameterError(f"k1 must be at least 2, got {k1}.")
    if k2 < 1:
        raise InvalidParameterError(f"k2 must be at least 1, got {k2}.")
    features = _check_features(features)
    num_samples = features.shape[0]
    ranking = _neighbor_ranking(features)

    reciprocal = _reciprocal_sets(ranking, k1)
    half = _reciprocal_sets(ranking, max(1, int(np.around(k1 / 2.0))))
    membership = np.zeros((num_samples, num_samples))
    for i in range(num_samples):
        expanded = set(reciprocal[i])
        for j in sorted(reciprocal[i]):
            candidate = half[j]
            if 3 * len(candidate & reciprocal[i]) >= 2 * len(candidate):
                expanded |= candidate
        membership[i, sorted(expanded)] = 1.0

    if k2 > 1:
        expansion = np.concatenate([np.arange(num_samples)[:, None], ranking[:, : k2 - 1]], axis=1)
        membership = membership[expansion].mean(axis=1)

    distances = np.zeros((num_samples, num_samples))
    for i in range(num_samples):
        overlap = np.minimum(membership[i], membership).sum(axis=1)
        union = np.maximum(membership[i], membership).sum(axis=1)
        distances[i] = 1.0 - overlap / union
    distances = np.clip(distances, 0.0, 1.0)
    np.fill_diagonal(distances, 0.0)
    return distances


def dbscan(distances: np.ndarray, eps: float, min_samples: int = 4) -> np.ndarray:
    """Density clustering over a precomputed distance matrix.

    A point is core when at least `min_samples` points (itself included) lie within `eps`.
    Points are scanned in ascending index order; a new cluster grows breadth-first from the first
    unvisited core point, and border points join the first cluster that reaches them.

    Returns:
        np.ndarray: pseudo labels numbered in discovery order, `OUTLIER` for noise.
    """
    if not eps > 0:
        raise InvalidParameterError(f"eps must be positive, got {eps}.")
    if min_samples < 1:
        raise InvalidParameterError(f"min_samples must be at least 1, got {min_samples}.")
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 2 or distances.shape[0] != distances.shape[1]:
        raise ShapeMismatchError(f"Distances must be a square matrix, got {distances.shape}.")

    num_samples = distances.shape[0]
    neighborhoods = [np.flatnonzero(row <= eps) for row in distances]
    is_core = np.array([len(n) >= min_samples for n in neighborhoods], dtype=bool)
    labels = np.full(num_samples, OUTLIER, dtype=int)

    cluster = 0
    for seed in range(num_samples):
        if labels[seed] != OUTLIER or not is_core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        while queue:
            point = queue.pop(0)
            if not is_core[point]:
                continue
            for neighbor in neighborhoods[point]:
                if labels[neighbor] == OUTLIER:
                    labels[neighbor] = cluster
                    queue.append(neighbor)
        cluster += 1
    logger.debug(f"DBSCAN found {cluster} clusters and {int(np.sum(labels == OUTLIER))} outliers")
    return labels


def num_clusters(labels: np.ndarray) -> int:
    """Number of clusters in a pseudo label array, checking that ids are contiguous."""
    labels = np.asarray(labels, dtype=int)
    clustered = np.unique(labels[labels != OUTLIER])
    if clustered.size and not np.array_equal(clustered, np.arange(clustered.size)):
        raise InvalidParameterError("Pseudo labels must form the contiguous range 0..N_C-1.")
    return int(clustered.size)


def init_memory(
    global_features: np.ndarray,
    part_features: np.ndarray,
    labels: np.ndarray,
    part_valid: Optional[np.ndarray] = None,
    momentum: float = 0.2,
    temperature: float = 0.05,
    strategy: UpdateStrategy = UpdateStrategy.WEIGHTED,
) -> MemoryBank:
    """Builds a memory bank whose centroids are the normalised mean member feature per space.

    Args:
        global_features (np.ndarray): N x D global features.
        part_features (np.ndarray): N x l x D part features.
        labels (np.ndarray): pseudo labels, outliers are left out.
        part_valid (Optional[np.ndarray]): N x l mask of non-empty parts. Empty parts are left
            out of their part centroid.

    Returns:
        MemoryBank: 1 + l spaces of N_C unit-norm centroids.
    """
    labels = np.asarray(labels, dtype=int)
    global_features = np.asarray(global_features, dtype=np.float64)
    part_features = np.asarray(part_features, dtype=np.float64)
    if labels.shape[0] != global_features.shape[0] or part_features.shape[0] != labels.shape[0]:
        raise ShapeMismatchError("Features and labels disagree on the number of samples.")
    count = num_clusters(labels)
    if count == 0:
        raise EmptyClusteringError("Every sample is an outlier, no centroid can be initialised.")
    num_parts = part_features.shape[1]
    if part_valid is None:
        part_valid = np.ones((labels.size, num_parts), dtype=bool)

    def centroids(features: np.ndarray, valid: np.ndarray, space: str) -> np.ndarray:
        result = np.zeros((count, features.shape[1]))
        for cluster in range(count):
            members = (labels == cluster) & valid
            mean = features[members].mean(axis=0) if members.any() else np.zeros(features.shape[1])
            norm = np.linalg.norm(mean)
            if norm == 0.0:
                logger.warning(
                    f"[yellow]Cluster {cluster} has no usable {space} feature, "
                    "its centroid starts on the first axis."
                )
                result[cluster, 0] = 1.0
            else:
                result[cluster] = mean / norm
        return result

    spaces = [centroids(global_features, np.ones(labels.size, dtype=bool), "global")]
    for k in range(num_parts):
        spaces.append(centroids(part_features[:, k], part_valid[:, k], f"part {k + 1}"))
    return MemoryBank(
        centroids=spaces, momentum=momentum, temperature=temperature, strategy=strategy
    )
