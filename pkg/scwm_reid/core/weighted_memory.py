"""Weighted memory: difficulty scores, batch weights, momentum centroid updates and the
contrastive losses computed against the memory.

Feature spaces are indexed 0 for the global feature and 1..l for the part features. Batches
carry global features as B x D and part features as B x l x D, all l2-normalised.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from scwm_reid.core.exceptions import (
    ConfigError,
    InvalidParameterError,
    ShapeMismatchError,
    UnknownLabelError,
)
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.numerics import softmax


class UpdateStrategy(str, Enum):
    """How batch samples are weighted when they update their cluster centroid."""

    AVERAGE = "average"
    HARDEST = "hardest"
    WEIGHTED = "weighted"


@dataclass
class MemoryBank:
    """Unit-norm cluster centroids for the global space and each part space.

    `centroids[0]` is the global memory, `centroids[k]` the memory of part k (1-based);
    each is N_C x D. The bank is single-writer: `memory_update` returns an updated copy.
    """

    centroids: List[np.ndarray]
    momentum: float = 0.2
    temperature: float = 0.05
    strategy: UpdateStrategy = UpdateStrategy.WEIGHTED

    def __post_init__(self) -> None:
        self.centroids = [np.asarray(c, dtype=np.float64) for c in self.centroids]
        if len(self.centroids) < 2:
            raise InvalidParameterError("A memory bank needs a global space and at least 1 part.")
        shape = self.centroids[0].shape
        if len(shape) != 2 or any(c.shape != shape for c in self.centroids):
            raise ShapeMismatchError("Every feature space must hold N_C x D centroids.")
        if not 0.0 <= self.momentum <= 1.0:
            raise InvalidParameterError(f"momentum must be in [0, 1], got {self.momentum}.")
        if not self.temperature > 0.0:
            raise InvalidParameterError(f"temperature must be positive, got {self.temperature}.")
        self.strategy = UpdateStrategy(self.strategy)

    @property
    def num_clusters(self) -> int:
        return self.centroids[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids[0].shape[1]

    @property
    def num_parts(self) -> int:
        return len(self.centroids) - 1

    def copy(self) -> "MemoryBank":
        return MemoryBank(
            centroids=[c.copy() for c in self.centroids],
            momentum=self.momentum,
            temperature=self.temperature,
            strategy=self.strategy,
        )

    def header(self) -> Dict[str, object]:
        return {
            "momentum": float(self.momentum),
            "temperature": float(self.temperature),
            "num_clusters": self.num_clusters,
            "feature_dim": self.feature_dim,
            "num_parts": self.num_parts,
            "strategy": self.strategy.value,
        }

    def check_labels(self, labels: np.ndarray) -> None:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_clusters):
            raise UnknownLabelError(
                f"Labels must be cluster ids in [0, {self.num_clusters}), got {labels.tolist()}."
            )


@dataclass(frozen=True)
class DifficultyScores:
    """kNN agreement of each part with the global feature of one sample."""

    alpha_g: float
    alpha_p: np.ndarray


@dataclass(frozen=True)
class BatchWeights:
    """Per-sample weights: `omega_g` (B,) for the global space, `omega_p` (B, l) for parts."""

    omega_g: np.ndarray
    omega_p: np.ndarray

    def for_space(self, space: int) -> np.ndarray:
        return self.omega_g if space == 0 else self.omega_p[:, space - 1]


def difficulty(global_neighbors: Sequence[int], part_neighbors: Sequence[Sequence[int]]):
    """IoU between the kNN set of the global feature and the kNN set of each part feature.

    Args:
        global_neighbors (Sequence[int]): kNN indices of the sample's global feature.
        part_neighbors (Sequence[Sequence[int]]): kNN indices of each of its l part features.

    Returns:
        DifficultyScores: alpha_p per part and alpha_g, their mean.
    """
    global_set = set(int(i) for i in global_neighbors)
    if not global_set or any(len(row) == 0 for row in part_neighbors):
        raise InvalidParameterError("Difficulty needs non-empty neighbour sets.")
    if any(len(row) != len(global_neighbors) for row in part_neighbors):
        raise ShapeMismatchError("Every neighbour list must have the same K.")
    alpha_p = np.array(
        [
            len(global_set & set(int(i) for i in row)) / len(global_set | set(int(i) for i in row))
            for row in part_neighbors
        ]
    )
    return DifficultyScores(alpha_g=float(alpha_p.mean()), alpha_p=alpha_p)


def difficulty_scores(
    global_neighbors: np.ndarray,
    part_neighbors: Sequence[np.ndarray],
    part_valid: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Difficulty of every sample of a dataset.

    Args:
        global_neighbors (np.ndarray): N x K neighbour indices in the global space.
        part_neighbors (Sequence[np.ndarray]): l arrays of N x K neighbour indices.
        part_valid (Optional[np.ndarray]): N x l mask, False for empty parts whose
            agreement is set to 0.

    Returns:
        Tuple[np.ndarray, np.ndarray]: alpha_g (N,) and alpha_p (N, l).
    """
    num_samples = len(global_neighbors)
    num_parts = len(part_neighbors)
    alpha_p = np.zeros((num_samples, num_parts))
    for i in range(num_samples):
        scores = difficulty(global_neighbors[i], [rows[i] for rows in part_neighbors])
        alpha_p[i] = scores.alpha_p
    if part_valid is not None:
        alpha_p = np.where(part_valid, alpha_p, 0.0)
    return alpha_p.mean(axis=1), alpha_p


def _normalise_column(values: np.ndarray, valid: np.ndarray, name: str) -> np.ndarray:
    total = values[valid].sum()
    if total > 0.0:
        return np.where(valid, values, 0.0) / total
    logger.warning(f"[yellow]All {name} weights are zero in this batch, using uniform weights.")
    count = max(int(valid.sum()), 1)
    return np.where(valid, 1.0 / count, 0.0)


def batch_weights(
    alpha_g: np.ndarray, alpha_p: np.ndarray, part_valid: Optional[np.ndarray] = None
) -> BatchWeights:
    """Batch-normalised weights: hard samples count more for the global memory, reliable
    parts count more for the part memories.

    omega_g = (1 - alpha_g) / sum(1 - alpha_g), omega_p = alpha_p / sum(alpha_p) per part.
    A zero denominator falls back to uniform weights.
    """
    alpha_g = np.asarray(alpha_g, dtype=np.float64)
    alpha_p = np.asarray(alpha_p, dtype=np.float64)
    if alpha_g.ndim != 1 or alpha_g.size == 0:
        raise InvalidParameterError("Batch weights need at least one sample.")
    if alpha_p.shape[0] != alpha_g.size:
        raise ShapeMismatchError("alpha_g and alpha_p disagree on the batch size.")
    if part_valid is None:
        part_valid = np.ones(alpha_p.shape, dtype=bool)

    omega_g = _normalise_column(1.0 - alpha_g, np.ones(alpha_g.size, dtype=bool), "global")
    omega_p = np.stack(
        [
            _normalise_column(alpha_p[:, k], part_valid[:, k], f"part {k + 1}")
            for k in range(alpha_p.shape[1])
        ],
        axis=1,
    )
    return BatchWeights(omega_g=omega_g, omega_p=omega_p)


def _space_features(global_features: np.ndarray, part_features: np.ndarray, space: int):
    return global_features if space == 0 else part_features[:, space - 1]


def average_weights(bank, labels, global_features, part_features, alpha_g, alpha_p, part_valid):
    """Every sample of the batch updates its centroid with weight 1 / B."""
    batch = len(labels)
    omega_p = np.where(part_valid, 1.0 / batch, 0.0)
    return BatchWeights(omega_g=np.full(batch, 1.0 / batch), omega_p=omega_p)


def hardest_weights(bank, labels, global_features, part_features, alpha_g, alpha_p, part_valid):
    """Per cluster in the batch only the sample least similar to its centroid updates it."""
    labels = np.asarray(labels)
    batch = labels.size
    omega = np.zeros((batch, 1 + bank.num_parts))
    for space in range(1 + bank.num_parts):
        features = _space_features(global_features, part_features, space)
        similarity = np.einsum("bd,bd->b", features, bank.centroids[space][labels])
        if space > 0:
            similarity = np.where(part_valid[:, space - 1], similarity, np.inf)
        for cluster in np.unique(labels):
            members = np.flatnonzero(labels == cluster)
            hardest = members[np.argmin(similarity[members])]
            if np.isfinite(similarity[hardest]):
                omega[hardest, space] = 1.0
    return BatchWeights(omega_g=omega[:, 0], omega_p=omega[:, 1:])


def difficulty_weights(bank, labels, global_features, part_features, alpha_g, alpha_p, part_valid):
    """Weights from the difficulty scores, see `batch_weights`."""
    return batch_weights(alpha_g, alpha_p, part_valid)


WeightingFunction = Callable[..., BatchWeights]

UPDATE_STRATEGIES: Dict[UpdateStrategy, WeightingFunction] = {
    UpdateStrategy.AVERAGE: average_weights,
    UpdateStrategy.HARDEST: hardest_weights,
    UpdateStrategy.WEIGHTED: difficulty_weights,
}


def update_strategy_select(strategy: str) -> WeightingFunction:
    """Returns the weighting function for an update strategy name."""
    try:
        return UPDATE_STRATEGIES[UpdateStrategy(strategy)]
    except ValueError:
        raise ConfigError(
            f"Unknown update strategy '{strategy}'. "
            f"Choose one of {[s.value for s in UpdateStrategy]}."
        )


def memory_update(
    bank: MemoryBank,
    labels: np.ndarray,
    global_features: np.ndarray,
    part_features: np.ndarray,
    weights: BatchWeights,
    momentum: Optional[float] = None,
) -> MemoryBank:
    """Weighted momentum update of the centroids, one sample at a time in batch order.

    For every sample and space: c <- m * c + (1 - m) * omega * f, then c is l2-normalised.
    Samples with a zero weight in a space leave that space untouched, and so does an update that
    cancels out to a zero vector.

    Returns:
        MemoryBank: an updated copy of `bank`.
    """
    labels = np.asarray(labels, dtype=int)
    bank.check_labels(labels)
    momentum = bank.momentum if momentum is None else momentum
    if not 0.0 <= momentum <= 1.0:
        raise InvalidParameterError(f"momentum must be in [0, 1], got {momentum}.")

    updated = bank.copy()
    for i, label in enumerate(labels):
        for space in range(1 + bank.num_parts):
            omega = weights.for_space(space)[i]
            if omega == 0.0:
                continue
            feature = _space_features(global_features, part_features, space)[i]
            centroid = updated.centroids[space][label]
            centroid = momentum * centroid + (1.0 - momentum) * omega * feature
            norm = np.linalg.norm(centroid)
            if norm == 0.0:
                logger.warning(
                    f"[yellow]Update of cluster {label} in space {space} cancels out, "
                    "keeping its previous centroid."
                )
                continue
            updated.centroids[space][label] = centroid / norm
    return updated


def _cluster_nce(
    features: np.ndarray, centroids: np.ndarray, labels: np.ndarray, temperature: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Unweighted ClusterNCE per sample and its gradient wrt the features."""
    logits = features @ centroids.T / temperature
    probabilities = softmax(logits, axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.size)
    losses = log_norm - shifted[rows, labels]
    residual = probabilities.copy()
    residual[rows, labels] -= 1.0
    return losses, residual @ centroids / temperature


def _check_temperature(temperature: float) -> None:
    if not temperature > 0.0:
        raise InvalidParameterError(f"temperature must be positive, got {temperature}.")


def wnce_loss(
    global_features: np.ndarray,
    part_features: np.ndarray,
    labels: np.ndarray,
    bank: MemoryBank,
    weights: BatchWeights,
    temperature: Optional[float] = None,
    active_global: Optional[np.ndarray] = None,
    active_parts: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Weighted ClusterNCE over the global and part memories, averaged over the batch.

    Per sample: -log(omega_g * p(c_+ | f_g)) + 1/l * sum_k -log(omega_pk * p(c_+ | f_pk)).
    The weight only adds -log(omega), so the gradient wrt the features does not depend on it.
    Inactive terms (masks `active_global`, `active_parts`) are left out.

    Returns:
        Tuple[float, np.ndarray, np.ndarray]: loss, gradient wrt global features (B x D) and
            wrt part features (B x l x D).
    """
    temperature = bank.temperature if temperature is None else temperature
    _check_temperature(temperature)
    labels = np.asarray(labels, dtype=int)
    bank.check_labels(labels)
    batch, num_parts = labels.size, bank.num_parts
    if active_global is None:
        active_global = np.ones(batch, dtype=bool)
    if active_parts is None:
        active_parts = np.ones((batch, num_parts), dtype=bool)

    def weighted_terms(space: int, active: np.ndarray):
        omega = weights.for_space(space)
        if np.any(omega[active] <= 0.0):
            raise InvalidParameterError("The weighted NCE is undefined for a zero weight.")
        features = _space_features(global_features, part_features, space)
        losses, grads = _cluster_nce(features, bank.centroids[space], labels, temperature)
        safe_omega = np.where(active, omega, 1.0)
        losses = np.where(active, losses - np.log(safe_omega), 0.0)
        return losses, grads * active[:, None]

    total = 0.0
    global_losses, grad_global = weighted_terms(0, active_global)
    total += global_losses.sum()
    grad_parts = np.zeros_like(part_features, dtype=np.float64)
    for k in range(num_parts):
        part_losses, part_grads = weighted_terms(k + 1, active_parts[:, k])
        total += part_losses.sum() / num_parts
        grad_parts[:, k] = part_grads / num_parts
    return float(total / batch), grad_global / batch, grad_parts / batch


def sep_loss(
    part_features: np.ndarray,
    own_centroids: np.ndarray,
    temperature: float,
    active: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Part separation loss of one sample: each part feature should sit closest to its own
    part centroid among the l part centroids of the sample's cluster.

    Args:
        part_features (np.ndarray): l x D part features of the sample.
        own_centroids (np.ndarray): l x D part centroids of the sample's cluster.
        temperature (float): softmax temperature.
        active (Optional[np.ndarray]): l booleans, inactive parts contribute nothing.

    Returns:
        Tuple[float, np.ndarray]: loss and gradient wrt `part_features`.
    """
    _check_temperature(temperature)
    part_features = np.asarray(part_features, dtype=np.float64)
    own_centroids = np.asarray(own_centroids, dtype=np.float64)
    if part_features.shape != own_centroids.shape:
        raise ShapeMismatchError("Part features and centroids must both be l x D.")
    num_parts = part_features.shape[0]
    if num_parts < 1:
        raise InvalidParameterError("The separation loss needs at least one part.")
    if active is None:
        active = np.ones(num_parts, dtype=bool)

    logits = part_features @ own_centroids.T / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.sum(np.diag(log_probs)[active]) / num_parts
    residual = np.exp(log_probs) - np.eye(num_parts)
    grad = (residual @ own_centroids) / temperature / num_parts
    return float(loss), grad * active[:, None]


def batch_sep_loss(
    part_features: np.ndarray,
    labels: np.ndarray,
    bank: MemoryBank,
    temperature: Optional[float] = None,
    active_parts: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """`sep_loss` averaged over a batch, using each sample's own cluster part centroids."""
    temperature = bank.temperature if temperature is None else temperature
    labels = np.asarray(labels, dtype=int)
    bank.check_labels(labels)
    batch = labels.size
    total = 0.0
    grad = np.zeros_like(part_features, dtype=np.float64)
    for i, label in enumerate(labels):
        own = np.stack([bank.centroids[k + 1][label] for k in range(bank.num_parts)])
        active = None if active_parts is None else active_parts[i]
        value, sample_grad = sep_loss(part_features[i], own, temperature, active)
        total += value
        grad[i] = sample_grad
    return total / batch, grad / batch


@dataclass
class WeightedMemoryLoss:
    """Value and feature gradients of the weighted memory objective."""

    value: float
    grad_global: np.ndarray
    grad_parts: np.ndarray
    components: Dict[str, float] = field(default_factory=dict)


def wm_loss(
    global_features: np.ndarray,
    part_features: np.ndarray,
    labels: np.ndarray,
    bank: MemoryBank,
    weights: BatchWeights,
    active_global: Optional[np.ndarray] = None,
    active_parts: Optional[np.ndarray] = None,
    use_wnce: bool = True,
    use_sep: bool = True,
) -> WeightedMemoryLoss:
    """Weighted NCE plus part separation, with summed gradients."""
    grad_global = np.zeros_like(global_features, dtype=np.float64)
    grad_parts = np.zeros_like(part_features, dtype=np.float64)
    components = {"wnce": 0.0, "sep": 0.0}
    if use_wnce:
        value, wnce_global, wnce_parts = wnce_loss(
            global_features,
            part_features,
            labels,
            bank,
            weights,
            active_global=active_global,
            active_parts=active_parts,
        )
        components["wnce"] = value
        grad_global += wnce_global
        grad_parts += wnce_parts
    if use_sep:
        value, sep_parts = batch_sep_loss(part_features, labels, bank, active_parts=active_parts)
        components["sep"] = value
        grad_parts += sep_parts
    return WeightedMemoryLoss(
        value=components["wnce"] + components["sep"],
        grad_global=grad_global,
        grad_parts=grad_parts,
        components=components,
    )
