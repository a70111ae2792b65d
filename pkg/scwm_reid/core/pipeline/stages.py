"""The clustering stage and the training stage of the alternating loop."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from scwm_reid.core.classification import (
    LossTerm,
    distill_global_label,
    id_loss,
    part_agreement_weights,
    refine_part_label,
    total_loss,
)
from scwm_reid.core.config.config import LossSwitchesModel, PipelineConfig
from scwm_reid.core.exceptions import EmptyClusteringError, InvalidParameterError
from scwm_reid.core.id_clustering import (
    OUTLIER,
    dbscan,
    init_memory,
    k_reciprocal_jaccard,
    knn,
    num_clusters,
)
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.model import (
    FeatureBatch,
    ModelParams,
    SampleForward,
    SampleGrads,
    accumulate,
    backward_sample,
    extract_features,
    forward_sample,
    reset_heads,
    sgd_step,
)
from scwm_reid.core.scc import diversity_loss, parse_feature_map, parsing_loss, smooth_masks
from scwm_reid.core.weighted_memory import (
    BatchWeights,
    MemoryBank,
    batch_weights,
    difficulty_scores,
    memory_update,
    update_strategy_select,
    wm_loss,
)

LOSS_TERMS = ("parsing", "diversity", "wnce", "sep", "id")


@dataclass
class ClusteringResult:
    """Everything the clustering stage hands over to the training stage."""

    labels: np.ndarray
    pseudo_masks: np.ndarray
    smoothed_masks: np.ndarray
    bank: MemoryBank
    alpha_g: np.ndarray
    alpha_p: np.ndarray
    features: FeatureBatch

    @property
    def num_clusters(self) -> int:
        return self.bank.num_clusters

    @property
    def num_outliers(self) -> int:
        return int(np.sum(self.labels == OUTLIER))


def pseudo_labels(global_features: np.ndarray, config: PipelineConfig) -> np.ndarray:
    """DBSCAN over the k-reciprocal Jaccard distance of the global features."""
    settings = config.id_clustering
    distances = k_reciprocal_jaccard(global_features, k1=settings.k1, k2=settings.k2)
    return dbscan(distances, eps=settings.eps, min_samples=settings.min_samples)


def parse_masks(feature_maps: np.ndarray, config: PipelineConfig) -> np.ndarray:
    """Cascaded clustering of every feature map; worker threads keep the input order."""
    parsing = config.parsing
    eta = config.eta

    def parse(feature_map: np.ndarray) -> np.ndarray:
        return parse_feature_map(
            feature_map,
            parsing.num_parts,
            eta,
            foreground_correction=parsing.foreground_correction,
            space_correction=parsing.space_correction,
        )

    if parsing.num_workers > 1:
        with ThreadPoolExecutor(max_workers=parsing.num_workers) as pool:
            return np.stack(list(pool.map(parse, feature_maps)))
    return np.stack([parse(feature_map) for feature_map in feature_maps])


def clustering_stage(
    inputs: np.ndarray,
    params: ModelParams,
    config: PipelineConfig,
    previous_masks: Optional[np.ndarray] = None,
    gamma: Optional[float] = None,
) -> ClusteringResult:
    """Frozen-model pass: pseudo identities, pseudo part masks, difficulty and a fresh memory.

    Args:
        inputs (np.ndarray): N x C_in x H x W dataset inputs.
        params (ModelParams): current model, left untouched.
        config (PipelineConfig): pipeline settings.
        previous_masks (Optional[np.ndarray]): smoothed masks of the previous epoch. Without
            them the smoothed masks equal the new pseudo masks.
        gamma (Optional[float]): smoothing factor. Defaults to `config.parsing.gamma`.
    """
    gamma = config.parsing.gamma if gamma is None else gamma
    features = extract_features(params, inputs)

    labels = pseudo_labels(features.global_features, config)
    if num_clusters(labels) == 0:
        raise EmptyClusteringError(
            f"All {labels.size} samples are outliers with eps={config.id_clustering.eps} and "
            f"min_samples={config.id_clustering.min_samples}. Try a larger eps or a smaller "
            "min_samples."
        )

    pseudo_masks = parse_masks(features.feature_maps, config)
    if previous_masks is None:
        smoothed = pseudo_masks.copy()
    else:
        smoothed = np.stack(
            [
                smooth_masks(previous, current, gamma)
                for previous, current in zip(previous_masks, pseudo_masks)
            ]
        )

    k = config.memory.difficulty_k
    global_neighbors = knn(features.global_features, k)
    part_neighbors = [
        knn(features.part_features[:, part], k) for part in range(params.num_parts)
    ]
    alpha_g, alpha_p = difficulty_scores(global_neighbors, part_neighbors, features.part_valid)

    bank = init_memory(
        features.global_features,
        features.part_features,
        labels,
        part_valid=features.part_valid,
        momentum=config.memory.momentum,
        temperature=config.memory.temperature,
        strategy=config.memory.update_strategy,
    )
    logger.info(
        f"Clustering stage: {bank.num_clusters} clusters, "
        f"{int(np.sum(labels == OUTLIER))} outliers"
    )
    return ClusteringResult(
        labels=labels,
        pseudo_masks=pseudo_masks,
        smoothed_masks=smoothed,
        bank=bank,
        alpha_g=alpha_g,
        alpha_p=alpha_p,
        features=features,
    )


def sample_batch(
    labels: np.ndarray, identities: int, per_identity: int, rng: np.random.Generator
) -> np.ndarray:
    """Identity-balanced batch: `identities` pseudo identities with `per_identity` samples each.

    Clusters with fewer members than `per_identity` are sampled with replacement.
    """
    labels = np.asarray(labels)
    clusters = np.unique(labels[labels != OUTLIER])
    if clusters.size == 0:
        raise EmptyClusteringError("Cannot sample a batch without any clustered sample.")
    chosen = rng.choice(clusters, size=min(identities, clusters.size), replace=False)
    batch = []
    for cluster in chosen:
        members = np.flatnonzero(labels == cluster)
        batch.append(rng.choice(members, size=per_identity, replace=members.size < per_identity))
    return np.concatenate(batch)


@dataclass
class BatchTargets:
    """Everything the objective treats as a constant for one batch."""

    labels: np.ndarray
    smoothed_masks: np.ndarray
    loss_weights: BatchWeights
    alpha_g: np.ndarray
    alpha_p: np.ndarray
    global_labels: np.ndarray
    part_labels: np.ndarray
    active_global: np.ndarray
    active_parts: np.ndarray

    @property
    def skipped_terms(self) -> int:
        """Weighted NCE terms left out because their weight is zero or their part is empty."""
        return int(np.sum(~self.active_global)) + int(np.sum(~self.active_parts))


def build_targets(
    forwards: List[SampleForward],
    indices: np.ndarray,
    cluster: ClusteringResult,
    beta: float,
) -> BatchTargets:
    """Refined labels, loss weights and pseudo masks of a batch, from a clustering result."""
    labels = cluster.labels[indices]
    if np.any(labels == OUTLIER):
        raise InvalidParameterError("Training batches cannot hold outliers.")
    alpha_g = cluster.alpha_g[indices]
    alpha_p = cluster.alpha_p[indices]
    part_valid = np.stack([forward.part_valid for forward in forwards])
    weights = batch_weights(alpha_g, alpha_p, part_valid)

    one_hot = np.eye(cluster.num_clusters)[labels]
    num_parts = alpha_p.shape[1]
    part_labels = np.stack(
        [
            np.stack([refine_part_label(one_hot[i], alpha_p[i, k]) for k in range(num_parts)])
            for i in range(labels.size)
        ]
    )
    global_labels = np.stack(
        [
            distill_global_label(
                one_hot[i], beta, part_agreement_weights(alpha_p[i]), forward.part_predictions
            )
            for i, forward in enumerate(forwards)
        ]
    )
    return BatchTargets(
        labels=labels,
        smoothed_masks=cluster.smoothed_masks[indices],
        loss_weights=weights,
        alpha_g=alpha_g,
        alpha_p=alpha_p,
        global_labels=global_labels,
        part_labels=part_labels,
        active_global=weights.omega_g > 0.0,
        active_parts=part_valid & (weights.omega_p > 0.0),
    )


@dataclass
class BatchObjective:
    """Value, per-term values and parameter gradients of the training objective on one batch."""

    value: float
    components: Dict[str, float]
    grads: Dict[str, np.ndarray]


def batch_objective(
    params: ModelParams,
    forwards: List[SampleForward],
    targets: BatchTargets,
    bank: MemoryBank,
    switches: Optional[LossSwitchesModel] = None,
) -> BatchObjective:
    """Parsing + diversity + weighted memory + classification loss, averaged over the batch."""
    switches = switches or LossSwitchesModel()
    batch = len(forwards)
    masks = np.stack([forward.mask for forward in forwards])
    components = {name: 0.0 for name in LOSS_TERMS}
    terms: List[LossTerm] = []

    if switches.parsing:
        grads = np.zeros_like(masks)
        for i in range(batch):
            value, grads[i] = parsing_loss(targets.smoothed_masks[i], masks[i])
            components["parsing"] += value / batch
        terms.append(LossTerm(value=components["parsing"], grads={"mask": grads / batch}))
    if switches.diversity:
        grads = np.zeros_like(masks)
        for i in range(batch):
            value, grads[i] = diversity_loss(masks[i])
            components["diversity"] += value / batch
        terms.append(LossTerm(value=components["diversity"], grads={"mask": grads / batch}))

    global_features = np.stack([forward.global_feature for forward in forwards])
    part_features = np.stack([forward.part_features for forward in forwards])
    if switches.wnce or switches.sep:
        memory_loss = wm_loss(
            global_features,
            part_features,
            targets.labels,
            bank,
            targets.loss_weights,
            active_global=targets.active_global,
            active_parts=targets.active_parts,
            use_wnce=switches.wnce,
            use_sep=switches.sep,
        )
        components.update(memory_loss.components)
        terms.append(
            LossTerm(
                value=memory_loss.value,
                grads={
                    "global_feature": memory_loss.grad_global,
                    "part_features": memory_loss.grad_parts,
                },
            )
        )

    if switches.id:
        value, grad_global, grad_parts = id_loss(
            np.stack([forward.global_prediction for forward in forwards]),
            np.stack([forward.part_predictions for forward in forwards]),
            targets.global_labels,
            targets.part_labels,
            active_parts=np.stack([forward.part_valid for forward in forwards]),
        )
        components["id"] = value
        terms.append(
            LossTerm(value=value, grads={"global_logits": grad_global, "part_logits": grad_parts})
        )

    objective = total_loss(*terms)
    param_grads: Dict[str, np.ndarray] = {}
    for i, forward in enumerate(forwards):
        sample_grads = SampleGrads(
            **{name: grad[i] for name, grad in objective.grads.items() if name != "mask"},
            mask=objective.grads["mask"][i] if "mask" in objective.grads else None,
        )
        accumulate(param_grads, backward_sample(params, forward, sample_grads))
    return BatchObjective(value=objective.value, components=components, grads=param_grads)


def objective_value(
    params: ModelParams,
    images: np.ndarray,
    targets: BatchTargets,
    bank: MemoryBank,
    switches: Optional[LossSwitchesModel] = None,
) -> float:
    """Objective of a batch for fixed targets, recomputing the forward pass from `params`."""
    forwards = [forward_sample(params, image) for image in images]
    return batch_objective(params, forwards, targets, bank, switches).value


@dataclass
class TrainingResult:
    params: ModelParams
    bank: MemoryBank
    iterations: List[Dict[str, float]] = field(default_factory=list)

    def mean_losses(self) -> Dict[str, float]:
        if not self.iterations:
            return {name: 0.0 for name in LOSS_TERMS + ("total",)}
        keys = self.iterations[0].keys()
        return {key: float(np.mean([record[key] for record in self.iterations])) for key in keys}


def training_stage(
    inputs: np.ndarray,
    cluster: ClusteringResult,
    params: ModelParams,
    config: PipelineConfig,
    learning_rate: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> TrainingResult:
    """SGD on the full objective over identity-balanced batches, updating the memory after
    every step with the configured strategy.

    Heads are created from the memory when missing or sized for another clustering.
    """
    training = config.training
    learning_rate = training.learning_rate if learning_rate is None else learning_rate
    rng = rng or np.random.default_rng(config.seed)
    bank = cluster.bank
    if not params.has_heads or params.global_head.num_classes != bank.num_clusters:
        params = reset_heads(params, bank, config.classification.head_init_scale)
    weighting = update_strategy_select(bank.strategy)

    result = TrainingResult(params=params, bank=bank)
    for iteration in range(training.iterations):
        indices = sample_batch(
            cluster.labels, training.identities_per_batch, training.samples_per_cluster, rng
        )
        forwards = [forward_sample(params, inputs[i]) for i in indices]
        targets = build_targets(forwards, indices, cluster, config.classification.beta)
        objective = batch_objective(params, forwards, targets, bank, training.losses)
        if not np.isfinite(objective.value):
            raise InvalidParameterError(f"Non-finite loss at iteration {iteration}.")
        params = sgd_step(params, objective.grads, learning_rate)

        global_features = np.stack([forward.global_feature for forward in forwards])
        part_features = np.stack([forward.part_features for forward in forwards])
        part_valid = np.stack([forward.part_valid for forward in forwards])
        weights = weighting(
            bank,
            targets.labels,
            global_features,
            part_features,
            targets.alpha_g,
            targets.alpha_p,
            part_valid,
        )
        bank = memory_update(bank, targets.labels, global_features, part_features, weights)

        record = {name: float(value) for name, value in objective.components.items()}
        record["total"] = float(objective.value)
        record["skipped"] = float(targets.skipped_terms)
        result.iterations.append(record)
        logger.debug(f"Iteration {iteration}: loss {objective.value:.6f}")

    result.params = params
    result.bank = bank
    return result
