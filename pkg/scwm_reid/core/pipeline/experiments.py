"""Small controlled experiments that isolate one design choice each.

* update strategies: how close the memory centroids stay to the true class means when a share
  of the pseudo labels is wrong,
* foreground correction: how much of the regular foreground survives the norm split next to a
  very salient region,
* space correction: whether two distant regions with identical features end up in different
  parts.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np

from scwm_reid.core.id_clustering import init_memory, knn
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.stages import sample_batch
from scwm_reid.core.scc import default_eta, foreground_split, parse_feature_map
from scwm_reid.core.weighted_memory import (
    UpdateStrategy,
    difficulty_scores,
    memory_update,
    update_strategy_select,
)

# weighted and average centroids must stay this close to each other on clean labels
CLEAN_LABEL_TOLERANCE = 0.1
FOREGROUND_MIN_RECALL = 0.95
NO_CORRECTION_MAX_RECALL = 0.6


def _unit_rows(values: np.ndarray) -> np.ndarray:
    return values / np.linalg.norm(values, axis=-1, keepdims=True)


@dataclass(frozen=True)
class StrategySetup:
    num_classes: int = 6
    per_class: int = 16
    feature_dim: int = 16
    num_parts: int = 3
    spread: float = 0.1
    rounds: int = 40
    identities_per_batch: int = 4
    samples_per_cluster: int = 4
    difficulty_k: int = 8
    momentum: float = 0.2


def centroid_error(
    strategy: UpdateStrategy, noise_rate: float, seed: int, setup: StrategySetup = StrategySetup()
) -> float:
    """Mean distance between memory centroids and the true class means after training updates.

    Samples of every class scatter around one unit mean per feature space. A `noise_rate` share
    of the samples carries a wrong pseudo label and random part features, so their parts also
    disagree with their global neighbourhood. The memory starts from the noisy labels and then
    receives `rounds` identity-balanced batches with the given strategy. The population and the
    batches only depend on `seed`, so strategies are compared on identical data.
    """
    rng = np.random.default_rng(seed)
    spaces = 1 + setup.num_parts
    means = _unit_rows(rng.normal(size=(spaces, setup.num_classes, setup.feature_dim)))
    true_labels = np.repeat(np.arange(setup.num_classes), setup.per_class)
    num_samples = true_labels.size

    scatter = setup.spread * rng.normal(size=(spaces, num_samples, setup.feature_dim))
    features = _unit_rows(means[:, true_labels] + scatter)
    noisy = rng.random(num_samples) < noise_rate
    shift = rng.integers(1, setup.num_classes, size=num_samples)
    labels = np.where(noisy, (true_labels + shift) % setup.num_classes, true_labels)
    corrupted = _unit_rows(rng.normal(size=(setup.num_parts, num_samples, setup.feature_dim)))
    features[1:, noisy] = corrupted[:, noisy]

    global_features = features[0]
    part_features = np.transpose(features[1:], (1, 0, 2))
    part_valid = np.ones((num_samples, setup.num_parts), dtype=bool)
    alpha_g, alpha_p = difficulty_scores(
        knn(global_features, setup.difficulty_k),
        [knn(part_features[:, k], setup.difficulty_k) for k in range(setup.num_parts)],
    )

    bank = init_memory(
        global_features, part_features, labels, momentum=setup.momentum, strategy=strategy
    )
    weighting = update_strategy_select(strategy)
    batch_rng = np.random.default_rng([seed, 1])
    for _ in range(setup.rounds):
        index = sample_batch(
            labels, setup.identities_per_batch, setup.samples_per_cluster, batch_rng
        )
        weights = weighting(
            bank,
            labels[index],
            global_features[index],
            part_features[index],
            alpha_g[index],
            alpha_p[index],
            part_valid[index],
        )
        bank = memory_update(
            bank, labels[index], global_features[index], part_features[index], weights
        )
    errors = [np.linalg.norm(bank.centroids[s] - means[s], axis=1).mean() for s in range(spaces)]
    return float(np.mean(errors))


@dataclass
class StrategyComparison:
    noise_rate: float
    errors: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def weighted_wins(self) -> int:
        """Trials where weighted centroids are at least as close as the hardest-sample ones."""
        return int(
            sum(
                weighted <= hardest
                for weighted, hardest in zip(self.errors["weighted"], self.errors["hardest"])
            )
        )

    @property
    def weighted_average_gap(self) -> float:
        return float(abs(np.mean(self.errors["weighted"]) - np.mean(self.errors["average"])))


def compare_strategies(
    noise_rate: float, trials: int, seed: int = 0, setup: StrategySetup = StrategySetup()
) -> StrategyComparison:
    comparison = StrategyComparison(noise_rate=noise_rate)
    for strategy in UpdateStrategy:
        comparison.errors[strategy.value] = [
            centroid_error(strategy, noise_rate, seed + trial, setup) for trial in range(trials)
        ]
    return comparison


def salient_map(
    seed: int, height: int = 24, width: int = 12, channels: int = 8, gain: float = 5.0
):
    """Feature map with faint background, a regular body and a salient patch inside it.

    Returns:
        Tuple[np.ndarray, np.ndarray]: C x H x W map and the H x W mask of regular pixels.
    """
    rng = np.random.default_rng(seed)
    directions = _unit_rows(rng.normal(size=(height, width, channels)))
    norms = np.full((height, width), 0.1)
    body = np.zeros((height, width), dtype=bool)
    body[4:20, 3:9] = True
    salient = np.zeros((height, width), dtype=bool)
    salient[8:12, 4:8] = True
    norms[body] = 1.0
    norms[salient] = gain
    norms = norms * (1.0 + 0.05 * rng.normal(size=(height, width)))
    feature_map = np.transpose(directions * norms[..., None], (2, 0, 1))
    return feature_map, body & ~salient


def foreground_recall(seed: int, foreground_correction: bool) -> float:
    """Share of the regular body pixels that the norm split keeps in the foreground."""
    feature_map, regular = salient_map(seed)
    split = foreground_split(feature_map, foreground_correction=foreground_correction)
    return float(split.foreground[regular].mean())


def twin_blob_map(seed: int, height: int = 24, width: int = 12, channels: int = 8):
    """Zero background, two identical-feature blobs far apart and a different blob between them.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: C x H x W map, top blob mask, bottom blob mask.
    """
    rng = np.random.default_rng(seed)
    twin = _unit_rows(rng.normal(size=channels))
    middle = rng.normal(size=channels)
    middle = _unit_rows(middle - (middle @ twin) * twin)

    feature_map = np.zeros((channels, height, width))
    top = np.zeros((height, width), dtype=bool)
    top[1:5, 3:9] = True
    bottom = np.zeros((height, width), dtype=bool)
    bottom[19:23, 3:9] = True
    center = np.zeros((height, width), dtype=bool)
    center[9:15, 3:9] = True
    for region, feature in ((top, twin), (bottom, twin), (center, middle)):
        noise = 0.01 * rng.normal(size=(channels, int(region.sum())))
        feature_map[:, region] = feature[:, None] + noise
    return feature_map, top, bottom


def twins_separated(seed: int, space_correction: bool, num_parts: int = 3) -> bool:
    """Whether the two identical-feature blobs land in different part channels."""
    feature_map, top, bottom = twin_blob_map(seed)
    height, width = feature_map.shape[1:]
    masks = parse_feature_map(
        feature_map, num_parts, default_eta(height, width), space_correction=space_correction
    )
    channels = masks.argmax(axis=0)
    top_part = np.bincount(channels[top], minlength=num_parts).argmax()
    bottom_part = np.bincount(channels[bottom], minlength=num_parts).argmax()
    return bool(top_part != bottom_part)


def run_ablation(trials: int = 5, seed: int = 0) -> Dict[str, Any]:
    """Runs every experiment and returns plain results, ready to dump as YAML."""
    noisy = compare_strategies(0.3, trials, seed)
    clean = compare_strategies(0.0, trials, seed)
    separation_trials = 10 * trials
    logger.info(f"Running {separation_trials} separation trials per setting")
    results = {
        "update_strategies": {
            "noisy_labels": {
                "noise_rate": noisy.noise_rate,
                "mean_error": {name: float(np.mean(v)) for name, v in noisy.errors.items()},
                "weighted_wins": noisy.weighted_wins,
                "trials": trials,
            },
            "clean_labels": {
                "noise_rate": clean.noise_rate,
                "mean_error": {name: float(np.mean(v)) for name, v in clean.errors.items()},
                "weighted_average_gap": clean.weighted_average_gap,
                "tolerance": CLEAN_LABEL_TOLERANCE,
            },
        },
        "foreground_correction": {
            "three_class_recall": float(
                np.mean([foreground_recall(seed + t, True) for t in range(trials)])
            ),
            "two_class_recall": float(
                np.mean([foreground_recall(seed + t, False) for t in range(trials)])
            ),
        },
        "space_correction": {
            "separated_with_censoring": int(
                sum(twins_separated(seed + t, True) for t in range(separation_trials))
            ),
            "separated_without_censoring": int(
                sum(twins_separated(seed + t, False) for t in range(separation_trials))
            ),
            "trials": separation_trials,
        },
    }
    results["checks"] = ablation_checks(results)
    return results


def ablation_checks(results: Dict[str, Any]) -> Dict[str, bool]:
    """Expected direction of every experiment; weighted must win at least 4 trials out of 5."""
    strategies = results["update_strategies"]
    noisy = strategies["noisy_labels"]
    foreground = results["foreground_correction"]
    separation = results["space_correction"]
    return {
        "weighted_beats_hardest": 5 * noisy["weighted_wins"] >= 4 * noisy["trials"],
        "weighted_matches_average": strategies["clean_labels"]["weighted_average_gap"]
        <= CLEAN_LABEL_TOLERANCE,
        "foreground_kept": foreground["three_class_recall"] >= FOREGROUND_MIN_RECALL,
        "foreground_lost_without_correction": foreground["two_class_recall"]
        < NO_CORRECTION_MAX_RECALL,
        "twins_separated": separation["separated_with_censoring"] == separation["trials"],
        "twins_merged_without_censoring": separation["separated_without_censoring"] == 0,
    }
