"""The alternating clustering/training loop and the artifacts it leaves behind."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from scwm_reid.core.clients.artifacts import (
    DIFFICULTY_FILE,
    LABELS_FILE,
    load_bank,
    load_checkpoint,
    load_difficulty,
    load_labels,
    load_masks,
    save_bank,
    save_checkpoint,
    save_difficulty,
    save_labels,
    save_masks,
)
from scwm_reid.core.clients.yaml_helpers import save_yaml
from scwm_reid.core.config.config import PipelineConfig, config_as_dict
from scwm_reid.core.exceptions import ShapeMismatchError
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.evaluate import (
    EvaluationReport,
    clustering_metrics,
    evaluate,
    mask_agreement,
    mask_iou,
)
from scwm_reid.core.pipeline.model import ModelParams, extract_features, init_model
from scwm_reid.core.pipeline.stages import ClusteringResult, clustering_stage, training_stage
from scwm_reid.core.pipeline.synthetic import SyntheticDataset, synth_generate

EPOCH_LOG = "epochs.yml"
REPORT_FILE = "report.yml"
CHECKPOINT_FOLDER = "checkpoint"
BANK_FOLDER = "bank"

PathLike = Union[str, Path]


def gamma_at(config: PipelineConfig, epoch: int) -> float:
    """Mask smoothing factor of an epoch: linear decay from `gamma` to 0 at `gamma_decay_epochs`."""
    parsing = config.parsing
    if parsing.gamma_decay_epochs <= 0:
        return 0.0
    return float(parsing.gamma * max(0.0, 1.0 - epoch / parsing.gamma_decay_epochs))


def learning_rate_at(config: PipelineConfig, epoch: int) -> float:
    """Step schedule: the rate is multiplied by `lr_decay` every `lr_step_epochs` epochs."""
    training = config.training
    return float(training.learning_rate * training.lr_decay ** (epoch // training.lr_step_epochs))


def save_model(path: PathLike, params: ModelParams, epoch: int, seed: int) -> Path:
    return save_checkpoint(path, params.arrays(), epoch=epoch, seed=seed)


def load_model(path: PathLike) -> ModelParams:
    arrays, header = load_checkpoint(path)
    logger.debug(f"Loaded checkpoint of epoch {header['epoch']} (seed {header['seed']})")
    return ModelParams.from_arrays(arrays)


def save_clustering(
    path: PathLike, sample_ids: List[str], cluster: ClusteringResult, config: PipelineConfig
) -> Path:
    """Labels, smoothed masks, difficulty scores and the memory bank of one clustering stage."""
    path = Path(path)
    save_labels(path / LABELS_FILE, sample_ids, cluster.labels)
    save_masks(path, sample_ids, cluster.smoothed_masks, config.eta, config.parsing.num_parts)
    save_difficulty(path / DIFFICULTY_FILE, cluster.alpha_g, cluster.alpha_p)
    save_bank(path / BANK_FOLDER, cluster.bank)
    return path


def load_clustering(
    path: PathLike, dataset: SyntheticDataset, params: ModelParams
) -> ClusteringResult:
    """Rebuilds a clustering result from its artifacts; features are recomputed with `params`."""
    path = Path(path)
    label_ids, labels = load_labels(path / LABELS_FILE)
    mask_ids, masks = load_masks(path)
    if label_ids != dataset.sample_ids or mask_ids != dataset.sample_ids:
        raise ShapeMismatchError(f"The clustering in {path} was made for another dataset.")
    alpha_g, alpha_p = load_difficulty(path / DIFFICULTY_FILE)
    return ClusteringResult(
        labels=labels,
        pseudo_masks=masks,
        smoothed_masks=masks,
        bank=load_bank(path / BANK_FOLDER),
        alpha_g=alpha_g,
        alpha_p=alpha_p,
        features=extract_features(params, dataset.inputs),
    )


@dataclass
class PipelineResult:
    params: ModelParams
    report: EvaluationReport
    epochs: List[Dict[str, Any]] = field(default_factory=list)

    def mask_agreement_increasing(self, num_epochs: int) -> bool:
        """Whether predicted masks agree more with the smoothed pseudo masks every epoch."""
        agreement = [record["mask_agreement"] for record in self.epochs[:num_epochs]]
        return all(later > earlier for earlier, later in zip(agreement, agreement[1:]))


def run_epoch(
    epoch: int,
    dataset: SyntheticDataset,
    params: ModelParams,
    config: PipelineConfig,
    previous_masks: Optional[np.ndarray],
) -> Dict[str, Any]:
    """One clustering stage followed by one training stage."""
    inputs = dataset.inputs
    gamma = gamma_at(config, epoch)
    learning_rate = learning_rate_at(config, epoch)
    cluster = clustering_stage(inputs, params, config, previous_masks=previous_masks, gamma=gamma)
    training = training_stage(
        inputs,
        cluster,
        params,
        config,
        learning_rate=learning_rate,
        rng=np.random.default_rng([config.seed, epoch]),
    )
    predicted = extract_features(training.params, inputs).masks
    losses = training.mean_losses()
    skipped = int(sum(record.get("skipped", 0.0) for record in training.iterations))
    losses.pop("skipped", None)
    quality = clustering_metrics(cluster.labels, dataset.identities)
    return {
        "params": training.params,
        "smoothed_masks": cluster.smoothed_masks,
        "record": {
            "epoch": epoch,
            "num_clusters": cluster.num_clusters,
            "outliers": cluster.num_outliers,
            "gamma": gamma,
            "learning_rate": learning_rate,
            "losses": losses,
            "nmi": quality["nmi"],
            "pairwise_f": quality["pairwise_f"],
            "mask_iou": mask_iou(predicted, dataset.gt_masks)[0],
            "mask_agreement": mask_agreement(predicted, cluster.smoothed_masks),
            "skipped_terms": skipped,
        },
    }


def run_pipeline(
    config: PipelineConfig,
    dataset: Optional[SyntheticDataset] = None,
    output_dir: Optional[PathLike] = None,
    params: Optional[ModelParams] = None,
) -> PipelineResult:
    """Alternates clustering and training for `training.epochs` epochs, then evaluates.

    Args:
        config (PipelineConfig): pipeline settings.
        dataset (Optional[SyntheticDataset]): generated from `config.synthetic` when missing.
        output_dir (Optional[PathLike]): where `epochs.yml`, `report.yml` and the checkpoint go.
            Nothing is written when missing.
        params (Optional[ModelParams]): starting model, freshly initialised when missing.

    Returns:
        PipelineResult: final model, evaluation report and one record per epoch.
    """
    dataset = dataset or synth_generate(config.synthetic, seed=config.seed)
    params = params or init_model(config, np.random.default_rng(config.seed))

    records: List[Dict[str, Any]] = []
    previous_masks = None
    for epoch in range(config.training.epochs):
        outcome = run_epoch(epoch, dataset, params, config, previous_masks)
        params = outcome["params"]
        previous_masks = outcome["smoothed_masks"]
        record = outcome["record"]
        records.append(record)
        logger.info(
            f"Epoch {epoch}: {record['num_clusters']} clusters, NMI {record['nmi']:.3f}, "
            f"mask IoU {record['mask_iou']:.3f}, loss {record['losses']['total']:.4f}"
        )

    report = evaluate(dataset, params, config)
    result = PipelineResult(params=params, report=report, epochs=records)
    report.extras["epochs"] = len(records)
    report.extras["seed"] = config.seed
    report.extras["mask_agreement_increasing"] = result.mask_agreement_increasing(
        config.evaluation.monitor_epochs
    )

    if output_dir is not None:
        output_dir = Path(output_dir)
        save_yaml(output_dir / EPOCH_LOG, {"seed": config.seed, "epochs": records})
        save_model(output_dir / CHECKPOINT_FOLDER, params, epoch=len(records), seed=config.seed)
        save_yaml(
            output_dir / REPORT_FILE, {**report.as_dict(), "config": config_as_dict(config)}
        )
        logger.info(f"Pipeline artifacts written to {output_dir}")
    return result
