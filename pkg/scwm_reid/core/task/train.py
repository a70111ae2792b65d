"""Train task module. Runs one training stage on the output of a clustering stage."""
from scwm_reid.core.clients.artifacts import save_bank
from scwm_reid.core.exceptions import ConfigError
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.runner import (
    BANK_FOLDER,
    CHECKPOINT_FOLDER,
    load_clustering,
    save_model,
)
from scwm_reid.core.pipeline.stages import training_stage
from scwm_reid.core.task.base import BaseTask


class TrainTask(BaseTask):
    """SGD on the full objective, then writes the new checkpoint and the updated memory."""

    def run(self) -> int:
        if not self._flags.cluster_dir:
            raise ConfigError("The 'train' command needs --cluster-dir from a 'cluster' run.")
        dataset = self.load_dataset()
        params = self.load_params()
        cluster = load_clustering(self._flags.cluster_dir, dataset, params)

        result = training_stage(dataset.inputs, cluster, params, self.config)
        checkpoint = self.output_dir / CHECKPOINT_FOLDER
        save_model(checkpoint, result.params, epoch=1, seed=self.config.seed)
        save_bank(self.output_dir / BANK_FOLDER, result.bank)
        logger.info(f"Checkpoint written to {checkpoint}")

        self.create_table(
            title="Mean Training Losses",
            columns=["Term", "Value"],
            data=self.flatten(result.mean_losses()),
        )
        return 0
