"""Cluster task module. Runs one clustering stage with a frozen model and stores its output."""
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.evaluate import clustering_metrics
from scwm_reid.core.pipeline.runner import save_clustering
from scwm_reid.core.pipeline.stages import clustering_stage
from scwm_reid.core.task.base import BaseTask


class ClusterTask(BaseTask):
    """Pseudo labels, pseudo part masks, difficulty scores and a fresh memory bank."""

    def run(self) -> int:
        dataset = self.load_dataset()
        params = self.load_params()
        cluster = clustering_stage(dataset.inputs, params, self.config)
        save_clustering(self.output_dir, dataset.sample_ids, cluster, self.config)
        logger.info(f"Clustering artifacts written to {self.output_dir}")

        quality = clustering_metrics(cluster.labels, dataset.identities)
        self.create_table(
            title="Clustering Stage",
            columns=["Metric", "Value"],
            data=self.flatten(quality),
        )
        return 0
