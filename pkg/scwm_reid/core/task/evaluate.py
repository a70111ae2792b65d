"""Eval task module. Scores a checkpoint against the ground truth of a dataset."""
from scwm_reid.core.clients.yaml_helpers import save_yaml
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.evaluate import evaluate
from scwm_reid.core.pipeline.runner import REPORT_FILE
from scwm_reid.core.task.base import BaseTask


class EvaluationTask(BaseTask):
    """Clustering, part-mask and retrieval metrics next to the horizontal-stripe baseline."""

    def run(self) -> int:
        dataset = self.load_dataset()
        params = self.load_params()
        report = evaluate(dataset, params, self.config).as_dict()
        save_yaml(self.output_dir / REPORT_FILE, report)
        logger.info(f"Report written to {self.output_dir / REPORT_FILE}")

        report["parsing"].pop("matching")
        self.create_table(
            title="Evaluation Report", columns=["Metric", "Value"], data=self.flatten(report)
        )
        return 0
