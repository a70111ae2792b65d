"""Pipeline task module. Runs the whole alternating loop and evaluates the final model."""
from scwm_reid.core.pipeline.runner import run_pipeline
from scwm_reid.core.task.base import BaseTask


class PipelineTask(BaseTask):
    def run(self) -> int:
        dataset = self.load_dataset() if self._flags.dataset_dir else None
        result = run_pipeline(self.config, dataset=dataset, output_dir=self.output_dir)

        report = result.report.as_dict()
        report["parsing"].pop("matching")
        self.create_table(
            title=f"Report after {len(result.epochs)} epochs",
            columns=["Metric", "Value"],
            data=self.flatten(report),
        )
        return 0
