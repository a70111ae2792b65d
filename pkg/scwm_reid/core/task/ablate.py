"""Ablate task module. Runs the controlled experiments behind the main design choices."""
from scwm_reid.core.clients.yaml_helpers import save_yaml
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.experiments import run_ablation
from scwm_reid.core.task.base import BaseTask

ABLATION_FILE = "ablation.yml"


class AblationTask(BaseTask):
    """Update strategies under label noise, foreground correction and space correction.

    Fails when one of the experiments does not go in the expected direction.
    """

    def run(self) -> int:
        results = run_ablation(trials=self._flags.trials, seed=self.config.seed)
        save_yaml(self.output_dir / ABLATION_FILE, results)
        logger.info(f"Ablation results written to {self.output_dir / ABLATION_FILE}")

        checks = results.pop("checks")
        self.create_table(
            title="Ablation", columns=["Experiment", "Value"], data=self.flatten(results)
        )
        failed = [name for name, passed in checks.items() if not passed]
        for name in failed:
            logger.warning(f"[yellow]Check '{name}' did not hold.")
        return 1 if failed else 0
