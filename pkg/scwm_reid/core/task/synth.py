"""Synth task module. Writes the synthetic pedestrian dataset to disk."""
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.synthetic import synth_generate
from scwm_reid.core.task.base import BaseTask


class SynthTask(BaseTask):
    """Generates the dataset described by the `synthetic` config section."""

    def run(self) -> int:
        dataset = synth_generate(self.config.synthetic, seed=self.config.seed)
        manifest = dataset.save(self.output_dir)
        logger.info(
            f"Wrote {len(dataset)} samples of {self.config.synthetic.num_identities} identities "
            f"to {manifest.parent}"
        )
        return 0
