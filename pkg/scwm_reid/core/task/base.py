"""API definition for Task-like objects."""
import abc
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from rich import box
from rich.console import Console
from rich.table import Table

from scwm_reid.core.config.config import PipelineConfig, ScwmConfig
from scwm_reid.core.flags import FlagParser
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.pipeline.model import ModelParams, init_model
from scwm_reid.core.pipeline.runner import load_model
from scwm_reid.core.pipeline.synthetic import SyntheticDataset, synth_generate


class BaseTask(abc.ABC):
    """Sets up basic API for task-like classes."""

    def __init__(self, flags: FlagParser, scwm_config: ScwmConfig) -> None:
        self._flags = flags
        self._scwm_config = scwm_config

    @property
    def config(self) -> PipelineConfig:
        return self._scwm_config.config

    @property
    def output_dir(self) -> Path:
        """`--out` when given, otherwise the configured output folder."""
        return self._flags.out_dir or Path(self.config.output_dir)

    def load_dataset(self) -> SyntheticDataset:
        """Reads `--dataset`, or generates the configured synthetic set."""
        if self._flags.dataset_dir:
            logger.info(f"Reading dataset from {self._flags.dataset_dir}")
            return SyntheticDataset.load(self._flags.dataset_dir)
        logger.info("No --dataset given, generating the synthetic set from the config")
        return synth_generate(self.config.synthetic, seed=self.config.seed)

    def load_params(self) -> ModelParams:
        """Reads `--checkpoint`, or initialises a fresh model from the config seed."""
        if self._flags.checkpoint_dir:
            logger.info(f"Reading checkpoint from {self._flags.checkpoint_dir}")
            return load_model(self._flags.checkpoint_dir)
        return init_model(self.config, np.random.default_rng(self.config.seed))

    def create_table(self, title: str, columns: List[str], data: Dict[str, str]) -> None:
        """
        Method to create a nice table to print the results.

        Args:
            title (str): Title that you want to give to the table.
            columns (List[str]): List of columns that the table is going to have.
            data (Dict[str, str]): with the rows that we want to print.
        """
        table = Table(title=title, box=box.SIMPLE)
        for column in columns:
            table.add_column(column, justify="right", style="bright_yellow", no_wrap=True)

        for name, value in data.items():
            table.add_row(name, value)

        console = Console()
        console.print(table)

    @staticmethod
    def flatten(report: Dict[str, Any], prefix: Optional[str] = None) -> Dict[str, str]:
        """Nested report to `section.key: value` rows, numbers rounded for display."""
        rows: Dict[str, str] = {}
        for key, value in report.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            if isinstance(value, dict):
                rows.update(BaseTask.flatten(value, name))
            elif isinstance(value, float):
                rows[name] = f"{value:.4f}"
            else:
                rows[name] = str(value)
        return rows

    @abc.abstractmethod
    def run(self) -> int:
        """Orchestrator method that calls all the needed stuff to run a task."""
        ...
