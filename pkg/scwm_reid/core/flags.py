"""Flags module containing the FlagParser "Factory"."""
import sys
from argparse import ArgumentParser
from pathlib import Path
from typing import List, Optional


class FlagParser:
    """Sets flags from defaults or by parsing CLI arguments.

    In order to not have to always parse args when testing etc. We set the defaults explicitly here.
    """

    def __init__(self, cli_parser: ArgumentParser) -> None:
        """Constructor for FlagParser.

        Holds explicit defaults and consumes parsed flags if asked for it.

        Args:
            cli_parser (ArgumentParser): CLI parser.
        """
        self.cli_parser = cli_parser
        self.task: str = str()
        self.log_level: str = "info"
        self.verbose: bool = False
        self.config_path: Path = Path(str())
        self.overrides: List[str] = list()

        # config overrides, None means "keep what the config file says"
        self.seed: Optional[int] = None
        self.epochs: Optional[int] = None
        self.num_parts: Optional[int] = None
        self.eta: Optional[float] = None
        self.update_strategy: Optional[str] = None
        self.output_dir: Optional[str] = None

        # task specific paths
        self.dataset_dir: Optional[Path] = None
        self.cluster_dir: Optional[Path] = None
        self.checkpoint_dir: Optional[Path] = None
        self.out_dir: Optional[Path] = None
        self.trials: int = 5

    @staticmethod
    def _as_path(value: Optional[str]) -> Optional[Path]:
        return Path(value).expanduser() if value else None

    def consume_cli_arguments(self, test_cli_args: List[str] = list()) -> None:
        _cli_args = test_cli_args or sys.argv[1:]
        self.args = self.cli_parser.parse_args(_cli_args)

        self.task = self.args.command

        # base flags that need to be set no matter what
        if self.args:
            self.log_level = self.args.log_level
            self.verbose = self.args.verbose
            self.overrides = self.args.overrides or list()
            if self.args.config_path:
                self.config_path = Path(self.args.config_path).expanduser()
            self.seed = self.args.seed
            self.epochs = self.args.epochs
            self.num_parts = self.args.num_parts
            self.eta = self.args.eta
            self.update_strategy = self.args.update_strategy
            self.output_dir = self.args.output_dir
            self.out_dir = self._as_path(self.args.out)

        # task specific args consumption
        if self.task in ("cluster", "train", "eval", "pipeline"):
            self.dataset_dir = self._as_path(self.args.dataset)
        if self.task in ("cluster", "train", "eval"):
            self.checkpoint_dir = self._as_path(self.args.checkpoint)
        if self.task == "train":
            self.cluster_dir = self._as_path(self.args.cluster_dir)
        elif self.task == "ablate":
            self.trials = self.args.trials
