"""Main module for scwm-reid. Sets up CLI arguments and sets up task handlers."""
import argparse
import sys
from typing import List

import pyfiglet
from rich.console import Console

from scwm_reid.core._version import __version__
from scwm_reid.core.config.config import ScwmConfig, list_override_keys
from scwm_reid.core.flags import FlagParser
from scwm_reid.core.logger import GLOBAL_LOGGER as logger
from scwm_reid.core.logger import log_manager
from scwm_reid.core.task.ablate import AblationTask
from scwm_reid.core.task.base import BaseTask
from scwm_reid.core.task.cluster import ClusterTask
from scwm_reid.core.task.evaluate import EvaluationTask
from scwm_reid.core.task.pipeline import PipelineTask
from scwm_reid.core.task.synth import SynthTask
from scwm_reid.core.task.train import TrainTask
from scwm_reid.core.ui.traceback_manager import ScwmTracebackManager
from scwm_reid.core.weighted_memory import UpdateStrategy

console = Console()


def version_message() -> str:
    return f"Installed scwm-reid version: {__version__}".rjust(40)


# general parser
parser = argparse.ArgumentParser(
    prog="scwm-reid",
    formatter_class=argparse.RawTextHelpFormatter,
    description=(
        "Unsupervised person re-identification on synthetic pedestrians with spatial cascaded "
        "clustering and weighted memory"
    ),
    epilog="Select one of the available sub-commands with --help to find out more about them.",
)

parser.add_argument("-v", "--version", action="version", version=version_message())

# base sub-parser (sets up args that need to be provided to ALL other sub parsers)
base_subparser = argparse.ArgumentParser(add_help=False)
base_subparser.add_argument(
    "--log-level",
    help="overrides default log level",
    type=str,
    choices=["info", "debug"],
    default="info",
)
base_subparser.add_argument(
    "-vv",
    "--verbose",
    help="When provided the length of the tracebacks will not be truncated.",
    action="store_true",
    default=False,
)
base_subparser.add_argument(
    "--config-path", help="Full path to scwm_config.yml file if not using default."
)
base_subparser.add_argument(
    "--set",
    help="Overrides one config field, can be repeated. Accepted keys: "
    + ", ".join(list_override_keys()),
    action="append",
    dest="overrides",
    metavar="SECTION.FIELD=VALUE",
    default=None,
)
base_subparser.add_argument("--seed", help="Seed of every random draw.", type=int)
base_subparser.add_argument("--epochs", help="Number of clustering/training epochs.", type=int)
base_subparser.add_argument(
    "--num-parts", help="Part channels per mask, background included.", type=int
)
base_subparser.add_argument("--eta", help="Spatial censoring threshold in pixels.", type=float)
base_subparser.add_argument(
    "--update-strategy",
    help="How a batch updates the memory centroids.",
    choices=[strategy.value for strategy in UpdateStrategy],
)
base_subparser.add_argument(
    "--output-dir", help="Folder where results go, stored in the config.", type=str
)
base_subparser.add_argument(
    "-o", "--out", help="Folder for this command's output, overrides --output-dir.", type=str
)

# Task-specific argument sub parsers
sub_parsers = parser.add_subparsers(
    title="Available scwm-reid commands", dest="command", required=True
)

# ##### SYNTH Task
synth_sub_parser = sub_parsers.add_parser(
    "synth", parents=[base_subparser], help="Writes the synthetic dataset to disk."
)
synth_sub_parser.set_defaults(cls=SynthTask, which="synth")


def _add_dataset_argument(sub_parser: argparse.ArgumentParser) -> None:
    sub_parser.add_argument(
        "-d",
        "--dataset",
        help="Dataset folder written by `synth`. Generated from the config when missing.",
        type=str,
        default=None,
    )


def _add_checkpoint_argument(sub_parser: argparse.ArgumentParser) -> None:
    sub_parser.add_argument(
        "-c",
        "--checkpoint",
        help="Checkpoint folder. A fresh model is initialised when missing.",
        type=str,
        default=None,
    )


# ##### CLUSTER Task
cluster_sub_parser = sub_parsers.add_parser(
    "cluster",
    parents=[base_subparser],
    help="Runs one clustering stage: pseudo labels, pseudo masks and memory.",
)
cluster_sub_parser.set_defaults(cls=ClusterTask, which="cluster")
_add_dataset_argument(cluster_sub_parser)
_add_checkpoint_argument(cluster_sub_parser)

# ##### TRAIN Task
train_sub_parser = sub_parsers.add_parser(
    "train", parents=[base_subparser], help="Runs one training stage on a clustering output."
)
train_sub_parser.set_defaults(cls=TrainTask, which="train")
_add_dataset_argument(train_sub_parser)
_add_checkpoint_argument(train_sub_parser)
train_sub_parser.add_argument(
    "--cluster-dir",
    help="Output folder of a `cluster` run on the same dataset and checkpoint.",
    type=str,
    required=True,
)

# ##### EVAL Task
eval_sub_parser = sub_parsers.add_parser(
    "eval", parents=[base_subparser], help="Writes the metrics report of a checkpoint."
)
eval_sub_parser.set_defaults(cls=EvaluationTask, which="eval")
_add_dataset_argument(eval_sub_parser)
_add_checkpoint_argument(eval_sub_parser)

# ##### PIPELINE Task
pipeline_sub_parser = sub_parsers.add_parser(
    "pipeline",
    parents=[base_subparser],
    help="Alternates clustering and training for the configured epochs, then evaluates.",
)
pipeline_sub_parser.set_defaults(cls=PipelineTask, which="pipeline")
_add_dataset_argument(pipeline_sub_parser)

# ##### ABLATE Task
ablate_sub_parser = sub_parsers.add_parser(
    "ablate",
    parents=[base_subparser],
    help="Runs the update-strategy, foreground and space correction experiments.",
)
ablate_sub_parser.set_defaults(cls=AblationTask, which="ablate")
ablate_sub_parser.add_argument(
    "--trials", help="Seeded trials per experiment.", type=int, default=5
)


# task handler
def handle(
    parser: argparse.ArgumentParser,
    test_cli_args: List[str] = list(),
) -> int:
    """Task handler factory.

    Args:
        parser (argparse.ArgumentParser): CLI argument parser object.
    """
    flag_parser = FlagParser(parser)
    flag_parser.consume_cli_arguments(test_cli_args=test_cli_args)

    # set up traceback manager for prettier errors
    ScwmTracebackManager(flag_parser)

    if flag_parser.log_level == "debug":
        log_manager.set_debug()

    scwm_config = ScwmConfig(flag_parser)
    scwm_config.load_config()

    task_cls = getattr(flag_parser.args, "cls", None)
    if task_cls is None or not issubclass(task_cls, BaseTask):
        raise NotImplementedError(f"{flag_parser.task} is not supported.")
    task: BaseTask = task_cls(flag_parser, scwm_config)
    return task.run()


def main(parser: argparse.ArgumentParser = parser, test_cli_args: List[str] = list()) -> int:
    """Just your boring main."""
    exit_code = 0
    _cli_args = test_cli_args or []
    # print version on every run unless doing `--version` which is better handled by argparse
    if "--version" not in sys.argv[1:]:
        print(version_message())
        print("\n")
        # print app logo with pyfiglet
        logo_str = str(pyfiglet.figlet_format("scwm-reid", font="slant"))
        console.print(logo_str, style="blue")
    exit_code = handle(parser, _cli_args)

    if exit_code > 0:
        logger.error("[red]The process you were running did not complete successfully.")
    return exit_code


if __name__ == "__main__":
    exit(main())
