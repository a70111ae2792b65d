"""Holds handlers to manage error tracebacks."""
from pathlib import Path

import numpy as np
import pretty_errors

from scwm_reid.core.flags import FlagParser

NUMPY_SOURCE = str(Path(np.__file__).parent)


class ScwmTracebackManager:
    """Pretty tracebacks for CLI runs.

    Shape and value errors usually surface inside numpy, several frames below the scwm-reid code
    that passed the wrong array. By default numpy's own frames are hidden and only the last frame
    is shown; `--verbose` shows ten frames, numpy included, with their local variables.
    """

    QUIET_STACK_DEPTH = 1
    VERBOSE_STACK_DEPTH = 10

    def __init__(self, flags: FlagParser) -> None:
        self.verbose = flags.verbose
        self.stack_depth = self.VERBOSE_STACK_DEPTH if self.verbose else self.QUIET_STACK_DEPTH

        pretty_errors.configure(
            separator_character="*",
            line_number_first=False,
            display_link=True,
            lines_before=3 if self.verbose else 1,
            lines_after=1,
            line_color=pretty_errors.RED + "> " + pretty_errors.default_config.line_color,
            code_color="  " + pretty_errors.default_config.line_color,
            truncate_code=not self.verbose,
            display_locals=self.verbose,
            stack_depth=self.stack_depth,
            display_arrow=True,
        )
        if not self.verbose:
            pretty_errors.blacklist(NUMPY_SOURCE)
