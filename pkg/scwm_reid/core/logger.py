"""Logger module: one file handler that keeps everything and a rich console handler."""

import logging
from pathlib import Path
from typing import List

from rich.logging import RichHandler

LOGGER_NAME = "scwm-reid"
LOG_FOLDER = "scwm_logs"
LOG_FILENAME = "scwm_log.log"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s - %(message)s"


class LogManager:
    """Owns the package logger.

    The logger itself never filters: the file handler takes DEBUG and up, the console handler INFO
    and up until `set_debug` is called. Python warnings (numpy overflow, invalid values in divide,
    ...) are captured and land in the same file.
    """

    def __init__(
        self, log_file_path: Path = Path(Path.cwd(), LOG_FOLDER), log_to_console: bool = True
    ):
        """
        Args:
            log_file_path (Path, optional): folder of the log file. Defaults to `./scwm_logs`.
            log_to_console (bool, optional): also log to stdout through rich. Defaults to True.
        """
        Path(log_file_path).mkdir(parents=True, exist_ok=True)
        self.log_filename = Path(log_file_path, LOG_FILENAME)

        file_handler = logging.FileHandler(self.log_filename)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
        handlers: List[logging.Handler] = [file_handler]

        if log_to_console:
            console_handler = RichHandler(
                rich_tracebacks=True,
                show_level=False,
                markup=True,
                enable_link_path=False,
                show_path=False,
            )
            console_handler.setLevel(logging.INFO)
            handlers.append(console_handler)

        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(logging.DEBUG)
        for handler in handlers:
            self.logger.addHandler(handler)

        logging.captureWarnings(True)
        logging.getLogger("py.warnings").addHandler(file_handler)

    def set_debug(self) -> None:
        """Every handler to DEBUG, used by `--log-level debug`."""
        self.logger.setLevel(logging.DEBUG)
        for handler in self.logger.handlers:
            handler.setLevel(logging.DEBUG)


log_manager = LogManager()

GLOBAL_LOGGER = log_manager.logger
