import logging


def test_log_file_is_created():
    from scwm_reid.core.logger import LOG_FILENAME, log_manager

    assert log_manager.log_filename.name == LOG_FILENAME
    assert log_manager.log_filename.is_file()


def test_set_debug_lowers_every_handler():
    from scwm_reid.core.logger import GLOBAL_LOGGER as logger
    from scwm_reid.core.logger import log_manager

    log_manager.set_debug()
    assert logger.level == logging.DEBUG
    assert all(handler.level == logging.DEBUG for handler in logger.handlers)
