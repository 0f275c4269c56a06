import logging
from pathlib import Path
from typing import Optional

from nlkw_lab.core.entities import LogSetting

logger: logging.Logger | None = None

DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def get_logger() -> logging.Logger:
    """
    Get the logger instance.
    """
    global logger
    if logger is None:
        init_logger()
    assert logger is not None
    return logger


def init_logger(
    log_to_console: bool = True,
    enable_file_log: bool = False,
    log_dir: Optional[str] = None,
) -> LogSetting:
    """
    Initialize the logger with a specific format and level.

    If `log_to_console` is True, logs go to stderr.
    If `enable_file_log` is True, logs are also saved to nlkw_lab.log under
    `log_dir` (default: logs/ at the project root).
    """
    global logger
    if logger is None:
        logger = logging.getLogger("nlkw_lab")
        logger.setLevel(logging.INFO)
        if log_to_console:
            logging.basicConfig(level=logging.INFO, format=DEFAULT_LOG_FORMAT)
            logger.info("Logger initialized. %s", "Logging to console")
        if enable_file_log:
            directory = (
                Path(log_dir)
                if log_dir
                else Path(Path(__file__).parent / "../../logs").resolve()
            )
            directory.mkdir(parents=True, exist_ok=True)
            log_file = directory / "nlkw_lab.log"
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(logging.Formatter(DEFAULT_LOG_FORMAT))
            logger.addHandler(file_handler)
            logger.info("Logger initialized. Logging to file: %s", log_file)
        if not log_to_console and not enable_file_log:
            logger.propagate = False
            logger.disabled = True
    return LogSetting(
        log_to_console=log_to_console, enable_file_logging=enable_file_log
    )


def reset_logger() -> None:
    """Drop the process-wide logger so the next init_logger starts fresh"""
    global logger
    if logger is not None:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()
        logger.disabled = False
        logger.propagate = True
    logger = None
