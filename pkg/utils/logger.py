# utils/logger.py
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Mapping, Optional, Union

_LOGGER_INITIALIZED = False

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# librosa pulls in numba, which logs every JIT compilation at DEBUG
QUIET_LOGGERS: Mapping[str, int] = {
    'numba': logging.WARNING,
    'matplotlib': logging.WARNING,
    'PIL': logging.WARNING,
}


def _as_level(level: Union[int, str]) -> int:
    if isinstance(level, int):
        return level
    value = logging.getLevelName(str(level).upper())
    if not isinstance(value, int):
        raise ValueError(f"Unknown log level: {level}")
    return value


def setup_logger(
    log_file: Optional[Union[str, Path]] = None,
    level: Union[int, str] = logging.INFO,
    quiet: Optional[Mapping[str, int]] = None,
) -> logging.Logger:
    """
    Configure the root logger once per process.

    Console output goes to stdout at `level`. With a log file, a rotating
    file handler records everything down to DEBUG (per-batch loss lines and
    skipped manifest entries end up there). Python warnings raised by
    librosa and torch are routed through logging.
    """
    global _LOGGER_INITIALIZED

    if _LOGGER_INITIALIZED:
        return logging.getLogger()

    level = _as_level(level)
    root_logger = logging.getLogger()
    root_logger.setLevel(min(level, logging.DEBUG) if log_file else level)

    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            filename=log_path,
            maxBytes=5 * 1024 * 1024,  # 5MB
            backupCount=3,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        file_handler.setLevel(logging.DEBUG)
        root_logger.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)
    root_logger.addHandler(console_handler)

    logging.captureWarnings(True)
    for logger_name, log_level in {**QUIET_LOGGERS, **(quiet or {})}.items():
        logging.getLogger(logger_name).setLevel(log_level)

    _LOGGER_INITIALIZED = True
    return root_logger
