"""
DeskMT: Logging Configuration
=============================
Console logging plus optional rotating file logs, one rotating log per
training run and hashing helper for request text.

Author: DeskMT Team
Date: 2026-02-02
"""

import os
import logging
import hashlib
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Union

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("LOG_FILE", "")
LOG_MAX_SIZE_MB = int(os.getenv("LOG_MAX_SIZE_MB", "10"))
LOG_BACKUP_COUNT = int(os.getenv("LOG_BACKUP_COUNT", "5"))

ROOT_LOGGER = "deskmt"

_FORMATTER = logging.Formatter(
    '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)


def hash_sensitive_data(data: Any) -> str:
    """
    Hash data that should not appear verbatim in logs.

    Args:
        data: Any data to hash (will be converted to string)

    Returns:
        First 8 characters of SHA256 hash
    """
    data_str = str(data)
    return hashlib.sha256(data_str.encode()).hexdigest()[:8]


def _rotating_handler(path: Union[str, Path]) -> RotatingFileHandler:
    handler = RotatingFileHandler(
        path,
        maxBytes=LOG_MAX_SIZE_MB * 1024 * 1024,
        backupCount=LOG_BACKUP_COUNT,
        encoding="utf-8",
    )
    handler.setLevel(getattr(logging, LOG_LEVEL))
    handler.setFormatter(_FORMATTER)
    return handler


def setup_logging() -> logging.Logger:
    """
    Configure the package logger.

    Creates a console handler and, when LOG_FILE is set, a rotating file
    handler next to it.

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(getattr(logging, LOG_LEVEL))

    # Prevent duplicate handlers
    if logger.handlers:
        return logger

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(_FORMATTER)
    logger.addHandler(console_handler)

    if LOG_FILE:
        logger.addHandler(_rotating_handler(LOG_FILE))

    logger.debug(f"Logging configured: level={LOG_LEVEL}, file={LOG_FILE or '-'}")

    return logger


def attach_file_handler(path: Union[str, Path]) -> logging.Handler:
    """
    Mirror the package log into a rotating file, e.g. a run's train.log.

    Returns:
        The handler, to be passed to detach_file_handler when the run ends
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    handler = _rotating_handler(path)
    logging.getLogger(ROOT_LOGGER).addHandler(handler)
    return handler


def detach_file_handler(handler: logging.Handler) -> None:
    logging.getLogger(ROOT_LOGGER).removeHandler(handler)
    handler.close()


def get_logger(name: str = ROOT_LOGGER) -> logging.Logger:
    """
    Get a logger inside the package hierarchy.

    Args:
        name: "deskmt" or a dotted child such as "deskmt.trainer"

    Example:
        >>> logger = get_logger("deskmt.corpus")
        >>> logger.info("Cleaning started")
    """
    return logging.getLogger(name)


# Initialize logging on module import
logger = setup_logging()
