import os
import sys
from typing import Optional

from loguru import logger

from app.core.config import config

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}"


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Install the stderr sink and, when a log file is configured, a rotating file sink.

    Reports are written to stdout, so no sink ever targets it.
    """
    level = (level or config.LOG_LEVEL).upper()
    log_file = config.LOG_FILE if log_file is None else log_file

    logger.remove()
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=level)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        logger.add(
            log_file,
            rotation=config.LOG_MAX_SIZE,
            retention=config.LOG_BACKUP_COUNT,
            format=FILE_FORMAT,
            level=level,
            encoding="utf-8",
        )


configure_logging()
