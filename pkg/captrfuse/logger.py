"""
Logging configuration for captrfuse.
Uses loguru; file sinks are only added when CAPTRFUSE_LOG_DIR is set so that
commands never write outside their output directory by default.
"""
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from captrfuse.config import LOG_LEVELS, settings


def setup_logging(level: Optional[str] = None, log_dir: Optional[Path] = None):
    """Configure application logging."""
    level = LOG_LEVELS.get((level or settings.log).lower(), settings.log_level)
    log_dir = log_dir or settings.log_dir

    # Remove default logger
    logger.remove()

    # Console logging with color
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level,
        colorize=True,
        filter=lambda record: "audit" not in record["extra"],
    )

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)

        logger.add(
            log_dir / "error.log",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level="ERROR",
            rotation="10 MB",
            retention="1 week",
        )

        logger.add(
            log_dir / "app.log",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level="DEBUG" if settings.debug else level,
            rotation="50 MB",
            retention="1 week",
        )

        # Phase audit log: which parameter groups a training step was allowed to touch
        logger.add(
            log_dir / "audit.log",
            format="{time:YYYY-MM-DD HH:mm:ss} | {extra[phase]} | step={extra[step]} | {message}",
            level="DEBUG",
            filter=lambda record: "audit" in record["extra"],
            rotation="10 MB",
        )

    logger.debug(f"Logging configured. Level: {level}")

    return logger


def configure_logging(level: Optional[str] = None, log_dir: Optional[Path] = None):
    """Re-apply sinks after CLI flags or env overrides are known."""
    return setup_logging(level, log_dir)


# Initialize logger
log = setup_logging()
