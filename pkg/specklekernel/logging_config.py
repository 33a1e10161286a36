"""Logging configuration for experiment runs."""

import json
import logging
import logging.config
import sys
from pathlib import Path
from typing import Any

import yaml

PACKAGE_LOGGER = "specklekernel"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger(__name__)


def _read_dict_config(config_file: Path) -> dict[str, Any]:
    with open(config_file, encoding="utf-8") as f:
        if config_file.suffix.lower() in [".yaml", ".yml"]:
            config_dict = yaml.safe_load(f)
        else:
            config_dict = json.load(f)
    if not isinstance(config_dict, dict):
        raise ValueError("logging config does not resolve to a mapping")
    return config_dict


def setup_logging(
    level: str = "INFO", quiet: bool = False, config_file: Path | None = None
) -> logging.Logger:
    """Attach a stderr handler to the ``specklekernel`` logger.

    Records still propagate to the root logger, so handlers installed by an
    embedding application (or pytest's ``caplog``) keep receiving them. Calling
    this again replaces the handler installed by the previous call.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        quiet: If True, only errors are shown.
        config_file: Optional external ``dictConfig`` file (YAML/JSON). When it
            loads, it replaces the default handler entirely.

    Returns:
        The configured package logger.
    """
    package_logger = logging.getLogger(PACKAGE_LOGGER)

    if config_file and config_file.exists():
        try:
            logging.config.dictConfig(_read_dict_config(config_file))
            logger.info(f"Loaded logging config from {config_file}")
            return package_logger
        except Exception as e:
            _install_stderr_handler(package_logger, "WARNING")
            logger.error(f"Failed to load logging config from {config_file}: {e}")
            logger.warning("Falling back to basic logging configuration")
            return package_logger

    _install_stderr_handler(package_logger, "ERROR" if quiet else level)

    # numpy floating-point warnings from the solvers go through logging
    logging.captureWarnings(True)
    logging.getLogger("py.warnings").setLevel(logging.WARNING)
    return package_logger


def _install_stderr_handler(package_logger: logging.Logger, level: str) -> None:
    for handler in list(package_logger.handlers):
        if getattr(handler, "_specklekernel", False):
            package_logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._specklekernel = True  # type: ignore[attr-defined]
    package_logger.addHandler(handler)
    package_logger.setLevel(getattr(logging, level.upper()))
