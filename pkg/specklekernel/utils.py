"""Utility functions for loading specklekernel run configurations."""

import json
import logging
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from .types import RunConfig

logger = logging.getLogger(__name__)


def load_config(path: Path) -> dict[str, Any]:
    """Load run settings from a YAML or JSON file.

    The file holds a flat mapping of ``RunConfig`` field names (``command``
    may be omitted; the CLI fills it in). Values are validated here and again
    when the CLI merges them with its flags.

    Args:
        path: Path to the configuration file.

    Returns:
        The mapping read from the file.

    Raises:
        FileNotFoundError: If the configuration file does not exist.
        ValueError: If the format is unsupported, the content is malformed or
            not a mapping, or a key is not a RunConfig field.
    """
    if not path.exists():
        raise FileNotFoundError(f"Configuration file not found: {path}")

    logger.debug(f"Reading configuration from: {path}")
    file_content = path.read_text(encoding="utf-8")

    try:
        data: dict
        if path.suffix.lower() in [".yaml", ".yml"]:
            data = yaml.safe_load(file_content)
            if not isinstance(data, dict):
                raise ValueError("YAML content does not resolve to a dictionary.")
        elif path.suffix.lower() == ".json":
            data = json.loads(file_content)
            if not isinstance(data, dict):
                raise ValueError("JSON content does not resolve to an object.")
        else:
            raise ValueError(f"Unsupported configuration file format: {path.suffix}")
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ValueError(f"Invalid file format in '{path.name}': {e}")

    unknown = sorted(set(data) - set(RunConfig.model_fields))
    if unknown:
        raise ValueError(
            f"Configuration validation failed for '{path.name}': "
            f"unknown keys {', '.join(unknown)}"
        )
    try:
        RunConfig.model_validate({"command": "rf-sweep", **data})
    except ValidationError as e:
        raise ValueError(f"Configuration validation failed for '{path.name}': {e}")
    logger.info(f"Loaded {len(data)} setting(s) from '{path.name}'")
    return data
