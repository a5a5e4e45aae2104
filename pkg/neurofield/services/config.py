"""
Configuration loader for YAML (or JSON) model documents.

Documents are parsed with ``yaml.safe_load`` (JSON is a subset of YAML),
dotted ``key=value`` overrides are applied to the raw document, and the
result is validated against :class:`NeurofieldConfig`.
"""

import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

import yaml
from pydantic import ValidationError

from neurofield.models.schemas import NeurofieldConfig, validate_config
from neurofield.services.errors import ConfigurationError

logger = logging.getLogger(__name__)


def load_yaml_file(file_path: Path) -> Dict[str, Any]:
    """Load and parse a YAML or JSON document."""
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except Exception as e:
        raise ConfigurationError(f"Failed to load config file {file_path}: {e}")

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {file_path} must contain a mapping at top level")
    return data


def parse_override(item: str) -> Tuple[str, Any]:
    """
    Split a ``dotted.key=value`` override.

    The value is parsed with YAML so numbers, booleans and lists keep their type.
    """
    if "=" not in item:
        raise ConfigurationError(f"Override '{item}' is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigurationError(f"Override '{item}' has an empty key segment")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Override '{item}' has an unparsable value: {e}")
    return key, value


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Return a deep copy of ``data`` with dotted-key overrides applied.

    Intermediate mappings are created as needed; unknown keys are left for
    schema validation to reject.
    """
    result = copy.deepcopy(dict(data))
    for key, value in overrides.items():
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            elif not isinstance(child, dict):
                raise ConfigurationError(f"Override '{key}': '{part}' is not a section")
            node = child
        node[parts[-1]] = value
    return result


def validate_document(data: Dict[str, Any], source: Union[str, Path]) -> NeurofieldConfig:
    """Validate a parsed document, wrapping schema errors."""
    try:
        return validate_config(data)
    except ValidationError as e:
        raise ConfigurationError(f"Validation failed for {source}: {e}")


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Iterable[str]] = None,
) -> NeurofieldConfig:
    """
    Load, override and validate a configuration document.

    Args:
        path: YAML or JSON document; ``None`` uses the built-in defaults
        overrides: ``dotted.key=value`` strings applied in order

    Returns:
        NeurofieldConfig: Validated configuration

    Raises:
        ConfigurationError: If the file cannot be read or fails validation
    """
    data: Dict[str, Any] = {}
    source: Union[str, Path] = "<defaults>"
    if path is not None:
        source = Path(path)
        if not source.exists():
            raise ConfigurationError(f"Config file does not exist: {source}")
        data = load_yaml_file(source)

    parsed = dict(parse_override(item) for item in (overrides or []))
    if parsed:
        logger.info(f"Applying {len(parsed)} override(s): {sorted(parsed)}")
        data = apply_overrides(data, parsed)
    return validate_document(data, source)


def config_hash(config: NeurofieldConfig) -> str:
    """SHA-256 of the canonical JSON rendering of a configuration."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
