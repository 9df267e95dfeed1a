"""Loading experiment files into ExperimentConfig.

Two file shapes are accepted and end up as the same dotted-key map:

    # flat key = value text
    privacy.sigma = 0.8
    compress.kind = topk

or a YAML mapping (``.yaml`` / ``.yml``) whose nesting is flattened.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .models import ExperimentConfig

logger = logging.getLogger(__name__)

YAML_SUFFIXES = (".yaml", ".yml")
HASH_EXCLUDED_SECTIONS = ("logging",)


def flatten(nested: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in nested.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for dotted, value in flat.items():
        section, _, key = dotted.partition(".")
        nested.setdefault(section, {})[key] = value
    return nested


KNOWN_KEYS = tuple(flatten(ExperimentConfig().model_dump()))


def _coerce(value: Any) -> Any:
    # YAML 1.1 reads "1e-5" as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    if isinstance(value, list):
        return [_coerce(v) for v in value]
    return value


def parse_value(raw: str) -> Any:
    try:
        return _coerce(yaml.safe_load(raw))
    except yaml.YAMLError:
        return raw


def parse_flat(text: str, path: Optional[str] = None) -> Dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    flat: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'", path)
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", path)
        flat[key] = parse_value(raw.strip())
    return flat


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Raw dotted-key map of an experiment file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", str(path))
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}", str(path)) from e

    if path.suffix in YAML_SUFFIXES:
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML: {e}", str(path)) from e
        if not isinstance(loaded, Mapping):
            raise ConfigError("YAML config must be a mapping", str(path))
        return {key: _coerce(value) for key, value in flatten(loaded).items()}
    return parse_flat(text, str(path))


def build_config(flat: Mapping[str, Any], path: Optional[str] = None) -> ExperimentConfig:
    unknown = sorted(set(flat) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}", path)
    try:
        return ExperimentConfig(**unflatten(flat))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(problems, path) from e


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """ExperimentConfig from a file, or the defaults when no path is given."""
    if path is None:
        return ExperimentConfig()
    config = build_config(read_config_file(path), str(path))
    logger.info(f"Loaded config {path} ({config_hash(config)[:12]})")
    return config


def resolved_flat(config: ExperimentConfig) -> Dict[str, Any]:
    return flatten(config.model_dump(mode="json"))


def with_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """Rebuild ``config`` with some dotted keys replaced."""
    flat = resolved_flat(config)
    flat.update(overrides)
    return build_config(flat)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the resolved config as canonical JSON; logging keys excluded."""
    flat = {
        key: value
        for key, value in resolved_flat(config).items()
        if key.split(".", 1)[0] not in HASH_EXCLUDED_SECTIONS
    }
    canonical = json.dumps(flat, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def describe_keys() -> str:
    """Recognized keys with their defaults, for --help."""
    defaults = flatten(ExperimentConfig().model_dump(mode="json"))
    return "\n".join(f"  {key} (default: {json.dumps(defaults[key])})" for key in KNOWN_KEYS)
