"""Experiment config loader: preset profiles, YAML or key=value files, and overrides."""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import yaml
from loguru import logger
from pydantic import ValidationError

from .checkpoints import parse_key_values
from .errors import ConfigError, StructuralError
from .schemas import ExperimentConfig

PROFILES_DIR = Path(__file__).parent / "profiles"
YAML_SUFFIXES = {".yaml", ".yml"}


def parse_scalar(text: str) -> Any:
    """JSON first (so ``1e-05`` stays a float), then a YAML scalar or flow list."""
    text = text.strip()
    if text == "":
        return None
    try:
        return json.loads(text)
    except ValueError:
        pass
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value {text!r}: {e}") from e


def nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """``{"train.seed": 1}`` -> ``{"train": {"seed": 1}}``."""
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        if any(not p for p in parts):
            raise ConfigError(f"malformed config key {key!r}")
        node = tree
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"config key {key!r} nests under a scalar")
            node = child
        node[parts[-1]] = value
    return tree


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; ``override`` wins on leaves."""
    merged: Dict[str, Any] = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_key_value_config(text: str) -> Dict[str, Any]:
    try:
        entries = parse_key_values(text)
    except StructuralError as e:
        raise ConfigError(str(e)) from e
    return nest({key: parse_scalar(value) for key, value in entries.items()})


def parse_assignments(assignments: Sequence[str]) -> Dict[str, Any]:
    """``--set`` values: each ``dotted.key=value``."""
    flat: Dict[str, Any] = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip()] = parse_scalar(value)
    return nest(flat)


def validate_config(data: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(dict(data))
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from e


def canonical_form(config: ExperimentConfig) -> str:
    """Flat key=value text, keys sorted, values as JSON."""
    flat = flatten(config.model_dump(mode="json"))
    lines = [f"{key}={json.dumps(flat[key])}" for key in sorted(flat)]
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_form(config).encode("utf-8")).hexdigest()


class ConfigLoader:
    """Loads experiment configs and caches parsed profiles."""

    def __init__(self, profiles_dir: Union[str, Path] = PROFILES_DIR):
        self.profiles_dir = Path(profiles_dir)
        self._cache: Dict[str, Dict[str, Any]] = {}

    def list_profiles(self) -> List[str]:
        if not self.profiles_dir.exists():
            logger.warning(f"Profiles directory {self.profiles_dir} does not exist")
            return []
        return sorted(p.stem for p in self.profiles_dir.glob("*.yaml"))

    def load_profile(self, name: str) -> Dict[str, Any]:
        if name in self._cache:
            return self._cache[name]
        path = self.profiles_dir / f"{name}.yaml"
        if not path.exists():
            available = ", ".join(self.list_profiles())
            raise ConfigError(f"unknown profile {name!r}; available: {available}")
        data = self.load_file(path)
        self._cache[name] = data
        logger.debug(f"Loaded profile: {name}")
        return data

    def load_file(self, path: Union[str, Path]) -> Dict[str, Any]:
        """A nested YAML file, or the flat key=value text format."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if path.suffix in YAML_SUFFIXES:
            try:
                data = yaml.safe_load(text)
            except yaml.YAMLError as e:
                raise ConfigError(f"YAML parsing error in {path}: {e}") from e
            if data is None:
                logger.warning(f"Empty config file: {path}")
                return {}
            if not isinstance(data, dict):
                raise ConfigError(f"{path} must hold a mapping at the top level")
            return data
        return parse_key_value_config(text)

    def build(
        self,
        profile: Optional[str] = None,
        config_path: Optional[Union[str, Path]] = None,
        assignments: Sequence[str] = (),
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> ExperimentConfig:
        """Profile < config file < ``--set`` assignments < dedicated flags."""
        data: Dict[str, Any] = {}
        if profile:
            data = merge(data, self.load_profile(profile))
        if config_path is not None:
            data = merge(data, self.load_file(config_path))
        data = merge(data, parse_assignments(assignments))
        if overrides:
            data = merge(data, nest({k: v for k, v in overrides.items() if v is not None}))
        return validate_config(data)

    def parse_canonical(self, text: str) -> ExperimentConfig:
        return validate_config(parse_key_value_config(text))
