import os
import logging
from typing import Any, Dict, Iterable, List, Optional

from pydantic import ValidationError

from app.core.errors import ConfigurationError, format_location
from app.schemas.run_config import PRESETS, TrainConfig

logger = logging.getLogger(__name__)

NONE_TOKEN = "none"


def _format_value(value: Any) -> str:
    if value is None:
        return NONE_TOKEN
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    if raw.lower() == NONE_TOKEN:
        return None
    if "," in raw:
        return [part.strip() for part in raw.split(",")]
    return raw


def _flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, str]:
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = _format_value(value)
    return flat


def _nest(flat: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, raw in flat.items():
        node = nested
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"'{part}' is a value, not a section", field=key)
            node = child
        node[leaf] = _parse_value(raw)
    return nested


class ConfigRepo:
    """Run configuration as flat dotted `key=value` lines (`model.d=64`)."""

    def parse_lines(self, lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
        flat = {}
        for number, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigurationError(f"{source}:{number}: expected key=value, got {stripped!r}")
            key, value = stripped.split("=", 1)
            flat[key.strip()] = value.strip()
        return flat

    def to_flat(self, config: TrainConfig) -> Dict[str, str]:
        return _flatten(config.model_dump())

    def from_flat(self, flat: Dict[str, str]) -> TrainConfig:
        try:
            return TrainConfig.model_validate(_nest(flat))
        except ValidationError as e:
            first = e.errors()[0]
            raise ConfigurationError(first["msg"], field=format_location(first["loc"])) from e

    def serialize(self, config: TrainConfig) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.to_flat(config).items())

    def load_flat(self, path: str) -> Dict[str, str]:
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file '{path}' does not exist.")
        try:
            with open(path, 'r', encoding='utf-8') as file:
                return self.parse_lines(file, source=path)
        except UnicodeDecodeError as e:
            raise IOError(f"Error reading config file '{path}': {e}")

    def load(self, path: str) -> TrainConfig:
        return self.from_flat(self.load_flat(path))

    def save(self, config: TrainConfig, path: str) -> None:
        try:
            with open(path, 'w', encoding='utf-8') as file:
                file.write(self.serialize(config))
        except OSError as e:
            raise IOError(f"Error saving config '{path}': {e}")

    def resolve(self, path: Optional[str] = None, preset: str = "desk",
                overrides: Optional[Dict[str, str]] = None, assignments: Optional[List[str]] = None) -> TrainConfig:
        """Preset, then the config file, then `--set key=value` assignments, then explicit flag overrides."""
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset '{preset}', choose from {sorted(PRESETS)}", field="preset")
        flat = dict(PRESETS[preset])
        if path:
            flat.update(self.load_flat(path))
            logger.info(f"Loaded run config {path} over preset '{preset}'")
        if assignments:
            flat.update(self.parse_lines(assignments, source="--set"))
        flat.update({key: value for key, value in (overrides or {}).items() if value is not None})
        return self.from_flat(flat)


config_repo = ConfigRepo()
