"""Reading configuration files into typed config tuples."""

import json
import os
from typing import Any, Mapping, Type, TypeVar

import yaml

from .errors import ConfigurationError

TConfig = TypeVar("TConfig")


def read_yaml(path: str) -> Any:
    """Parse a YAML file, reporting syntax errors with their location."""
    try:
        with open(path, "r") as file:
            return yaml.safe_load(file)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        location = "line {}, column {}".format(mark.line + 1, mark.column + 1) if mark else None
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigurationError("Malformed config {}: {}".format(path, problem), location)


def read_json(path: str) -> Any:
    try:
        with open(path, "r") as file:
            return json.load(file)
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            "Malformed config {}: {}".format(path, e.msg), "line {}, column {}".format(e.lineno, e.colno))


def read_config(path: str) -> Any:
    """Read a ``.json`` config with the JSON parser and anything else as YAML."""
    if not os.path.exists(path):
        raise ConfigurationError("No config file at {}".format(path))
    if path.endswith(".json"):
        return read_json(path)
    return read_yaml(path)


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot ("1e-4") as strings
            try:
                value = float(value)
            except ValueError:
                pass
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigurationError("{}.{} must be {}, got {!r}".format(section, key, type(default).__name__, value))
    return value


def from_dict(cls: Type[TConfig], data: Any, section: str) -> TConfig:
    """Build a config tuple from a mapping, rejecting unknown keys and wrongly typed values."""
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigurationError("{} must be a mapping, got {!r}".format(section, data))
    fields = cls._fields  # type: ignore
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigurationError("Unknown key(s) in {}: {}".format(section, ", ".join(unknown)))
    defaults = cls._field_defaults  # type: ignore
    values = {key: _coerce(section, key, value, defaults.get(key)) for key, value in data.items()}
    config = cls(**values)  # type: ignore
    config.validate()  # type: ignore
    return config
