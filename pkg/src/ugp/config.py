"""Flat key=value configuration files for the train command.

Format: one `key = value` per line, `#` starts a comment, blank lines are
ignored. Keys are documented in the README.
"""

from pathlib import Path

from .errors import ConfigurationError
from .net import LayerSpec


def parse_config(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigurationError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {value!r}")


def parse_assignment(value: str) -> dict[str, int]:
    """"shooter-a:4,shooter-b:4" -> {"shooter-a": 4, "shooter-b": 4}"""
    assignment: dict[str, int] = {}
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigurationError(f"task entry {part!r} must look like name:actors")
        name, count = part.rsplit(":", 1)
        assignment[name.strip()] = int(count)
    if not assignment:
        raise ConfigurationError("no tasks given")
    return assignment


def parse_trunk(value: str) -> tuple[LayerSpec, ...]:
    """"dense:64,relu,conv:8:4:2" -> layer specs."""
    layers = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        fields = part.split(":")
        kind = fields[0]
        if kind == "relu":
            layers.append(LayerSpec.relu())
        elif kind == "dense":
            layers.append(LayerSpec.dense(int(fields[1])))
        elif kind == "conv":
            filters, size = int(fields[1]), int(fields[2])
            stride = int(fields[3]) if len(fields) > 3 else 1
            layers.append(LayerSpec.conv(filters, size, stride))
        else:
            raise ConfigurationError(f"unknown trunk layer {part!r}")
    if not layers:
        raise ConfigurationError("empty trunk spec")
    return tuple(layers)
