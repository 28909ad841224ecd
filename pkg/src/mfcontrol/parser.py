"""Utilities for parsing flat ``key = value`` run configuration files."""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any


class ConfigParseError(ValueError):
    """Raised when a configuration file cannot be parsed."""


def _value(raw: str) -> str | list[str]:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    if "," in raw:
        return [part.strip() for part in raw.split(",") if part.strip()]
    return raw


def _insert(tree: dict[str, Any], path: list[str], value: Any, full_key: str) -> None:
    node = tree
    for index, part in enumerate(path[:-1]):
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ValueError(f"'{'.'.join(path[: index + 1])}' is both a value and a section")
        node = child
    leaf = path[-1]
    if leaf in node:
        kind = "section" if isinstance(node[leaf], dict) else "value"
        raise ValueError(f"'{full_key}' is already defined as a {kind}")
    node[leaf] = value


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse config text into a nested dictionary.

    Lines are ``dotted.key = value``; ``#`` starts a comment, blank lines are skipped and
    comma-separated values become lists. Values stay strings; the settings models coerce
    them.

    Args:
        text: The config file content

    Returns:
        Nested dictionary keyed by the dotted path components

    Raises:
        ConfigParseError: Listing every malformed line
    """
    if text.startswith("\ufeff"):
        text = text[1:]

    tree: dict[str, Any] = {}
    errors: list[str] = []
    for line_num, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            if "=" not in stripped:
                raise ValueError("expected 'key = value'")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            path = key.split(".")
            if not key or any(not part.strip() for part in path):
                raise ValueError(f"invalid key '{key}'")
            _insert(tree, [part.strip() for part in path], _value(raw), key)
        except ValueError as e:
            errors.append(f"Line {line_num}: {e}")

    if errors:
        raise ConfigParseError("Config parsing errors:\n  " + "\n  ".join(errors))
    return tree


def read_config_file(path: Path) -> dict[str, Any]:
    """Read and parse a config file.

    Raises:
        ConfigParseError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigParseError(f"Config file '{path}' not found")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _format(value: Any) -> str | None:
    if value is None:
        return None
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        if not value:
            return None
        return ", ".join(_format(v) or "" for v in value) + ("," if len(value) == 1 else "")
    return str(value)


def format_config(tree: dict[str, Any], prefix: str = "") -> str:
    """Inverse of :func:`parse_config_text` for nested plain data; ``None`` values are omitted."""
    lines: list[str] = []
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            nested = format_config(value, prefix=f"{full}.")
            if nested:
                lines.append(nested)
            continue
        text = _format(value)
        if text is not None:
            lines.append(f"{full} = {text}")
    return "\n".join(lines)
