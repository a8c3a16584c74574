"""Flat ``key = value`` encoding of dataclass configs."""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from pathlib import Path

from laser.errors import ConfigError


def _coerce(raw: str, annotation, key: str):
    text = raw.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if text.lower() in ("", "none"):
            return None
        return _coerce(text, inner[0], key)
    try:
        if annotation is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        if annotation is str:
            return text
        if origin in (tuple, list):
            item = args[0] if args else str
            parts = [p for p in text.replace(",", " ").split() if p]
            return tuple(_coerce(p, item, key) for p in parts)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(annotation, '__name__', annotation)}") from None
    raise ConfigError(f"{key}: unsupported field type {annotation!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def from_mapping(cls, mapping: dict[str, str], section: str = ""):
    """Build dataclass ``cls`` from string values; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    prefix = f"[{section}] " if section else ""
    for key in mapping:
        if key not in names:
            raise ConfigError(f"{prefix}unknown key {key!r}; valid keys: {', '.join(sorted(names))}")
    kwargs = {k: _coerce(v, hints[k], f"{prefix}{k}") for k, v in mapping.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}{exc}") from None


def to_lines(obj) -> list[str]:
    return [f"{f.name} = {_format(getattr(obj, f.name))}" for f in dataclasses.fields(obj) if f.init]


def parse_flat(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def save_flat(obj, path) -> None:
    Path(path).write_text("\n".join(to_lines(obj)) + "\n")


def load_flat(cls, path):
    path = Path(path)
    return from_mapping(cls, parse_flat(path.read_text(), str(path)))


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
