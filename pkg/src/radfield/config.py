"""Strict conversion between nested config dataclasses and plain JSON dicts."""

from __future__ import annotations

import dataclasses
import typing

from .errors import ConfigError


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        elif isinstance(v, dict):
            v = dict(v)
        out[f.name] = v
    return out


def _to_tuple(v):
    if isinstance(v, list):
        return tuple(_to_tuple(x) for x in v)
    return v


def from_dict(cls, data: dict | None, base=None, where: str = ""):
    """Build ``cls`` from ``data`` on top of ``base`` (or the defaults). Unknown keys raise ConfigError.

    Nested dataclass fields accept partial dicts; values keep the base for missing keys.
    """
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object, got {type(data).__name__}")
    base = base if base is not None else cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + k for k in unknown)}")
    updates = {}
    for key, value in data.items():
        current = getattr(base, key)
        hint = hints.get(key)
        if dataclasses.is_dataclass(current):
            updates[key] = from_dict(type(current), value, current, where=f"{where}{key}.")
        elif isinstance(current, dict) and isinstance(value, dict):
            bad = sorted(set(value) - set(current))
            if bad:
                raise ConfigError(f"unknown key(s) {', '.join(f'{where}{key}.{k}' for k in bad)}")
            updates[key] = {**current, **value}
        elif isinstance(current, tuple) or (hint is not None and "tuple" in str(hint)):
            updates[key] = _to_tuple(value)
        else:
            updates[key] = value
    try:
        return dataclasses.replace(base, **updates)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc
