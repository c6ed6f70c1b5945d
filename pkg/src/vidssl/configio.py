"""Strict dataclass <-> JSON config plumbing and config hashing.

Configs are plain (frozen) dataclasses.  Loading is strict: unknown keys are
rejected so a typo in a config file fails fast instead of silently using a
default.  The hash of the canonical JSON form is stamped into every artifact
a run produces.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing


class ConfigError(ValueError):
    """A config file or dict failed schema validation."""


def to_jsonable(obj):
    """Recursively convert a dataclass (or container) to JSON-ready values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [to_jsonable(v) for v in items]
    return obj


def _coerce(value, annotation):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if annotation in (typing.Any, None):
        return value
    if origin is typing.Union:  # Optional[...] and unions
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError(f"null not allowed for {annotation}")
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg)
            except (ConfigError, TypeError, ValueError):
                continue
        raise ConfigError(f"could not interpret {value!r} as {annotation}")
    if dataclasses.is_dataclass(annotation):
        return from_dict(annotation, value)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list for {annotation}, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0]) for v in value)
        if args and len(value) != len(args):
            raise ConfigError(f"expected {len(args)} items for {annotation}, got {len(value)}")
        return tuple(_coerce(v, a) for v, a in zip(value, args)) if args else tuple(value)
    if origin in (list,):
        return [_coerce(v, args[0]) if args else v for v in value]
    if origin is dict:
        key_t = args[0] if args else str
        val_t = args[1] if len(args) > 1 else typing.Any
        return {_coerce(k, key_t): _coerce(v, val_t) for k, v in value.items()}
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}")
        return float(value)
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}")
        return value
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}")
        return value
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict):
    """Instantiate dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls} is not a dataclass")
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name])
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"missing required key {f.name!r} for {cls.__name__}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable short hash of a config's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
