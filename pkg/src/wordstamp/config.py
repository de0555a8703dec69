"""Flat ``key = value`` config files.

Blank lines and ``#`` comments are ignored. Values are coerced to the type of
the matching dataclass field. Keys may carry a section prefix
(``train.w_reg = 0.1``) when several dataclasses share one file.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_keyvalue(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def coerce(value: str, kind: Any) -> Any:
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool, "str": str}.get(
        str(kind).split("|")[0].strip(), str)
    if kind is bool:
        v = value.lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def from_keyvalue(cls, values: dict[str, str], prefix: str = "", strict: bool = True):
    """Build dataclass ``cls`` from ``values``, keeping only keys under ``prefix``."""
    return cls(**keyvalue_kwargs(cls, values, prefix, strict))


def keyvalue_kwargs(cls, values: dict[str, str], prefix: str = "", strict: bool = True) -> dict:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if prefix:
            if not key.startswith(prefix + "."):
                continue
            key = key[len(prefix) + 1:]
        if key not in fields:
            if strict:
                raise KeyError(f"unknown {cls.__name__} key {key!r}")
            continue
        kwargs[key] = coerce(value, fields[key].type)
    return kwargs


def to_keyvalue(obj, prefix: str = "", skip: tuple[str, ...] = ()) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        value = getattr(obj, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        key = f"{prefix}.{f.name}" if prefix else f.name
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
