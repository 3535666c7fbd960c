"""Helpers for building config dataclasses from parsed YAML."""

from __future__ import annotations

from dataclasses import fields


def coerce_fields(cls, d: dict) -> dict:
    """Cast numeric config values; YAML reads ``1e-3`` (no dot) as a string."""
    kinds = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, value in d.items():
        kind = kinds.get(key)
        if kind == "float" and isinstance(value, (str, int)) and not isinstance(value, bool):
            value = float(value)
        elif kind == "int" and isinstance(value, str):
            value = int(value)
        out[key] = value
    return out
