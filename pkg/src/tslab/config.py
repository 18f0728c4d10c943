"""JSON model configuration: loading, validation and the bundled examples."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .expr import ExprSyntaxError, parse
from .sicnn import Activation, ModelError, SicnnModel
from .timescale import TimeScaleError, make_timescale

_CELL = {"type": ["string", "number"]}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _CELL, "minItems": 1}, "minItems": 1}
_NUM_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_ACT = {
    "type": "object",
    "required": ["expr", "lipschitz", "bound"],
    "properties": {"expr": {"type": "string"}, "lipschitz": {"type": "number", "minimum": 0},
                   "bound": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["lattice", "time_scale", "coefficients", "activation"],
    "properties": {
        "name": {"type": "string"},
        "lattice": {
            "type": "object", "required": ["m", "n"],
            "properties": {"m": {"type": "integer", "minimum": 1}, "n": {"type": "integer", "minimum": 1},
                           "r": {"type": "integer", "minimum": 0}, "p": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "time_scale": {
            "type": "object", "required": ["generator", "window"],
            "properties": {
                "generator": {"type": "string"},
                "params": {"type": "object"},
                "window": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "coefficients": {
            "type": "object", "required": ["a", "B", "C", "L", "tau", "delta"],
            "properties": {k: {"type": "array"} for k in ("a", "B", "C", "L", "tau", "delta")},
            "additionalProperties": False,
        },
        "activation": {"type": "object", "required": ["f", "g"],
                       "properties": {"f": _ACT, "g": _ACT}, "additionalProperties": False},
        "overrides": {
            "type": "object",
            "propertyNames": {"pattern": "^(a|B|C|L|tau|delta)_(lower|upper)$"},
            "additionalProperties": {"type": "array"},
        },
        "delay_policy": {"enum": ["strict", "snap"]},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "reference": {"type": "object"},
    },
    "additionalProperties": False,
}

EXAMPLES = {1: "example1.json", 2: "example2.json"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


def example_path(example_id: int) -> Path:
    if example_id not in EXAMPLES:
        raise ConfigError(f"unknown example {example_id}; choose from {sorted(EXAMPLES)}")
    return Path(str(resources.files("tslab") / "data" / EXAMPLES[example_id]))


def read_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validate(data)
    return data


def validate(data: dict) -> None:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from None


def model_from_dict(data: dict) -> SicnnModel:
    validate(data)
    lat = data["lattice"]
    m, n = lat["m"], lat["n"]
    tsd = data["time_scale"]
    params = tsd.get("params", {})
    try:
        ts = make_timescale(tsd["generator"], *tsd["window"], **params)
    except (TimeScaleError, ValueError, TypeError) as exc:
        raise ConfigError(f"time_scale: {exc}") from None
    co = data["coefficients"]
    try:
        f = Activation.from_text(**data["activation"]["f"])
        g = Activation.from_text(**data["activation"]["g"])
        for name, tab in co.items():
            for cell in np.asarray(tab, dtype=object).ravel():
                if isinstance(cell, str):
                    parse(cell)
        overrides = {k: np.asarray(v, dtype=float) for k, v in data.get("overrides", {}).items()}
        return SicnnModel(m, n, lat.get("r", 1), lat.get("p", 1), co["a"], co["B"], co["C"], co["L"],
                          co["tau"], co["delta"], f, g, ts, declared=overrides,
                          delay_policy=data.get("delay_policy", "strict"), name=data.get("name", ""))
    except ExprSyntaxError as exc:
        raise ConfigError(f"expression error: {exc}") from None
    except (ModelError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_model(path) -> tuple[SicnnModel, dict]:
    data = read_config(path)
    return model_from_dict(data), data


def load_example(example_id: int) -> tuple[SicnnModel, dict]:
    return load_model(example_path(example_id))
