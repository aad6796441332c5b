"""Experiment configuration: JSON schema, defaults and resolution."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigurationError

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_int0 = {"type": "integer", "minimum": 0}
_nullable_int1 = {"type": ["integer", "null"], "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "coherentfl experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _int0,
        "antennas": _int1,
        "snr_db": _num,
        "calibration": _pos,
        "lambda": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
        "coherence_time": _nullable_int1,
        "flexible_placement": {"type": "boolean"},
        "fresh_block_full_decode": {"type": "boolean"},
        "scheme": {"enum": ["conventional", "product", "additive"]},
        "fill": {"enum": ["zf", "plmf"]},
        "tau": _int1,
        "eta_local": _pos,
        "batch_size": _int1,
        "rounds": _int1,
        "pool": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "static": _int0,
                "dynamic": _int0,
                "coherence_times": {"type": ["array", "null"], "items": _int1},
                "dataset_sizes": {"type": ["array", "null"], "items": _int1},
                "k_total": _nullable_int1,
                "k_static": {"type": ["integer", "null"], "minimum": 0},
            },
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["synthetic", "mnist", "quadratic"]},
                "n": _int1,
                "features": _int1,
                "classes": {"type": "integer", "minimum": 2},
                "separation": {"type": "number", "minimum": 0},
                "partition": {"enum": ["iid", "label-shard"]},
                "shards_per_device": _int1,
                "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "images": {"type": ["string", "null"]},
                "labels": {"type": ["string", "null"]},
                "samples_per_device": _int1,
                "spread": {"type": "number", "minimum": 0},
                "centre_scale": {"type": "number", "minimum": 0},
                "eigenvalues": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["logistic", "mlp", "quadratic"]},
                "hidden": _int1,
                "l2": {"type": "number", "minimum": 0},
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seeds": {"type": "array", "items": _int0, "minItems": 1},
                "lambdas": {"type": "array", "items": {"type": "number", "minimum": 0,
                                                        "exclusiveMaximum": 1}},
                "target_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "power_sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "antennas": {"type": "array", "items": _int1, "minItems": 1},
                "coherence_times": {"type": "array", "items": _int1, "minItems": 1},
                "rho": {"type": "array", "items": _pos, "minItems": 1},
                "trials": _int1,
            },
        },
        "phy_validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trials": _int1,
                "mutate_shrinkage": _pos,
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probes": _int1,
                "trials": _int1,
                "f_star_factor": _int1,
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "antennas": 6,
    "snr_db": 20.0,
    "calibration": 1.0,
    "lambda": 0.3,
    "coherence_time": None,
    "flexible_placement": False,
    "fresh_block_full_decode": False,
    "scheme": "product",
    "fill": "plmf",
    "tau": 5,
    "eta_local": 0.2,
    "batch_size": 16,
    "rounds": 40,
    "pool": {"static": 5, "dynamic": 5, "coherence_times": None, "dataset_sizes": None,
             "k_total": None, "k_static": None},
    "dataset": {"kind": "synthetic", "n": 3000, "features": 23, "classes": 10,
                "separation": 3.0, "partition": "label-shard", "shards_per_device": 10,
                "test_fraction": 0.2, "images": None, "labels": None,
                "samples_per_device": 200, "spread": 1.0, "centre_scale": 1.0,
                "eigenvalues": [0.5, 1.0]},
    "model": {"kind": "logistic", "hidden": 32, "l2": 0.0},
    "compare": {"seeds": [0, 1, 2, 3, 4], "lambdas": [], "target_accuracy": 0.88},
    "power_sweep": {"antennas": [2, 4, 8], "coherence_times": [6, 20, 100],
                    "rho": [1.0, 10.0, 100.0], "trials": 20000},
    "phy_validate": {"trials": 100000, "mutate_shrinkage": 1.0},
    "analysis": {"probes": 4, "trials": 200, "f_star_factor": 10},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(overrides: dict | None = None) -> dict:
    """Validate ``overrides`` against the schema and merge them onto the defaults."""
    overrides = overrides or {}
    try:
        jsonschema.validate(overrides, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config error at {path}: {exc.message}") from None
    cfg = _merge(DEFAULTS, overrides)
    jsonschema.validate(cfg, SCHEMA)
    if cfg["lambda"] == 0:
        cfg["pool"]["dynamic"] = 0
    if cfg["dataset"]["kind"] == "quadratic":
        cfg["model"]["kind"] = "quadratic"
    return cfg


def load(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return resolve(raw)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()
