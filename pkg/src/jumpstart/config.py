"""Experiment configuration: JSON schema, defaults, and object construction."""
from __future__ import annotations

import copy
import hashlib
import json
import os

import jsonschema

SCHEMA_VERSION = 1

_num = {"type": "number"}
_int = {"type": "integer"}
_cell = {"type": "array", "items": _int, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "environment": _obj(
            {
                "family": {"enum": ["lock", "gridworld", "file"]},
                "H": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "walls": {"type": "array", "items": _cell},
                "start": _cell,
                "goal": _cell,
                "slip_prob": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "path": {"type": "string"},
            },
            required=["family"],
        ),
        "guide": _obj(
            {
                "kind": {"enum": ["scripted", "corrupted", "bc", "uniform"]},
                "noise": {"type": "number", "minimum": 0, "maximum": 1},
                "demo_path": {"type": "string"},
                "fallback": {"enum": ["uniform", "lowest_action"]},
            },
            required=["kind"],
        ),
        "method": _obj(
            {
                "name": {"enum": ["jsrl_curriculum", "jsrl_random", "jsrl_cb", "scratch"]},
                "T": {"type": "integer", "minimum": 1},
                "cb_epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                "cb_schedule": {"enum": ["constant", "cube_root"]},
            },
            required=["name"],
        ),
        "learner": _obj(
            {
                "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                "lr_schedule": {"enum": ["constant", "harmonic"]},
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                "lr_c": {"type": "number", "exclusiveMinimum": 0},
                "eps_schedule": {"enum": ["constant", "linear"]},
                "eps_min": {"type": "number", "minimum": 0, "maximum": 1},
                "eps_decay_episodes": {"type": "integer", "minimum": 1},
                "init_mode": {"enum": ["cold_zero", "warm_from_guide"]},
            }
        ),
        "schedule": _obj(
            {
                "beta": _num,
                "sequence": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "step_set": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "budget": {"type": "integer", "minimum": 0},
                "stage_budget": {"type": "integer", "minimum": 1},
                "moving_average_window": {"type": "integer", "minimum": 1},
                "eval_every": {"type": "integer", "minimum": 1},
                "eval_episodes": {"type": "integer", "minimum": 1},
                "eval_mode": {"enum": ["exact", "monte_carlo"]},
                "success_threshold": {"type": "number", "minimum": 0},
            }
        ),
        "replay": _obj(
            {
                "batch_size": {"type": "integer", "minimum": 1},
                "online_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "capacity": {"type": "integer", "minimum": 1},
                "batches_per_episode": {"type": "integer", "minimum": 1},
                "seed_buffer_with_demos": {"type": "boolean"},
            }
        ),
        "output": _obj(
            {
                "curve": {"type": "string"},
                "policy": {"type": "string"},
                "summary": {"type": "string"},
                "trajectories": {"type": "string"},
            },
            required=["curve", "policy", "summary"],
        ),
    },
    required=["schema_version", "seed", "environment", "guide", "method", "output"],
)

DEFAULTS = {
    "learner": {"epsilon": 0.1, "lr_schedule": "harmonic", "alpha": 0.5, "lr_c": 100.0,
                "eps_schedule": "constant", "eps_min": 0.0, "eps_decay_episodes": 1, "init_mode": "cold_zero"},
    "schedule": {"beta": 0.9, "budget": 10_000, "moving_average_window": 3, "eval_every": 10,
                 "eval_episodes": 100, "eval_mode": "exact", "success_threshold": 0.05},
}

SWEEP_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "family": {"enum": ["lock", "gridworld"]},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "methods": {"type": "array", "items": {"enum": ["jsrl_curriculum", "jsrl_random", "scratch"]}},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "success_threshold": {"type": "number", "minimum": 0},
        "episode_cap": {"type": "integer", "minimum": 1},
        "cap_mode": {"enum": ["fixed", "exponential"]},
        "eval_every": {"type": "integer", "minimum": 1},
        "beta": _num,
        "moving_average_window": {"type": "integer", "minimum": 1},
        "stage_budget_per_h": {"type": "integer", "minimum": 1},
        "guide_noise": {"type": "number", "minimum": 0, "maximum": 1},
        "slip_prob": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "learner": CONFIG_SCHEMA["properties"]["learner"],
    },
    required=["sizes", "methods", "seeds"],
)


class ConfigError(ValueError):
    pass


def config_hash(text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def validate(doc: dict, schema: dict = CONFIG_SCHEMA) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def resolve(doc: dict) -> dict:
    """Validated config with defaults filled in and cross-field checks applied."""
    validate(doc)
    out = copy.deepcopy(doc)
    for block, defaults in DEFAULTS.items():
        out[block] = {**defaults, **out.get(block, {})}
    env = out["environment"]
    fam = env["family"]
    need = {"lock": ["H"], "gridworld": ["width", "height", "start", "goal", "H"], "file": ["path"]}[fam]
    missing = [k for k in need if k not in env]
    if missing:
        raise ConfigError(f"environment: family {fam!r} needs {missing}")
    guide = out["guide"]
    if guide["kind"] == "corrupted" and "noise" not in guide:
        raise ConfigError("guide: corrupted guide needs 'noise'")
    if guide["kind"] == "bc" and "demo_path" not in guide:
        raise ConfigError("guide: bc guide needs 'demo_path'")
    if out["method"]["name"] == "jsrl_cb" and "T" not in out["method"]:
        raise ConfigError("method: jsrl_cb needs 'T'")
    return out


def check_writable(paths) -> None:
    for p in paths:
        parent = os.path.dirname(os.path.abspath(p)) or "."
        if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
            raise OSError(f"cannot write to {p}")
        if os.path.isdir(p):
            raise OSError(f"{p} is a directory")


def dumps(obj) -> str:
    """Canonical JSON used for every artifact this package writes."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
