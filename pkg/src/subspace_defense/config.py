"""Experiment config: JSON schema validation and builders for envs, policies and triggers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema
import numpy as np

from .attack import TriggerFunction, constant_trigger, impulse_trigger
from .environments import (
    Mdp,
    PlantedEnv,
    PlantedEnvSpec,
    ToyMdpSpec,
    planted_env,
    toy_mdp,
    toy_safe_projector,
)
from .errors import ConfigError, DefenseError
from .linalg import Projector
from .policies import Policy, planted_backdoor_policy, toy_backdoor_policy

_number_list = {"type": "array", "items": {"type": "number"}}
_matrix = {"type": "array", "items": _number_list}

SCHEMA: dict = {
    "type": "object",
    "required": ["env"],
    "properties": {
        "env": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["planted", "toy"]}},
            "allOf": [
                {
                    "if": {"properties": {"kind": {"const": "planted"}}},
                    "then": {
                        "required": ["D", "d", "eigenvalues"],
                        "properties": {
                            "kind": {},
                            "D": {"type": "integer", "minimum": 1},
                            "d": {"type": "integer", "minimum": 1},
                            "eigenvalues": {**_number_list, "minItems": 1},
                            "C0": {"type": "number", "minimum": 0},
                            "gamma": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                            "persistence": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                            "seed": {"type": "integer", "minimum": 0},
                            "reward_weights": _matrix,
                            "reward_bias": _number_list,
                            "drift": _matrix,
                            "basis": _matrix,
                        },
                        "additionalProperties": False,
                    },
                },
                {
                    "if": {"properties": {"kind": {"const": "toy"}}},
                    "then": {
                        "properties": {
                            "kind": {},
                            "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                            "trigger_height": {"type": "number", "exclusiveMinimum": 0},
                        },
                        "additionalProperties": False,
                    },
                },
            ],
        },
        "policy": {
            "type": "object",
            "properties": {
                "softness": {"type": "number", "exclusiveMinimum": 0},
                "bad_action": {"type": "integer", "minimum": 0},
                "margin": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "trigger": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "impulse", "none"]},
                "magnitude": {"type": "number", "minimum": 0},
                "direction": {"oneOf": [{"type": "integer", "minimum": 0}, _number_list]},
                "times": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "sanitizer": {
            "type": "object",
            "properties": {
                "d": {"oneOf": [
                    {"type": "integer", "minimum": 1},
                    {"enum": ["absolute_threshold", "largest_relative_gap"]},
                ]},
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "center": {"type": "boolean"},
                "mode": {"enum": ["geometric_iid", "correlated"]},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "n": {"oneOf": [
                    {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                    {"type": "integer", "minimum": 1},
                ]},
                "d": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "seeds": {
            "type": "object",
            "properties": {
                "master": {"type": "integer", "minimum": 0},
                "count": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "evaluation": {
            "type": "object",
            "properties": {
                "episodes": {"type": "integer", "minimum": 2},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "b_rollouts": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "theorem": {
            "type": "object",
            "properties": {"delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
            "additionalProperties": False,
        },
        "checks": {"type": "object"},
        "lemmas": {"type": "object"},
    },
    "additionalProperties": False,
}


def _path(error: jsonschema.ValidationError) -> str:
    out = ""
    for part in error.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def validate(config: Any) -> dict:
    """Validate ``config`` against :data:`SCHEMA`; raise :class:`ConfigError` naming the offending field."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        # deepest error is the most specific one
        err = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(err.message, _path(err))
    return config


def load(path: Union[str, Path]) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return validate(data)


def sweep_values(config: dict, key: str) -> list:
    vals = config.get("sweep", {}).get(key)
    if vals is None:
        raise ConfigError("missing sweep grid", f"sweep.{key}")
    return list(vals) if isinstance(vals, list) else [vals]


@dataclass
class Setup:
    """Everything a runner needs, built from one config."""

    env: Mdp
    policy: Policy
    trigger: Optional[TriggerFunction]
    safe: Projector
    config: dict

    @property
    def true_d(self) -> int:
        return self.safe.d

    def sanitizer_options(self) -> dict:
        opts = self.config.get("sanitizer", {})
        return {
            "d": opts.get("d", "absolute_threshold"),
            "threshold": opts.get("threshold", 1e-10),
            "center": opts.get("center", False),
            "mode": opts.get("mode", "geometric_iid"),
        }

    def evaluation_options(self) -> dict:
        opts = self.config.get("evaluation", {})
        return {
            "episodes": opts.get("episodes", 500),
            "tol": opts.get("tol", 1e-4),
            "b_rollouts": opts.get("b_rollouts", 500),
        }

    def seeds(self) -> tuple[int, int]:
        opts = self.config.get("seeds", {})
        return opts.get("master", 0), opts.get("count", 1)


def build_env(config: dict) -> tuple[Mdp, Projector]:
    cfg = dict(config["env"])
    kind = cfg.pop("kind")
    try:
        if kind == "toy":
            env = toy_mdp(ToyMdpSpec(**cfg))
            return env, toy_safe_projector()
        if len(cfg["eigenvalues"]) != cfg["d"]:
            raise ConfigError("need exactly d eigenvalues", "env.eigenvalues")
        base = PlantedEnvSpec.standard(
            D=cfg["D"], d=cfg["d"], eigenvalues=cfg["eigenvalues"], C0=cfg.get("C0", 0.0),
            gamma=cfg.get("gamma", 0.9), persistence=cfg.get("persistence", 0.5), seed=cfg.get("seed", 0),
        )
        data = base.to_dict()
        data.update({k: v for k, v in cfg.items() if k in ("reward_weights", "reward_bias", "drift", "basis")})
        env = planted_env(PlantedEnvSpec.from_dict(data))
        return env, env.safe_projector
    except ConfigError:
        raise
    except DefenseError as exc:
        raise ConfigError(str(exc), "env") from exc


def build_policy(config: dict, env: Mdp) -> Policy:
    if config["env"]["kind"] == "toy":
        return toy_backdoor_policy(ToyMdpSpec(**{k: v for k, v in config["env"].items() if k != "kind"}))
    opts = config.get("policy", {})
    try:
        return planted_backdoor_policy(
            env, softness=opts.get("softness", 0.05), bad_action=opts.get("bad_action", 2), margin=opts.get("margin", 0.5)
        )
    except DefenseError as exc:
        raise ConfigError(str(exc), "policy") from exc


def build_trigger(config: dict, env: Mdp, safe: Projector) -> Optional[TriggerFunction]:
    opts = config.get("trigger", {"kind": "none"})
    if opts["kind"] == "none":
        return None
    comp = safe.complement()
    direction = opts.get("direction", 0)
    if isinstance(direction, int):
        if direction >= comp.d:
            raise ConfigError(f"complement has only {comp.d} directions", "trigger.direction")
        vec = comp.basis[:, direction]
    else:
        vec = np.asarray(direction, dtype=float)
        if vec.shape != (env.state_dim,):
            raise ConfigError(f"direction must have {env.state_dim} entries", "trigger.direction")
        vec = vec / np.linalg.norm(vec)
    default_mag = config["env"].get("trigger_height", 2.0) if config["env"]["kind"] == "toy" else 3.0
    magnitude = opts.get("magnitude", default_mag)
    try:
        if opts["kind"] == "constant":
            return constant_trigger(vec, magnitude, comp)
        return impulse_trigger(magnitude * vec, comp, opts.get("times", [0]))
    except DefenseError as exc:
        raise ConfigError(str(exc), "trigger") from exc


def build(config: dict) -> Setup:
    validate(config)
    env, safe = build_env(config)
    policy = build_policy(config, env)
    trigger = build_trigger(config, env, safe)
    return Setup(env, policy, trigger, safe, config)


def is_planted(setup: Setup) -> bool:
    return isinstance(setup.env, PlantedEnv)
