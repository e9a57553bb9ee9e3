"""Experiment configuration loading and validation.

A config is a JSON object:
    {
      "experiment": "theorem1" | "theorem2" | "semisynthetic" | "sweep"
                    | "custom" | "gen-data",
      "seeds": [int, ...],          # optional for gen-data
      "out": "runs/name",           # output directory (CLI --out overrides)
      "params": { ... }             # experiment-specific, see the defaults
    }

The named default configs shipped with the package are the experiments the
reproduce command runs.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import ContractViolation

EXPERIMENTS = ("theorem1", "theorem2", "semisynthetic", "sweep", "custom", "gen-data")
NAMED_CONFIGS = ("theorem1", "theorem2", "semisynthetic", "sweep")


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"config is not valid JSON: {exc}") from exc
    return validate_config(config)


def default_config(name):
    """A shipped named config (theorem1, theorem2, semisynthetic, sweep)."""
    if name not in NAMED_CONFIGS:
        raise ContractViolation(f"no shipped config named {name!r}; "
                                f"choose from {NAMED_CONFIGS}")
    text = resources.files("transferlab.configs").joinpath(f"{name}.json").read_text()
    return validate_config(json.loads(text))


def validate_config(config):
    if not isinstance(config, dict):
        raise ContractViolation("config must be a JSON object")
    kind = config.get("experiment")
    if kind not in EXPERIMENTS:
        raise ContractViolation(f"unknown experiment {kind!r}; expected one of "
                                f"{EXPERIMENTS}")
    if kind == "gen-data":
        datasets = config.get("datasets")
        if not isinstance(datasets, list) or not datasets:
            raise ContractViolation("gen-data config needs a nonempty 'datasets' list")
        for entry in datasets:
            if "generator" not in entry or "name" not in entry:
                raise ContractViolation("each dataset entry needs 'name' and 'generator'")
        return config
    seeds = config.get("seeds")
    if not isinstance(seeds, list) or not seeds or \
            not all(isinstance(s, int) for s in seeds):
        raise ContractViolation("config needs a nonempty integer 'seeds' list")
    params = config.get("params", {})
    if not isinstance(params, dict):
        raise ContractViolation("'params' must be an object")
    return config


def apply_seed_offset(config, offset):
    if not offset:
        return config
    config = dict(config)
    if "seeds" in config:
        config["seeds"] = [s + offset for s in config["seeds"]]
    params = dict(config.get("params", {}))
    for branch in ("finetune", "joint"):
        if branch in params and isinstance(params[branch], dict) \
                and isinstance(params[branch].get("seeds"), list):
            params[branch] = dict(params[branch])
            params[branch]["seeds"] = [s + offset for s in params[branch]["seeds"]]
    config["params"] = params
    return config
