"""Run configuration: one JSON document per run, strictly validated.

Unknown keys are rejected (every violation reported at once) and all
defaults are made explicit on load, so the resolved document persisted
next to the results is sufficient to rerun without the original file.

Precedence: command-line flag > environment variable (A2D_SEED, A2D_OUT)
> config file > built-in default.
"""

from __future__ import annotations

import copy
import inspect
import json
import os
from dataclasses import asdict
from pathlib import Path

from .agent import BACKBONE_PRESETS, BackboneConfig
from .distill import MODES, DistillConfig
from .envs import ENV_BUILDERS, make_env
from .errors import ConfigError
from .nas.search import SearchConfig
from .trainer import TrainConfig


def _defaults() -> dict:
    train = asdict(TrainConfig())
    train.pop("seed")  # the top-level seed is the single source
    return {
        "seed": 0,
        "out_dir": "runs",
        "run_id": None,
        "env": {"name": "grid_pixels", "params": {}},
        "backbone": "res-S",
        "teacher": None,
        "train": train,
        "distill": {"mode": "proposed", "actor_coef": 1e-1, "critic_coef": 1e-3},
        "search": asdict(SearchConfig()),
    }


def _check_keys(section, given: dict, allowed, problems):
    for key in given:
        if key not in allowed:
            problems.append(f"unknown key {section}{key!r} (allowed: {sorted(allowed)})")


def resolve_config(file_dict=None, overrides=None, use_env_vars=True) -> dict:
    """Merge file values and dotted-key overrides onto the defaults; returns
    the fully resolved dict or raises ConfigError listing every problem."""
    resolved = _defaults()
    problems: list[str] = []

    file_dict = copy.deepcopy(file_dict or {})
    _check_keys("", file_dict, set(resolved), problems)
    for section in ("train", "distill", "search"):
        sub = file_dict.get(section)
        if isinstance(sub, dict):
            _check_keys(f"{section}.", sub, set(resolved[section]), problems)
            resolved[section].update(sub)
    env_section = file_dict.get("env")
    if isinstance(env_section, dict):
        _check_keys("env.", env_section, {"name", "params"}, problems)
        resolved["env"]["name"] = env_section.get("name", resolved["env"]["name"])
        resolved["env"]["params"] = dict(env_section.get("params", {}))
    for key in ("seed", "out_dir", "run_id", "backbone", "teacher"):
        if key in file_dict:
            resolved[key] = file_dict[key]

    if use_env_vars:
        if os.environ.get("A2D_SEED"):
            resolved["seed"] = int(os.environ["A2D_SEED"])
        if os.environ.get("A2D_OUT"):
            resolved["out_dir"] = os.environ["A2D_OUT"]

    for dotted, value in (overrides or {}).items():
        node = resolved
        parts = dotted.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                problems.append(f"override targets unknown key {dotted!r}")
                break
            node = node[p]
        else:
            if not isinstance(node, dict) or parts[-1] not in node:
                problems.append(f"override targets unknown key {dotted!r}")
            else:
                node[parts[-1]] = value

    name = resolved["env"]["name"]
    if name not in ENV_BUILDERS:
        problems.append(f"env.name {name!r} not in {sorted(ENV_BUILDERS)}")
    else:
        sig = inspect.signature(ENV_BUILDERS[name].__init__)
        allowed = set(sig.parameters) - {"self"}
        _check_keys("env.params.", resolved["env"]["params"], allowed, problems)

    backbone = resolved["backbone"]
    if isinstance(backbone, str):
        if backbone not in BACKBONE_PRESETS:
            problems.append(f"backbone {backbone!r} not in {sorted(BACKBONE_PRESETS)}")
    elif isinstance(backbone, dict):
        allowed = {"kind", "stem", "convs", "groups", "derived_ops", "feature_dim", "batch_norm"}
        _check_keys("backbone.", backbone, allowed, problems)
    else:
        problems.append("backbone must be a preset name or a config object")

    if resolved["distill"]["mode"] not in MODES:
        problems.append(f"distill.mode {resolved['distill']['mode']!r} not in {MODES}")

    if problems:
        raise ConfigError(problems)
    return resolved


def load_config_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"config file {path}: invalid JSON ({e})"]) from e


# -- typed views over a resolved document ----------------------------------


def env_factory_from(resolved: dict):
    name = resolved["env"]["name"]
    params = resolved["env"]["params"]
    return lambda: make_env(name, **params)


def backbone_from(resolved: dict) -> tuple[BackboneConfig, str]:
    """(config, display name) for the configured backbone."""
    backbone = resolved["backbone"]
    if isinstance(backbone, str):
        return BACKBONE_PRESETS[backbone], backbone
    cfg = BackboneConfig.from_dict(backbone)
    return cfg, cfg.kind


def train_config_from(resolved: dict) -> TrainConfig:
    return TrainConfig(seed=resolved["seed"], **resolved["train"]).validate()


def distill_config_from(resolved: dict) -> DistillConfig:
    return DistillConfig(teacher_path=resolved["teacher"], **resolved["distill"])


def search_config_from(resolved: dict) -> SearchConfig:
    return SearchConfig(**resolved["search"]).validate()
