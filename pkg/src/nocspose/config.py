"""Structured-text run configuration (INI) with strict validation.

Sections mirror the module parameter groups; command-line flags override
config values. Unknown sections or keys are rejected before any work
starts, as are unparseable values.
"""

from __future__ import annotations

import configparser
import os


class ConfigError(ValueError):
    pass


def _int_tuple(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _str_list(s: str) -> list:
    return [x.strip() for x in s.split(",") if x.strip()]


SCHEMA = {
    "paths": {
        "dataset": str,
        "checkpoint": str,
        "output": str,
    },
    "data": {
        "categories": _str_list,
        "models_per_category": int,
        "subdiv": int,
        "size": int,
        "radius": float,
        "shapes": str,
        "mesh_dir": str,
        "seed": int,
    },
    "train": {
        "steps": int,
        "batch_size": int,
        "lr": float,
        "drop_rate": float,
        "size": int,
        "pca_dim": int,
        "holdout": int,
        "seed": int,
        "channels": _int_tuple,
        "blocks": int,
        "sched_steps": int,
        "beta_start": float,
        "beta_end": float,
        "log_every": int,
        "checkpoint_every": int,
    },
    "robust": {
        "noise_bound": float,
        "max_correspondences": int,
        "gnc_factor": float,
        "max_iterations": int,
    },
    "infer": {
        "n_noises": int,
        "steps": int,
        "seed": int,
        "inputs": _str_list,
    },
    "eval": {
        "thresholds": str,
        "unit_label": str,
        "unit_scale": float,
        "symmetric_categories": _str_list,
    },
}


def load_config(path: str | None) -> dict:
    """Parse and validate an INI config into {section: {key: typed value}}."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    out: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown key '{key}' in section [{section}] of {path}")
            try:
                out[section][key] = SCHEMA[section][key](raw)
            except (ValueError, TypeError) as err:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r}") from err
    # input paths named by the config must exist before any work starts
    for key in ("dataset", "checkpoint"):
        p = out.get("paths", {}).get(key)
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"paths.{key} does not exist: {p}")
    return out


def pick(args_value, config: dict, section: str, key: str, default):
    """Resolution order: explicit flag > config file > built-in default."""
    if args_value is not None:
        return args_value
    if section in config and key in config[section]:
        return config[section][key]
    return default
