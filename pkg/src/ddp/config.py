"""Run configuration: YAML file merged over defaults, then flag overrides."""
from __future__ import annotations

import copy
import os

import yaml

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "data": None,
    "models": [],
    "out": "out",
    "transfer": None,
    "target_codes": [],
    "at_times": [],
    "ingest": {"time_scale": 1.0, "jitter_eps": 1e-6},
    "model": {"kind": "ddp", "D": 16, "H": 32},
    "train": {
        "eta": 1.0,
        "l1_weight": 0.0,
        "learning_rate": 1e-3,
        "epochs": 100,
        "batch_size": 64,
        "validation_fraction": 0.2,
        "early_stop_patience": 10,
        "censor": True,
    },
    "simulate": {
        "n_sequences": 1000,
        "horizon_T": 50.0,
        "max_events": 15,
        "K": 5,
        "F": 2,
        "density": 0.5,
        "branching": 0.7,
        "mu_range": [0.05, 0.2],
        "alpha_range": [0.1, 0.6],
        "beta_range": [0.5, 2.0],
        "context_mean": None,
        "context_std": 1.0,
        "prefix": [],
    },
    "eval": {"n_boot": 1000},
    "analytics": {
        "patient_id": None,
        "grid": [0.0, 1.0, 2.0, 5.0, 10.0],
        "rel_grid": [-5.0, 0.0, 1.0, 2.0, 5.0],
        "subsample_n": None,
        "pair_budget": 50000,
        "prune_eps": 1e-6,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


class RunConfig(dict):
    """Nested settings with attribute access to top-level sections."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return copy.deepcopy(dict(self))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                loaded = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        tree = _merge(tree, loaded)
    if "DDP_THREADS" in os.environ:
        try:
            tree["threads"] = int(os.environ["DDP_THREADS"])
        except ValueError:
            raise ConfigError("DDP_THREADS must be an integer") from None
    if overrides:
        tree = _merge(tree, {k: v for k, v in overrides.items() if v is not None})
    return RunConfig(tree)
