"""Run configuration: strict schema, TOML or JSON, resolved echo.

A run config has a handful of known sections. Unknown keys anywhere are
rejected so a typo cannot silently fall back to a default. Every CLI run
writes the fully resolved config (all defaults filled in) as JSON next
to its outputs, and that echo loads back into an equivalent RunConfig.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, FormatError
from .likelihood import AisConfig
from .noise import NoiseSchedule, make_schedule
from .sampler import AnnealSchedule, anneal_for_schedule, default_anneal
from .training import TrainConfig

__all__ = ["RunConfig", "load_config", "config_from_dict", "dump_config"]

_DEFAULTS = {
    "data": {"path": "", "kind": "csv2d"},
    "net": {"input_dim": 0, "hidden_dims": [128, 128], "seed": 0},
    "schedule": {"sigma_min": 0.05, "sigma_max": 1.2, "n_levels": 128,
                 "spacing": "linear", "sigma0": 0.1},
    "train": {"steps": 1000, "batch_size": 128, "learning_rate": 5e-5,
              "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
              "checkpoint_every": 5000},
    "anneal": {"n_steps": 2700, "t_start": 100.0, "t_end": 0.0, "eps": 0.02},
    "ais": {"n_intermediates": 1000, "hmc_steps_per_dist": 2,
            "leapfrog_steps": 5, "leapfrog_eps": 0.15, "n_chains": 100,
            "reference_std": 1.0},
}

# input_dim 0 means "infer from the dataset"; t_end 0 means "derive from
# the noise schedule". Both are placeholders, not legal literal values.


def _check_scalar(path: str, value, want: type):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise AssertionError(want)


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration with every default filled in."""

    seed: int = 0
    out: str = ""
    data: dict = field(default_factory=dict)
    net: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    anneal: dict = field(default_factory=dict)
    ais: dict = field(default_factory=dict)
    tool: dict = field(default_factory=dict)

    # --- builders for the typed objects the library consumes ---

    def noise_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return make_schedule(s["sigma_min"], s["sigma_max"], s["n_levels"],
                             spacing=s["spacing"], sigma0=s["sigma0"])

    def net_config(self, input_dim: int | None = None):
        from .energy import NetConfig

        cfg_dim = self.net["input_dim"]
        if cfg_dim == 0:
            if input_dim is None:
                raise ConfigError("net.input_dim is unset and cannot be inferred")
            cfg_dim = input_dim
        elif input_dim is not None and cfg_dim != input_dim:
            raise ConfigError(
                f"net.input_dim is {cfg_dim} but the dataset has width {input_dim}")
        return NetConfig(input_dim=cfg_dim,
                         hidden_dims=tuple(self.net["hidden_dims"]),
                         seed=self.net["seed"])

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(schedule=self.noise_schedule(), steps=t["steps"],
                           batch_size=t["batch_size"],
                           learning_rate=t["learning_rate"], beta1=t["beta1"],
                           beta2=t["beta2"], adam_eps=t["adam_eps"],
                           checkpoint_every=t["checkpoint_every"],
                           seed=self.seed)

    def anneal_schedule(self, noise_schedule: NoiseSchedule | None = None) -> AnnealSchedule:
        a = self.anneal
        if a["t_end"] > 0.0:
            return default_anneal(a["n_steps"], a["t_start"], a["t_end"], a["eps"])
        if noise_schedule is None:
            noise_schedule = self.noise_schedule()
        return anneal_for_schedule(noise_schedule, a["n_steps"], a["t_start"], a["eps"])

    def ais_config(self) -> AisConfig:
        a = self.ais
        return AisConfig(n_intermediates=a["n_intermediates"],
                         hmc_steps_per_dist=a["hmc_steps_per_dist"],
                         leapfrog_steps=a["leapfrog_steps"],
                         leapfrog_eps=a["leapfrog_eps"],
                         n_chains=a["n_chains"],
                         reference_std=a["reference_std"])

    def resolved(self) -> dict:
        """Plain dict with every section and default made explicit."""
        out = {"seed": self.seed, "out": self.out,
               "data": dict(self.data), "net": dict(self.net),
               "schedule": dict(self.schedule), "train": dict(self.train),
               "anneal": dict(self.anneal), "ais": dict(self.ais)}
        if self.tool:
            out["tool"] = dict(self.tool)
        return out


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a parsed config dict against the schema."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table, got {type(raw).__name__}")
    known_top = {"seed", "out", "tool"} | set(_DEFAULTS)
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    seed = _check_scalar("seed", raw.get("seed", 0), int)
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    out_dir = _check_scalar("out", raw.get("out", ""), str)

    sections = {}
    for name, defaults in _DEFAULTS.items():
        given = raw.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section [{name}] must be a table")
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
        merged = {}
        for key, default in defaults.items():
            value = given.get(key, default)
            if key == "hidden_dims":
                if not isinstance(value, (list, tuple)):
                    raise ConfigError("net.hidden_dims must be a list of ints")
                value = [_check_scalar(f"net.hidden_dims[{i}]", v, int)
                         for i, v in enumerate(value)]
            else:
                merged_type = type(default)
                value = _check_scalar(f"{name}.{key}", value, merged_type)
            merged[key] = value
        sections[name] = merged

    tool = raw.get("tool", {})
    if not isinstance(tool, dict):
        raise ConfigError("section [tool] must be a table")
    return RunConfig(seed=seed, out=out_dir, tool=dict(tool), **sections)


def load_config(path: str) -> RunConfig:
    """Load a .toml or .json config file (chosen by extension)."""
    lower = str(path).lower()
    if lower.endswith(".toml"):
        with open(path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise FormatError(f"{path}: {exc}") from exc
    elif lower.endswith(".json"):
        with open(path, "r", encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: {exc}") from exc
    else:
        raise FormatError(f"config file must end in .toml or .json: {path}")
    return config_from_dict(raw)


def dump_config(config: RunConfig, path: str) -> None:
    """Write the resolved config as deterministic JSON."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.resolved(), f, sort_keys=True, indent=2)
        f.write("\n")
