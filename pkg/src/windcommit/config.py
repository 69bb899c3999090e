"""Run configuration: TOML schema, defaults, and domain-object construction.

All defaults reproduce the reference experimental setup, so every command
runs with no config file at all.  Section and key names are validated
strictly; a typo is a config error, not a silent default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dispatch_solver import CostParams
from .fv_tail import FVConfig, TailPartition, build_partition
from .scenario_tree import TreeConfig, TreeMode
from .seeding import derive_seed
from .stochastic_models import ARModel


class ConfigError(ValueError):
    """Invalid configuration file or values."""


_SCHEMA = {
    "ar": {"phi1": 0.90, "phi2": 0.05, "innovation_std": 1.0},
    "tail": {"a": 2.0, "c_threshold": 3.0, "inner_edge": 9.0, "inner_count": 5},
    "fv": {
        "n_particles": 1000,
        "burn_in": 100,
        "n_steps": 10_000,
        "exit_mass_steps": 1_000_000,
    },
    "tree": {"horizon": 5, "branching": 20, "w0": 10.0, "rare_fraction": 0.5},
    "cost": {
        "c_start": 3.0,
        "c_operate": 5.0,
        "c_stop": 2.0,
        "c_per_gw": 20.0,
        "p_max": 400.0,
        "demand": 6.0,
    },
    "evaluation": {"q_values": [0.0, 0.05, 0.10], "n_realizations": 100},
}
_TOP_LEVEL = {"master_seed": 20250901}


@dataclass(frozen=True)
class RunConfig:
    master_seed: int
    ar: dict = field(default_factory=dict)
    tail: dict = field(default_factory=dict)
    fv: dict = field(default_factory=dict)
    tree: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)

    def ar_model(self) -> ARModel:
        return ARModel(
            phi1=self.ar["phi1"],
            phi2=self.ar["phi2"],
            innovation_std=self.ar["innovation_std"],
        )

    def partition(self) -> TailPartition:
        return build_partition(
            a=self.tail["a"],
            c_threshold=self.tail["c_threshold"],
            inner_edge=self.tail["inner_edge"],
            inner_count=self.tail["inner_count"],
        )

    def fv_config(self) -> FVConfig:
        return FVConfig(
            n_particles=self.fv["n_particles"],
            n_steps=self.fv["n_steps"],
            burn_in=self.fv["burn_in"],
            seed=derive_seed(self.master_seed, "fv"),
        )

    @property
    def exit_mass_steps(self) -> int:
        return self.fv["exit_mass_steps"]

    def tree_config(self, mode: TreeMode) -> TreeConfig:
        return TreeConfig(
            horizon=self.tree["horizon"],
            branching=self.tree["branching"],
            w0=self.tree["w0"],
            mode=mode,
            rare_fraction=self.tree["rare_fraction"],
            seed=derive_seed(self.master_seed, f"tree-{mode.value}"),
        )

    def cost_params(self) -> CostParams:
        return CostParams(
            c_start=self.cost["c_start"],
            c_operate=self.cost["c_operate"],
            c_stop=self.cost["c_stop"],
            c_per_gw=self.cost["c_per_gw"],
            p_max=self.cost["p_max"],
            demand=(float(self.cost["demand"]),) * int(self.tree["horizon"]),
        )

    @property
    def q_values(self) -> tuple[float, ...]:
        return tuple(float(q) for q in self.evaluation["q_values"])

    @property
    def n_realizations(self) -> int:
        return self.evaluation["n_realizations"]


def load_config(path: str | Path | None = None, seed_override: int | None = None) -> RunConfig:
    """Merge a TOML file (if given) over the defaults and validate everything."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    unknown = set(raw) - set(_SCHEMA) - set(_TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections: dict[str, dict] = {}
    for name, defaults in _SCHEMA.items():
        given = raw.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section [{name}] must be a table")
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        sections[name] = {**defaults, **given}

    master_seed = raw.get("master_seed", _TOP_LEVEL["master_seed"])
    if seed_override is not None:
        master_seed = seed_override
    if not isinstance(master_seed, int) or master_seed < 0:
        raise ConfigError(f"master_seed must be a non-negative integer, got {master_seed!r}")

    cfg = RunConfig(master_seed=master_seed, **sections)
    # construct every domain object so invalid values fail at load time
    try:
        cfg.ar_model()
        cfg.partition()
        cfg.fv_config()
        cfg.tree_config(TreeMode.BENCHMARK)
        cfg.tree_config(TreeMode.BIASED)
        cfg.cost_params()
        if int(cfg.exit_mass_steps) < 100_000:
            raise ValueError("fv.exit_mass_steps must be >= 100000")
        for q in cfg.q_values:
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"q value {q} outside [0, 1]")
        if cfg.n_realizations < 1:
            raise ValueError("evaluation.n_realizations must be >= 1")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
