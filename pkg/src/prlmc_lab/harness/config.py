"""Experiment configuration: one JSON document per run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .. import potential as pot
from .. import schedule as sched_mod
from ..rng import RngPolicy
from ..sampler import ALGORITHMS, INDEPENDENT, MODES, SamplerConfig

EXPERIMENTS = (
    "run",
    "bias-sweep",
    "drift-check",
    "coupling-check",
    "tv-decay",
    "decreasing-step",
    "midpoint-law",
    "strong-error",
)


class ConfigError(ValueError):
    """The configuration is malformed or violates an experiment precondition."""


@dataclass(frozen=True)
class SamplerSection:
    algorithm: str
    potential: pot.PotentialSpec
    schedule: sched_mod.StepSchedule
    K: int = 1
    mode: str = INDEPENDENT
    initial: tuple = ()

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "K": self.K,
            "mode": self.mode,
            "potential": self.potential.to_dict(),
            "schedule": self.schedule.to_dict(),
            "initial": list(self.initial),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    sampler: SamplerSection
    trials: int = 1
    steps: int = 0
    checkpoints: tuple = ()
    eta_grid: tuple = ()
    master_seed: int = 0
    output: str = "results"
    options: dict = field(default_factory=dict)

    def sampler_config(self, schedule=None, algorithm=None, mode=None) -> SamplerConfig:
        s = self.sampler
        return SamplerConfig(
            algorithm=algorithm or s.algorithm,
            potential=s.potential,
            schedule=schedule or s.schedule,
            initial=s.initial,
            K=s.K,
            midpoint_noise_mode=mode or s.mode,
            rng=RngPolicy(self.master_seed),
        )

    def option(self, name, default=None):
        return self.options.get(name, default)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "sampler": self.sampler.to_dict(),
            "trials": self.trials,
            "steps": self.steps,
            "checkpoints": list(self.checkpoints),
            "eta_grid": list(self.eta_grid),
            "master_seed": self.master_seed,
            "output": self.output,
            "options": dict(self.options),
        }


def _positive_int(value, name, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'nonnegative' if allow_zero else 'positive'}")
    return value


def parse_sampler(raw: dict) -> SamplerSection:
    if not isinstance(raw, dict):
        raise ConfigError("sampler must be an object")
    algorithm = raw.get("algorithm", "PRLMC")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    mode = raw.get("mode", INDEPENDENT)
    if mode not in MODES:
        raise ConfigError(f"unknown midpoint noise mode {mode!r}")
    try:
        potential = pot.from_dict(raw.get("potential", {"kind": pot.ISOTROPIC, "theta": 1.0}))
        schedule = sched_mod.from_dict(raw.get("schedule", {"kind": "Constant", "eta": 0.1}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sampler section: {exc}") from exc
    K = _positive_int(raw.get("K", 1), "sampler.K")
    initial = raw.get("initial")
    if initial is None:
        initial = [0.0] * potential.dimension
    if not isinstance(initial, list) or len(initial) != potential.dimension:
        raise ConfigError("sampler.initial must be a list with one entry per dimension")
    return SamplerSection(algorithm, potential, schedule, K, mode, tuple(float(v) for v in initial))


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {"experiment", "sampler", "trials", "steps", "checkpoints", "eta_grid",
             "master_seed", "output", "options"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    sampler = parse_sampler(raw.get("sampler", {}))
    trials = _positive_int(raw.get("trials", 1), "trials")
    steps = _positive_int(raw.get("steps", 0), "steps", allow_zero=True)
    checkpoints = raw.get("checkpoints", [steps])
    if not isinstance(checkpoints, list):
        raise ConfigError("checkpoints must be a list")
    for c in checkpoints:
        _positive_int(c, "checkpoint", allow_zero=True)
    if checkpoints != sorted(checkpoints):
        raise ConfigError("checkpoints must be sorted")
    if checkpoints and checkpoints[-1] > steps:
        raise ConfigError("checkpoints must not exceed steps")
    eta_grid = raw.get("eta_grid", [])
    if not isinstance(eta_grid, list) or any(
        isinstance(e, bool) or not isinstance(e, (int, float)) or e <= 0 for e in eta_grid
    ):
        raise ConfigError("eta_grid must be a list of positive numbers")
    seed = raw.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("master_seed must be a 64-bit unsigned integer")
    output = raw.get("output", "results")
    if not isinstance(output, str):
        raise ConfigError("output must be a path string")
    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options must be an object")
    return ExperimentConfig(
        experiment=experiment,
        sampler=sampler,
        trials=trials,
        steps=steps,
        checkpoints=tuple(checkpoints),
        eta_grid=tuple(float(e) for e in eta_grid),
        master_seed=seed,
        output=output,
        options=dict(options),
    )


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def with_overrides(cfg: ExperimentConfig, seed=None, output=None) -> ExperimentConfig:
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        cfg = replace(cfg, master_seed=seed)
    if output is not None:
        cfg = replace(cfg, output=str(output))
    return cfg
