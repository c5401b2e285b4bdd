"""Configuration dataclasses and the TOML config loader.

Every tunable constant of the simulator, predictor, shield, agent and harness
lives here.  A config file is a TOML document with one table per section::

    seed = 7

    [sim]
    dt = 0.2
    v_max = 13.4

    [sim.idm]
    a_max = 2.0

    [prediction]
    c2 = 0.4

    [agent]
    gamma = 0.99

    [run]
    reward = "margin"
    z = -1.0

Unknown keys are rejected so that typos surface as config errors.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration values."""


@dataclass
class DriverParams:
    a_max: float = 2.0
    b_comf: float = 2.0
    s0: float = 2.0
    T_headway: float = 1.5
    delta_exp: float = 4.0

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"idm.{f.name} must be strictly positive")


@dataclass
class SimConfig:
    dt: float = 0.2
    v_max: float = 13.4
    emission_prob_per_second: float = 0.1
    max_steps: int = 100
    sensing_range: float = 100.0
    idm: DriverParams = field(default_factory=DriverParams)
    krauss_sigma: float = 0.5
    b_emergency: float = 9.0
    # geometry
    lane_width: float = 5.0
    road_half_length: float = 130.0
    ego_exit_length: float = 20.0
    turn_radius: float = 5.0
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    # episode plumbing
    warmup_steps: int = 100
    max_presafe_steps: int = 1500
    braking_threshold: float = -1.0

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("sim.dt must be > 0")
        if not 0.0 <= self.emission_prob_per_second <= 1.0:
            raise ConfigError("sim.emission_prob_per_second must lie in [0, 1]")
        if self.max_steps < 1:
            raise ConfigError("sim.max_steps must be >= 1")
        if not 0.0 <= self.krauss_sigma <= 1.0:
            raise ConfigError("sim.krauss_sigma must lie in [0, 1]")
        if self.v_max <= 0 or self.sensing_range <= 0:
            raise ConfigError("sim.v_max and sim.sensing_range must be > 0")
        if self.warmup_steps < 0 or self.max_presafe_steps < 1:
            raise ConfigError("sim.warmup_steps must be >= 0, sim.max_presafe_steps >= 1")
        self.idm.validate()

    @property
    def collision_radius(self) -> float:
        """Combined half-diagonals of two vehicle footprints."""
        half_diag = 0.5 * (self.vehicle_length**2 + self.vehicle_width**2) ** 0.5
        return 2.0 * half_diag


@dataclass
class UncertaintyModel:
    sigma_0: float = 2.0
    c1: float = 0.5
    c2: float = 0.4
    k_margin: float = 6.0

    def validate(self) -> None:
        if min(self.sigma_0, self.c1, self.c2) < 0:
            raise ConfigError("uncertainty coefficients must be >= 0")
        if self.k_margin <= 0:
            raise ConfigError("k_margin must be > 0")

    def sigma(self, tau):
        return self.sigma_0 + self.c1 * tau + self.c2 * tau * tau


def ego_uncertainty() -> UncertaintyModel:
    return UncertaintyModel(sigma_0=0.5, c1=0.2, c2=0.0)


@dataclass
class PredictionConfig:
    traffic: UncertaintyModel = field(default_factory=UncertaintyModel)
    ego: UncertaintyModel = field(default_factory=ego_uncertainty)
    smear: int = 2
    # None: every simulated vehicle is checked, not only those inside sensing_range
    shield_range: float | None = None

    def validate(self) -> None:
        self.traffic.validate()
        self.ego.validate()
        if self.smear < 0:
            raise ConfigError("prediction.smear must be >= 0")


@dataclass
class AgentConfig:
    hidden: tuple[int, ...] = (128, 128)
    leaky_slope: float = 0.01
    gamma: float = 0.99
    lr: float = 1e-4
    rms_decay: float = 0.95
    rms_eps: float = 1e-6
    batch_size: int = 32
    buffer_capacity: int = 10_000
    learn_start: int = 500
    target_sync: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_frac: float = 0.3
    braking_per_vehicle: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("agent.gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("agent.buffer_capacity must be >= batch_size >= 1")
        if self.learn_start < self.batch_size:
            raise ConfigError("agent.learn_start must be >= batch_size")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("agent.hidden sizes must be positive")


@dataclass
class RunConfig:
    mode: str = "train"
    reward: str = "margin"
    z: float = -1.0
    episodes: int = 5000
    eval_episodes: int = 1000
    seed: int = 0
    # shield sigma multiple used by the harness; None falls back to k_margin
    k: float | None = 0.5
    output_dir: str = "runs"
    margins: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    ma_window: int = 200
    sim: SimConfig = field(default_factory=SimConfig)
    prediction: PredictionConfig = field(default_factory=PredictionConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    @property
    def shield_k(self) -> float:
        return self.prediction.traffic.k_margin if self.k is None else self.k

    def validate(self) -> None:
        if self.mode not in ("train", "eval", "baseline", "budget"):
            raise ConfigError(f"unknown run.mode {self.mode!r}")
        if self.reward not in ("braking", "margin"):
            raise ConfigError(f"unknown run.reward {self.reward!r}")
        if self.episodes < 1 or self.eval_episodes < 1:
            raise ConfigError("run.episodes must be >= 1")
        if self.z > 0:
            raise ConfigError("run.z is a penalty and must be <= 0")
        if self.k is not None and self.k <= 0:
            raise ConfigError("run.k must be > 0")
        self.sim.validate()
        self.prediction.validate()
        self.agent.validate()


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    origin = str(target_type)
    if "tuple" in origin:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        return tuple(value)
    if "float" in origin and "None" in origin and value is None:
        return None
    if target_type in ("float", float) or origin.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if target_type in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if target_type in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if target_type in ("str", str):
        return str(value)
    return value


def _apply(obj: Any, table: dict[str, Any], prefix: str) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"{prefix.rstrip('.')} must be a table")
    by_name = {f.name: f for f in fields(obj)}
    for key, value in table.items():
        dotted = f"{prefix}{key}"
        if key not in by_name:
            raise ConfigError(f"unknown config key {dotted!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be a table")
            _apply(current, value, dotted + ".")
        else:
            setattr(obj, key, _coerce(value, by_name[key].type, dotted))


def config_from_mapping(data: dict[str, Any]) -> RunConfig:
    cfg = RunConfig()
    data = dict(data)
    top = {}
    for section in ("sim", "prediction", "agent"):
        if section in data:
            _apply(getattr(cfg, section), data.pop(section), section + ".")
    run_table = data.pop("run", {})
    top.update(data)
    top.update(run_table)
    _apply(cfg, top, "run.")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(data)
