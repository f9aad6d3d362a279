from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from .consts import ENV_OUTPUT_DIR, ENV_WORKERS, Experiments
from .d2d_scenario import ScenarioConfig
from .dual_solver import SolverConfig
from .errors import ConfigError, MechnumError
from .esem import EsemConfig
from .mechanisms import validate_alpha

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)


def _default_alpha_grid() -> List[float]:
    return [k / 40 for k in range(1, 21)]


@dataclass
class MechanismConfig:
    alpha_grid: List[float] = field(default_factory=_default_alpha_grid)
    esem: EsemConfig = field(default_factory=EsemConfig)
    center_a: float = 2.0
    center_sigma: float = 0.01
    norm_power: int = 1
    # two-user move: m ~ U(0, xdagger_frac) * x1*
    xdagger_frac: float = 0.5
    # multiuser target: Euclidean size of the sum-zero perturbation of x*
    xdagger_scale: float = 0.005
    # per-link shifts are whole multiples of this; 0 keeps them continuous
    xdagger_quantum: float = 2.5e-4
    eps_sweep: List[float] = field(default_factory=lambda: [0.02, 1.0, 99])
    dsic_grid_n: int = 20
    inflate_factor: float = 1.5
    deflate_factor: float = 0.5
    skip_period: int = 2

    def __post_init__(self):
        if isinstance(self.esem, Mapping):
            self.esem = _build(EsemConfig, self.esem, "mechanism.esem")
        self.alpha_grid = [float(a) for a in self.alpha_grid]
        if not self.alpha_grid:
            raise ConfigError("alpha_grid must not be empty")
        try:
            for a in self.alpha_grid:
                validate_alpha(a)
        except MechnumError as error:
            raise ConfigError(str(error), error)
        if len(self.eps_sweep) != 3 or not 0 < self.eps_sweep[0] < self.eps_sweep[1]:
            raise ConfigError("eps_sweep must be [low, high, points] with 0 < low < high")
        if not 0 < self.xdagger_frac <= 1:
            raise ConfigError("xdagger_frac must lie in (0, 1]")
        if not self.xdagger_scale > 0 or self.xdagger_quantum < 0:
            raise ConfigError("xdagger_scale must be positive and xdagger_quantum nonnegative")
        if self.inflate_factor <= 1 or not 0 < self.deflate_factor < 1:
            raise ConfigError("inflate_factor must exceed 1 and deflate_factor lie in (0, 1)")

    @property
    def eps_grid(self) -> List[float]:
        lo, hi, n = self.eps_sweep
        n = int(n)
        return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


@dataclass
class ExperimentConfig:
    experiment: str = Experiments.EXAMPLE1
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    n_samples: int = 1
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in Experiments.ALL:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(Experiments.ALL)}")
        if isinstance(self.scenario, Mapping):
            self.scenario = _build(ScenarioConfig, self.scenario, "scenario")
        if isinstance(self.solver, Mapping):
            self.solver = _build(SolverConfig, self.solver, "solver")
        if isinstance(self.mechanism, Mapping):
            self.mechanism = _build(MechanismConfig, self.mechanism, "mechanism")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, data: Mapping[str, Any], section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
    try:
        return cls(**data)
    except MechnumError as error:
        if isinstance(error, ConfigError):
            raise
        raise ConfigError(f"{section}: {error}", error)
    except TypeError as error:
        raise ConfigError(f"{section}: {error}", error)


def _merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


# Per-experiment defaults layered under the config file.
PRESETS: Dict[str, Dict[str, Any]] = {
    Experiments.EXAMPLE1: {
        "scenario": {"n_links": 8, "n_ee_links": 0, "total_power_w": 0.5},
        "n_samples": 1,
    },
    Experiments.EXAMPLE2: {
        "scenario": {"n_links": 2, "n_ee_links": 1, "total_power_w": 0.1},
        "mechanism": {"center_a": 0.2, "center_sigma": 1e-6, "norm_power": 2},
        "n_samples": 100,
    },
    Experiments.EXAMPLE3: {
        "scenario": {"n_links": 20, "n_ee_links": 5, "total_power_w": 1.0},
        "mechanism": {"center_a": 2.0, "center_sigma": 0.01, "norm_power": 1, "esem": {"delta0": 1e-2}},
        "n_samples": 50,
    },
    Experiments.DUAL_AUDIT: {"n_samples": 50},
    Experiments.ORACLE_CHECK: {"scenario": {"n_links": 4}, "n_samples": 50},
}


def default_config(experiment: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    if experiment not in PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    data = _merge({"experiment": experiment}, PRESETS[experiment])
    if overrides:
        data = _merge(data, overrides)
    return _build(ExperimentConfig, data, "config")


def load_config(path: str | Path | None = None, experiment: Optional[str] = None) -> ExperimentConfig:
    """Read a TOML experiment file on top of the experiment's preset."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as error:
            raise ConfigError(f"cannot read config {path}: {error}", error)
        except tomllib.TOMLDecodeError as error:
            raise ConfigError(f"invalid TOML in {path}: {error}", error)
    name = experiment or data.get("experiment") or Experiments.EXAMPLE1
    if experiment and data.get("experiment") not in (None, experiment):
        logger.warning("config file names experiment %r, running %r", data["experiment"], experiment)
    data["experiment"] = name
    return default_config(name, data)


def apply_env_overrides(cfg: ExperimentConfig, environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    env = os.environ if environ is None else environ
    if env.get(ENV_OUTPUT_DIR):
        cfg.output_dir = env[ENV_OUTPUT_DIR]
    if env.get(ENV_WORKERS):
        try:
            cfg.workers = max(1, int(env[ENV_WORKERS]))
        except ValueError as error:
            raise ConfigError(f"{ENV_WORKERS} must be an integer", error)
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of everything that influences results."""
    payload = cfg.to_dict()
    payload.pop("output_dir", None)
    payload.pop("workers", None)
    text = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
