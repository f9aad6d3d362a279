from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .consts import (
    CI_INTERCEPT_DB,
    DEFAULT_NOISE_FIGURE_DB,
    DEFAULT_RB_BANDWIDTH_HZ,
    THERMAL_NOISE_DBM_HZ,
    ObjectiveKinds,
)
from .errors import ConfigError, DomainError
from .valuation import ComposedUtility, EnergyEfficiency, Exponential, ObjectiveFn, Rate, eval_objective

logger = logging.getLogger(__name__)


@dataclass
class ScenarioConfig:
    cell_radius_m: float = 500.0
    d2d_dist_range_m: Tuple[float, float] = (5.0, 25.0)
    noise_psd_dbm_hz: float = THERMAL_NOISE_DBM_HZ
    noise_figure_db: float = DEFAULT_NOISE_FIGURE_DB
    rb_bandwidth_hz: float = DEFAULT_RB_BANDWIDTH_HZ
    p_max_w: float = 0.1
    p_cell_w: float = 0.5
    total_power_w: float = 0.5
    carrier_ghz: float = 2.0
    pathloss_exponent: float = 3.19
    interf_over_noise_db_range: Tuple[float, float] = (5.0, 20.0)
    n_links: int = 8
    n_ee_links: int = 0
    circuit_power_w: float = 0.01
    ee_power_unit_w: float = 1e-3
    eps_range: Tuple[float, float] = (0.1, 0.3)
    seed: int = 0

    def __post_init__(self):
        self.d2d_dist_range_m = tuple(float(v) for v in self.d2d_dist_range_m)
        self.interf_over_noise_db_range = tuple(float(v) for v in self.interf_over_noise_db_range)
        self.eps_range = tuple(float(v) for v in self.eps_range)
        lo, hi = self.d2d_dist_range_m
        if min(self.p_max_w, self.p_cell_w, self.total_power_w, self.circuit_power_w) <= 0:
            raise ConfigError("all powers must be positive")
        if self.total_power_w < self.p_max_w:
            raise ConfigError("total_power_w must be at least p_max_w")
        if not 0 < lo <= hi < self.cell_radius_m:
            raise ConfigError("d2d_dist_range_m must lie within (0, cell_radius_m)")
        if self.n_links < 1:
            raise ConfigError("n_links must be at least 1")
        if not 0 <= self.n_ee_links <= self.n_links:
            raise ConfigError("n_ee_links must lie in [0, n_links]")
        if self.interf_over_noise_db_range[0] > self.interf_over_noise_db_range[1]:
            raise ConfigError("interf_over_noise_db_range must be ordered")
        if not 0 < self.eps_range[0] <= self.eps_range[1]:
            raise ConfigError("eps_range must be positive and ordered")


@dataclass(frozen=True)
class LinkDraw:
    distance_m: float
    fading_power: float
    g: float
    p_interf_w: float
    objective_kind: str
    eps: float


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    noise_w: float
    links: Tuple[LinkDraw, ...]
    objectives: Tuple[ObjectiveFn, ...] = field(default=())

    def utilities(self, x_max: Optional[float] = None) -> List[ComposedUtility]:
        cap = self.config.p_max_w if x_max is None else x_max
        return [
            ComposedUtility.compose(Exponential(link.eps), f, cap)
            for link, f in zip(self.links, self.objectives)
        ]


def dbm_to_watts(dbm):
    return np.power(10.0, (np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


def noise_floor_dbm(cfg: ScenarioConfig) -> float:
    return cfg.noise_psd_dbm_hz + cfg.noise_figure_db + 10.0 * math.log10(cfg.rb_bandwidth_hz)


def noise_floor(cfg: ScenarioConfig) -> float:
    return float(dbm_to_watts(noise_floor_dbm(cfg)))


def pathloss_db(cfg: ScenarioConfig, d):
    """Close-in reference model: 32.4 + 20 log10(f_GHz) + 10 n log10(d)."""
    arr = np.asarray(d, dtype=float)
    if np.any(arr < 1.0):
        raise DomainError(f"distance must be at least 1 m, got {d!r}")
    out = CI_INTERCEPT_DB + 20.0 * math.log10(cfg.carrier_ghz) + 10.0 * cfg.pathloss_exponent * np.log10(arr)
    return float(out) if out.ndim == 0 else out


def compute_interference(
    d2d_terms: Iterable[Tuple[float, float]] = (),
    cell_terms: Iterable[Tuple[float, float]] = (),
    neighbor_d2d_terms: Iterable[Tuple[float, float]] = (),
    neighbor_cell_terms: Iterable[Tuple[float, float]] = (),
) -> float:
    """Sum of power * gain over same-cell and neighbor-cell D2D and cellular interferers."""
    products = []
    for group in (d2d_terms, neighbor_d2d_terms, cell_terms, neighbor_cell_terms):
        for power, gain in group:
            if power < 0 or gain < 0:
                raise DomainError("interferer powers and gains must be nonnegative")
            products.append(power * gain)
    return math.fsum(products)


def draw_fading(rng: np.random.Generator, size: int) -> np.ndarray:
    # |h|^2 with h ~ CN(0, 1)
    h = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return np.abs(h) ** 2 / 2.0


def sample_scenario(cfg: ScenarioConfig | Mapping[str, Any], rng: Optional[np.random.Generator] = None) -> Scenario:
    """Draw one microcell. The first n_ee_links links use energy efficiency."""
    if isinstance(cfg, Mapping):
        cfg = ScenarioConfig(**cfg)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    n = cfg.n_links
    noise_w = noise_floor(cfg)
    distances = rng.uniform(*cfg.d2d_dist_range_m, size=n)
    fading = draw_fading(rng, n)
    interf_db = rng.uniform(*cfg.interf_over_noise_db_range, size=n)
    eps = rng.uniform(*cfg.eps_range, size=n)

    gains = np.power(10.0, -pathloss_db(cfg, distances) / 10.0) * fading
    p_interf = noise_w * np.power(10.0, interf_db / 10.0)

    links = []
    objectives: List[ObjectiveFn] = []
    for k in range(n):
        npi = noise_w + float(p_interf[k])
        if k < cfg.n_ee_links:
            kind = ObjectiveKinds.ENERGY_EFFICIENCY
            objectives.append(EnergyEfficiency(float(gains[k]), npi, cfg.circuit_power_w, cfg.ee_power_unit_w))
        else:
            kind = ObjectiveKinds.RATE
            objectives.append(Rate(float(gains[k]), npi))
        links.append(
            LinkDraw(
                distance_m=float(distances[k]),
                fading_power=float(fading[k]),
                g=float(gains[k]),
                p_interf_w=float(p_interf[k]),
                objective_kind=kind,
                eps=float(eps[k]),
            )
        )
    logger.debug("sampled %d links (%d EE), noise floor %.3e W", n, cfg.n_ee_links, noise_w)
    return Scenario(cfg, noise_w, tuple(links), tuple(objectives))


def scenario_to_frame(scenario: Scenario) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "link": list(range(len(scenario.links))),
            "distance_m": [link.distance_m for link in scenario.links],
            "fading_power": [link.fading_power for link in scenario.links],
            "g": [link.g for link in scenario.links],
            "p_interf_w": [link.p_interf_w for link in scenario.links],
            "kind": [link.objective_kind for link in scenario.links],
            "eps": [link.eps for link in scenario.links],
        }
    )


def rate_ee_frame(scenario: Scenario, n_points: int = 101) -> pd.DataFrame:
    """Rate and energy efficiency of every link over an even power grid on [0, p_max]."""
    if n_points < 2:
        raise DomainError("rate_ee_frame needs at least two grid points")
    cfg = scenario.config
    p = np.linspace(0.0, cfg.p_max_w, n_points)
    frames = []
    for k, link in enumerate(scenario.links):
        npi = scenario.noise_w + link.p_interf_w
        ee = EnergyEfficiency(link.g, npi, cfg.circuit_power_w, cfg.ee_power_unit_w)
        frames.append(
            pd.DataFrame(
                {
                    "link": k + 1,
                    "p": p,
                    "rate": eval_objective(Rate(link.g, npi), p),
                    "ee": eval_objective(ee, p),
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def interference_band(cfg: ScenarioConfig) -> Tuple[float, float]:
    lo_db, hi_db = cfg.interf_over_noise_db_range
    noise_w = noise_floor(cfg)
    return noise_w * 10.0 ** (lo_db / 10.0), noise_w * 10.0 ** (hi_db / 10.0)