"""Seeded problem instances shared by the experiment runners and the audits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .config import ExperimentConfig
from .d2d_scenario import Scenario, sample_scenario
from .dual_solver import Allocation, SolverConfig, solve
from .mechanisms import CenterValuation, center_solve_x_dagger, project_feasible, sem_truthful_quotes
from .valuation import ComposedUtility, Exponential, Identity

logger = logging.getLogger(__name__)


def sample_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def derived_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


@dataclass(frozen=True)
class NumInstance:
    users: List[ComposedUtility]
    X_max: float
    x_max: float
    eps: np.ndarray


def exp_identity_users(eps, x_max: float) -> List[ComposedUtility]:
    return [ComposedUtility.compose(Exponential(float(e)), Identity(), x_max) for e in eps]


def allocated_instance(rng: np.random.Generator, n_users: Optional[int] = None) -> NumInstance:
    """Fully allocated instance: the budget is the total demand at a drawn price.

    Every user is interior at that price, so the clearing price is positive.
    """
    n = int(rng.integers(2, 5)) if n_users is None else n_users
    eps = rng.uniform(0.1, 0.3, size=n)
    lam = rng.uniform(0.02, 0.06)
    x_max = 100.0
    X_max = math.fsum(math.log(e / lam) / e for e in eps)
    return NumInstance(exp_identity_users(eps, x_max), X_max, x_max, eps)


def oracle_instance(rng: np.random.Generator, max_users: int = 4, symmetric: bool = False) -> NumInstance:
    n = 2 if symmetric else int(rng.integers(1, max_users + 1))
    eps = np.full(n, rng.uniform(0.1, 1.0)) if symmetric else rng.uniform(0.1, 1.0, size=n)
    x_max = 10.0
    X_max = float(rng.uniform(0.2, 1.2)) * n * x_max
    return NumInstance(exp_identity_users(eps, x_max), X_max, x_max, eps)


@dataclass(frozen=True)
class SemInstance:
    scenario: Scenario
    users: List[ComposedUtility]
    x_star: np.ndarray
    x_dagger: np.ndarray
    nu: CenterValuation
    s_c: float
    rho_true: float
    phi_true: float
    allocation: Allocation


def sem_instance(cfg: ExperimentConfig, rng: np.random.Generator) -> SemInstance:
    """Two links: link 1 (energy efficiency) sells part of its power to link 2 (rate)."""
    scen = cfg.scenario
    scenario = sample_scenario(scen, rng)
    users = scenario.utilities(scen.p_max_w)
    alloc = solve(users, scen.total_power_w, scen.p_max_w, cfg.solver)
    x_star = alloc.x.copy()
    m = float(rng.uniform(0.0, cfg.mechanism.xdagger_frac)) * float(x_star[0])
    x_dagger = x_star + np.array([-m, m])
    nu = CenterValuation(cfg.mechanism.center_a, cfg.mechanism.center_sigma, x_dagger, cfg.mechanism.norm_power)
    s_c = nu(x_dagger) - nu(x_star)
    rho, phi = sem_truthful_quotes(users[0], users[1], x_star, x_dagger)
    return SemInstance(scenario, users, x_star, x_dagger, nu, s_c, rho, phi, alloc)


@dataclass(frozen=True)
class EsemInstance:
    scenario: Optional[Scenario]
    users: List[ComposedUtility]
    x_star: np.ndarray
    x_dagger: np.ndarray
    nu: CenterValuation
    allocation: Optional[Allocation]


def quantize_shift(shift, quantum: float) -> np.ndarray:
    """Round a sum-zero shift toward zero onto multiples of quantum, keeping the sum zero.

    Entries only shrink, so a shift that kept x feasible still does.
    """
    shift = np.asarray(shift, dtype=float)
    if quantum <= 0:
        return shift.copy()
    k = np.trunc(shift / quantum).astype(np.int64)
    surplus = int(k.sum())
    sign = 1 if surplus > 0 else -1
    while surplus:
        idx = int(np.argmax(sign * k))
        k[idx] -= sign
        surplus -= sign
    return k * quantum


def esem_instance(cfg: ExperimentConfig, rng: np.random.Generator) -> EsemInstance:
    """x* solves the users' problem; the center's target is a sum-preserving perturbation of it."""
    scen = cfg.scenario
    mech = cfg.mechanism
    scenario = sample_scenario(scen, rng)
    users = scenario.utilities(scen.p_max_w)
    alloc = solve(users, scen.total_power_w, scen.p_max_w, cfg.solver)
    if not alloc.converged:
        logger.warning("user allocation did not converge; using the last iterate")
    x_star = alloc.x.copy()

    direction = rng.standard_normal(x_star.size)
    direction -= direction.mean()
    direction *= mech.xdagger_scale / max(float(np.linalg.norm(direction)), 1e-300)
    target = project_feasible(x_star + direction, scen.p_max_w, float(np.sum(x_star)), equality=True)
    target = x_star + quantize_shift(target - x_star, mech.xdagger_quantum)
    nu = CenterValuation(mech.center_a, mech.center_sigma, target, mech.norm_power)
    x_dagger = center_solve_x_dagger(nu, scen.total_power_w, scen.p_max_w)
    return EsemInstance(scenario, users, x_star, x_dagger, nu.with_target(x_dagger), alloc)


def two_user_exchange(rng: np.random.Generator, *, sigma_scale: float = 2.0) -> EsemInstance:
    """Two exponential users at their joint optimum; the target moves power from user 1 to user 2."""
    eps = rng.uniform(0.1, 0.3, size=2)
    x_max = 100.0
    users = exp_identity_users(eps, x_max)
    lam = rng.uniform(0.02, 0.06)
    X_max = math.fsum(math.log(e / lam) / e for e in eps)
    alloc = solve(users, X_max, x_max, SolverConfig())
    x_star = alloc.x.copy()
    m = float(rng.uniform(0.2, 0.8)) * float(x_star[0])
    x_dagger = x_star + np.array([-m, m])
    a = float(10.0 ** rng.uniform(-3.0, 0.0))
    nu = CenterValuation(a, sigma_scale * m * m, x_dagger, 2)
    return EsemInstance(None, users, x_star, x_dagger, nu, alloc)
