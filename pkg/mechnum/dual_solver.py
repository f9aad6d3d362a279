from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .consts import StepRules
from .errors import ConfigError, PreconditionError, UnsupportedScaleError
from .valuation import ComposedUtility, Identity, exponential_params

logger = logging.getLogger(__name__)

ORACLE_MAX_USERS = 5


@dataclass
class SolverConfig:
    lambda0: float = 0.0
    step_delta: float = 0.01
    tol: float = 1e-9
    max_iter: int = 500
    step_rule: str = StepRules.SECANT
    record_history: bool = False

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ConfigError("lambda0 must be nonnegative")
        if not self.step_delta > 0:
            raise ConfigError("step_delta must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.step_rule not in StepRules.ALL:
            raise ConfigError(f"unknown step_rule {self.step_rule!r}")


@dataclass(frozen=True)
class DualState:
    lam: float
    iter: int
    reports: Tuple[float, ...]
    history: Optional[Tuple[Tuple[float, Tuple[float, ...]], ...]] = None


@dataclass(frozen=True)
class Allocation:
    x: np.ndarray
    lambda_star: float
    converged: bool
    iters_used: int
    budget: float
    caps: np.ndarray = field(repr=False)
    history: Optional[Tuple[Tuple[float, Tuple[float, ...]], ...]] = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return float(np.sum(self.x))


def best_response(u: ComposedUtility, lam: float, x_max: float) -> float:
    """argmax of u(x) - lam*x over [0, min(x_max, domain_hi)].

    Ties at lam == u'(0) allocate 0.
    """
    hi = min(float(x_max), u.domain_hi)
    if hi <= 0:
        return 0.0
    params = exponential_params(u.valuation)
    if params is not None and isinstance(u.objective, Identity):
        scale, eps = params
        if lam <= 0:
            return hi
        if lam >= scale * eps:
            return 0.0
        return min(hi, math.log(scale * eps / lam) / eps)
    if u.deriv(0.0) <= lam:
        return 0.0
    if u.deriv(hi) >= lam:
        return hi
    return float(brentq(lambda x: u.deriv(x) - lam, 0.0, hi, xtol=1e-15, rtol=1e-15))


def dual_iterate(state: DualState, responses: Sequence[float], X_max: float, delta: float) -> DualState:
    excess = math.fsum(responses) - X_max
    lam = max(0.0, state.lam + delta * excess)
    history = state.history
    if history is not None:
        history = history + ((state.lam, tuple(float(v) for v in responses)),)
    return DualState(lam=lam, iter=state.iter + 1, reports=tuple(float(v) for v in responses), history=history)


class _PriceBracket:
    """Tracks prices with known excess demand sign for the secant step rule."""

    def __init__(self):
        self.lo: Optional[float] = None  # excess > 0
        self.hi: Optional[float] = None  # excess < 0
        self.prev: Optional[Tuple[float, float]] = None
        self.width_checks: List[float] = []

    def next_price(self, lam: float, excess: float, step_delta: float) -> float:
        if excess > 0:
            self.lo = lam if self.lo is None else max(self.lo, lam)
        elif excess < 0:
            self.hi = lam if self.hi is None else min(self.hi, lam)
        prev, self.prev = self.prev, (lam, excess)

        if self.hi is None:
            return lam + max(step_delta * excess, lam)
        if self.lo is None:
            # oversupply at 0 is the only way to stop below every bracket
            return 0.0 if lam > 0 else lam

        mid = 0.5 * (self.lo + self.hi)
        self.width_checks.append(self.hi - self.lo)
        stalled = len(self.width_checks) >= 3 and self.width_checks[-1] > 0.5 * self.width_checks[-3]
        if prev is None or prev[1] == excess or stalled:
            if stalled:
                self.width_checks.clear()
            return mid
        cand = lam - excess * (lam - prev[0]) / (excess - prev[1])
        if self.lo < cand < self.hi:
            return cand
        return mid


def _step_size(cfg: SolverConfig, j: int, lam: float, excess: float, bracket: _PriceBracket) -> float:
    if cfg.step_rule == StepRules.FIXED:
        return cfg.step_delta
    if cfg.step_rule == StepRules.DIMINISHING:
        return cfg.step_delta / math.sqrt(j + 1)
    target = bracket.next_price(lam, excess, cfg.step_delta)
    if excess == 0:
        return cfg.step_delta
    return (target - lam) / excess


def solve(
    users: Sequence[ComposedUtility],
    X_max: float,
    x_max: float,
    cfg: SolverConfig | Mapping[str, Any] | None = None,
) -> Allocation:
    """Dual decomposition: best responses against a price updated by dual_iterate.

    Non-convergence is reported through Allocation.converged.
    """
    if isinstance(cfg, Mapping):
        cfg = SolverConfig(**cfg)
    cfg = cfg or SolverConfig()
    if not users:
        raise PreconditionError("solve needs at least one user")

    caps = np.array([min(float(x_max), u.domain_hi) for u in users])
    state = DualState(
        lam=cfg.lambda0,
        iter=0,
        reports=tuple(0.0 for _ in users),
        history=() if cfg.record_history else None,
    )
    bracket = _PriceBracket()
    x_prev: Optional[np.ndarray] = None
    tol = cfg.tol

    for j in range(cfg.max_iter):
        x = np.array([best_response(u, state.lam, x_max) for u in users])
        excess = math.fsum(x) - X_max
        stable = x_prev is not None and float(np.max(np.abs(x - x_prev))) <= tol
        feasible = excess <= tol and (state.lam == 0.0 or abs(excess) <= tol)
        if stable and feasible:
            logger.debug("dual loop converged after %d iterations at lambda=%.6g", j + 1, state.lam)
            return Allocation(x, state.lam, True, j + 1, float(X_max), caps, _final_history(state, x))
        delta = _step_size(cfg, j, state.lam, excess, bracket)
        logger.debug("iter %d lambda=%.9g excess=%.3e", j, state.lam, excess)
        state = dual_iterate(state, x, X_max, delta)
        x_prev = x

    x = np.array([best_response(u, state.lam, x_max) for u in users])
    logger.warning("dual loop hit max_iter=%d without converging (lambda=%.6g)", cfg.max_iter, state.lam)
    return Allocation(x, state.lam, False, cfg.max_iter, float(X_max), caps, _final_history(state, x))


def _final_history(state: DualState, x: np.ndarray):
    if state.history is None:
        return None
    return state.history + ((state.lam, tuple(float(v) for v in x)),)


def sum_valuation(users: Sequence[ComposedUtility], x: Sequence[float]) -> float:
    return math.fsum(float(u.value(max(0.0, float(xi)))) for u, xi in zip(users, x))


def _implied_price(users: Sequence[ComposedUtility], x: np.ndarray, caps: np.ndarray, X_max: float, tol: float) -> float:
    if np.sum(x) < X_max - tol:
        return 0.0
    interior = [float(u.deriv(xi)) for u, xi, c in zip(users, x, caps) if tol < xi < c - tol]
    if interior:
        return float(np.mean(interior))
    return 0.0


def brute_force_social_opt(
    users: Sequence[ComposedUtility],
    X_max: float,
    x_max: float,
    grid_n: int = 101,
) -> Allocation:
    """Grid search over the first N-1 users; the last one takes the clipped remainder."""
    n = len(users)
    if n > ORACLE_MAX_USERS:
        raise UnsupportedScaleError(f"oracle supports at most {ORACLE_MAX_USERS} users, got {n}")
    caps = np.array([min(float(x_max), u.domain_hi) for u in users])
    axes = [np.linspace(0.0, min(c, X_max), grid_n) for c in caps[:-1]]

    if n == 1:
        pts = np.linspace(0.0, min(caps[0], X_max), grid_n)
        values = np.asarray(users[0].value(pts))
        best = int(np.argmax(values))
        x = np.array([pts[best]])
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        cols = [m.ravel() for m in mesh]
        spent = np.sum(cols, axis=0)
        keep = spent <= X_max * (1 + 1e-12)
        cols = [c[keep] for c in cols]
        last = np.clip(X_max - spent[keep], 0.0, caps[-1])
        cols.append(last)
        total = np.zeros_like(last)
        for u, c in zip(users, cols):
            total = total + np.asarray(u.value(c))
        best = int(np.argmax(total))
        x = np.array([c[best] for c in cols])

    lam = _implied_price(users, x, caps, X_max, 1e-9 * max(1.0, X_max))
    return Allocation(x, lam, True, 1, float(X_max), caps)


def kkt_residual(alloc: Allocation, users: Sequence[ComposedUtility]) -> float:
    """Stationarity, complementary slackness and budget violations of an allocation."""
    lam = alloc.lambda_star
    worst = 0.0
    for u, xi, cap in zip(users, alloc.x, alloc.caps):
        xi = float(xi)
        edge = 1e-12 * max(1.0, cap)
        d = float(u.deriv(min(max(xi, 0.0), u.domain_hi))) - lam
        if xi <= edge:
            viol = max(0.0, d)
        elif xi >= cap - edge:
            viol = max(0.0, -d)
        else:
            viol = abs(d)
        worst = max(worst, viol)
    slack = alloc.budget - alloc.total
    return worst + abs(lam * slack) + max(0.0, -slack)


def trace_frame(alloc: Allocation) -> pd.DataFrame:
    """(iter, lambda, x_1..x_N) rows from a solve run with record_history."""
    if alloc.history is None:
        raise PreconditionError("allocation carries no history; solve with record_history=True")
    rows = []
    for j, (lam, xs) in enumerate(alloc.history):
        row = {"iter": j, "lambda": lam}
        row.update({f"x_{k + 1}": v for k, v in enumerate(xs)})
        rows.append(row)
    return pd.DataFrame(rows)
