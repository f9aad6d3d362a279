from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .dual_solver import Allocation, SolverConfig, solve
from .errors import DomainError, PreconditionError, UnsupportedKindError
from .valuation import ComposedUtility, Exponential, Scaled, ValuationFn

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Truthful:
    pass


@dataclass(frozen=True)
class ScaledValuation:
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must lie strictly inside (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class MisreportedEps:
    eps_reported: float

    def __post_init__(self):
        if not self.eps_reported > 0:
            raise DomainError(f"eps_reported must be positive, got {self.eps_reported}")


ReportingStrategy = Union[Truthful, ScaledValuation, MisreportedEps]


@dataclass(frozen=True)
class DeviationOutcome:
    strategy: ReportingStrategy
    x_under: float
    lambda_under: float
    u_true: float
    u_reported: float
    x_baseline: float
    lambda_baseline: float
    u_truthful_baseline: float
    converged: bool

    @property
    def gain(self) -> float:
        return self.u_true - self.u_truthful_baseline


@dataclass(frozen=True)
class SweepResult:
    best: ReportingStrategy
    params: np.ndarray
    outcomes: List[DeviationOutcome]
    utility_curve: np.ndarray
    allocation_curve: np.ndarray
    lambda_curve: np.ndarray
    baseline: DeviationOutcome

    def to_frame(self) -> pd.DataFrame:
        utility = np.array([o.u_true for o in self.outcomes])
        allocation = np.array([o.x_under for o in self.outcomes])
        return pd.DataFrame(
            {
                "strategy_param": self.params,
                "utility_raw": utility,
                "utility_norm": normalize_curve(utility),
                "allocation_raw": allocation,
                "allocation_norm": normalize_curve(allocation),
                "lambda": self.lambda_curve,
                "flagged": [not o.converged for o in self.outcomes],
            }
        )


def _replace_eps(v: ValuationFn, eps: float) -> ValuationFn:
    if isinstance(v, Exponential):
        return Exponential(eps)
    if isinstance(v, Scaled):
        return Scaled(v.alpha, _replace_eps(v.inner, eps))
    raise UnsupportedKindError(f"valuation {type(v).__name__} has no eps to misreport")


def reported_utility(true_u: ComposedUtility, s: ReportingStrategy) -> ComposedUtility:
    if isinstance(s, Truthful):
        return true_u
    if isinstance(s, ScaledValuation):
        return true_u.with_valuation(Scaled(s.alpha, true_u.valuation))
    if isinstance(s, MisreportedEps):
        return true_u.with_valuation(_replace_eps(true_u.valuation, s.eps_reported))
    raise UnsupportedKindError(f"unknown strategy {s!r}")


def true_utility(u: ComposedUtility, x: float, lam: float) -> float:
    """v_i(b_i(x)) - lam * x under the true valuation."""
    return float(u.value(max(0.0, x))) - lam * x


def deviate_one(
    users: Sequence[ComposedUtility],
    i: int,
    s: ReportingStrategy,
    X_max: float,
    x_max: float,
    cfg: SolverConfig | Mapping[str, Any] | None = None,
    *,
    baseline: Optional[Allocation] = None,
) -> DeviationOutcome:
    if not 0 <= i < len(users):
        raise IndexError(f"deviator index {i} out of range for {len(users)} users")
    if baseline is None:
        baseline = solve(users, X_max, x_max, cfg)
    reported = list(users)
    reported[i] = reported_utility(users[i], s)
    alloc = baseline if isinstance(s, Truthful) else solve(reported, X_max, x_max, cfg)
    if not alloc.converged:
        logger.warning("solver did not converge for user %d strategy %r", i, s)

    x_under = float(alloc.x[i])
    x_base = float(baseline.x[i])
    return DeviationOutcome(
        strategy=s,
        x_under=x_under,
        lambda_under=alloc.lambda_star,
        u_true=true_utility(users[i], x_under, alloc.lambda_star),
        u_reported=true_utility(reported[i], x_under, alloc.lambda_star),
        x_baseline=x_base,
        lambda_baseline=baseline.lambda_star,
        u_truthful_baseline=true_utility(users[i], x_base, baseline.lambda_star),
        converged=alloc.converged and baseline.converged,
    )


def normalize_curve(curve: Sequence[float]) -> np.ndarray:
    arr = np.asarray(curve, dtype=float)
    peak = float(np.max(arr)) if arr.size else 0.0
    if peak <= 0:
        peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    return arr / peak if peak > 0 else arr.copy()


def alpha_grid(n: int = 99) -> np.ndarray:
    """n uniform points strictly inside (0, 1)."""
    return np.arange(1, n + 1) / (n + 1)


def best_misreport_sweep(
    users: Sequence[ComposedUtility],
    i: int,
    grid: Sequence[float],
    X_max: float,
    x_max: float,
    cfg: SolverConfig | Mapping[str, Any] | None = None,
    *,
    param: str = "alpha",
    normalize: bool = False,
    baseline: Optional[Allocation] = None,
) -> SweepResult:
    """Evaluate one deviation per grid point with everyone else truthful.

    param selects the strategy family: "alpha" for ScaledValuation, "eps" for
    MisreportedEps. The best strategy is Truthful unless a grid point is
    strictly better than the truthful baseline.
    """
    if len(grid) == 0:
        raise PreconditionError("sweep grid must not be empty")
    if param not in ("alpha", "eps"):
        raise DomainError(f"param must be 'alpha' or 'eps', got {param!r}")
    if baseline is None:
        baseline = solve(users, X_max, x_max, cfg)
    truthful = deviate_one(users, i, Truthful(), X_max, x_max, cfg, baseline=baseline)

    outcomes = []
    for value in grid:
        s = ScaledValuation(float(value)) if param == "alpha" else MisreportedEps(float(value))
        outcomes.append(deviate_one(users, i, s, X_max, x_max, cfg, baseline=baseline))

    utility = np.array([o.u_true for o in outcomes])
    allocation = np.array([o.x_under for o in outcomes])
    lambdas = np.array([o.lambda_under for o in outcomes])
    k = int(np.argmax(utility))
    best: ReportingStrategy = Truthful()
    if utility[k] > truthful.u_true:
        best = outcomes[k].strategy
    if normalize:
        utility = normalize_curve(utility)
        allocation = normalize_curve(allocation)
    return SweepResult(best, np.asarray(grid, dtype=float), outcomes, utility, allocation, lambdas, truthful)
