from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, MechanismConfigError, PreconditionError
from .valuation import ComposedUtility

logger = logging.getLogger(__name__)


def dual_price_transfer(x: Sequence[float], lam: float) -> np.ndarray:
    """Per-user transfers t_i = -lam * x_i under dual pricing."""
    if lam < 0:
        raise DomainError(f"price must be nonnegative, got {lam}")
    return -lam * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class CenterValuation:
    """nu(x) = a * exp(-||x - x_dagger||^k / sigma) with k = norm_power."""

    a: float
    sigma: float
    x_dagger: np.ndarray
    norm_power: int = 2

    def __post_init__(self):
        if not (self.a > 0 and self.sigma > 0):
            raise MechanismConfigError("center valuation needs a > 0 and sigma > 0")
        if self.norm_power not in (1, 2):
            raise MechanismConfigError(f"norm_power must be 1 or 2, got {self.norm_power}")
        object.__setattr__(self, "x_dagger", np.asarray(self.x_dagger, dtype=float))

    def distance(self, x) -> np.ndarray | float:
        diff = np.asarray(x, dtype=float) - self.x_dagger
        d = np.sqrt(np.sum(diff * diff, axis=-1))
        return float(d) if np.ndim(d) == 0 else d

    def __call__(self, x):
        d = np.asarray(self.distance(x))
        out = self.a * np.exp(-(d**self.norm_power) / self.sigma)
        return float(out) if out.ndim == 0 else out

    def with_target(self, x_dagger: Sequence[float]) -> "CenterValuation":
        return CenterValuation(self.a, self.sigma, np.asarray(x_dagger, dtype=float), self.norm_power)


@dataclass(frozen=True)
class SemOutcome:
    success: bool
    charge_user2: float
    pay_user1: float
    pi_1: float
    pi_2: float
    pi_c: float
    x_final: Optional[np.ndarray] = None


def validate_alpha(alpha: float) -> None:
    if not 0 < alpha <= 0.5:
        raise MechanismConfigError(f"alpha must lie in (0, 1/2], got {alpha}")


def sem_truthful_quotes(
    v1: ComposedUtility,
    v2: ComposedUtility,
    x_star: Sequence[float],
    x_dagger: Sequence[float],
) -> Tuple[float, float]:
    """True cost of user 1 and true benefit of user 2 for moving x* to x_dagger."""
    rho = float(v1.value(x_star[0])) - float(v1.value(x_dagger[0]))
    phi = float(v2.value(x_dagger[1])) - float(v2.value(x_star[1]))
    if rho < 0:
        raise PreconditionError("two-user exchange needs v1(x1*) >= v1(x1_dagger)")
    if phi < 0:
        raise PreconditionError("two-user exchange needs v2(x2*) <= v2(x2_dagger)")
    return rho, phi


def sem_run(
    rho: float,
    phi: float,
    s_c: float,
    alpha: float,
    *,
    rho_true: Optional[float] = None,
    phi_true: Optional[float] = None,
    x_star: Optional[Sequence[float]] = None,
    x_dagger: Optional[Sequence[float]] = None,
) -> SemOutcome:
    """One-shot subsidized exchange between a seller (user 1) and a buyer (user 2).

    The reported quotes decide success and transfers; user gains are booked
    against the true quotes when given.
    """
    validate_alpha(alpha)
    if s_c < 0:
        raise DomainError(f"center gain s_c must be nonnegative, got {s_c}")
    rho_true = rho if rho_true is None else rho_true
    phi_true = phi if phi_true is None else phi_true

    if phi + alpha * s_c < rho:
        x_final = None if x_star is None else np.asarray(x_star, dtype=float)
        return SemOutcome(False, 0.0, 0.0, 0.0, 0.0, 0.0, x_final)

    charge = rho - alpha * s_c
    pay = phi + alpha * s_c
    x_final = None if x_dagger is None else np.asarray(x_dagger, dtype=float)
    return SemOutcome(
        success=True,
        charge_user2=charge,
        pay_user1=pay,
        pi_1=pay - rho_true,
        pi_2=phi_true - charge,
        pi_c=(1.0 - 2.0 * alpha) * s_c + rho - phi,
        x_final=x_final,
    )


def project_feasible(y: Sequence[float], upper, budget: float, *, equality: bool = False) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= upper, sum(x) <= budget}.

    With equality the budget constraint is sum(x) == budget. The projection
    is clip(y - tau, 0, upper) for the shift tau that meets the budget.
    """
    y = np.asarray(y, dtype=float)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), y.shape)
    if np.any(upper < 0):
        raise DomainError("box upper bounds must be nonnegative")
    if equality and (budget < 0 or budget > float(np.sum(upper)) * (1 + 1e-12)):
        raise DomainError(f"budget {budget} is outside [0, sum(upper)]")

    clipped = np.clip(y, 0.0, upper)
    total = float(np.sum(clipped))
    if total == budget or (not equality and total <= budget):
        return clipped

    def excess(tau: float) -> float:
        return float(np.sum(np.clip(y - tau, 0.0, upper))) - budget

    lo = float(np.min(y - upper)) - 1.0
    hi = float(np.max(y)) + 1.0
    tau = brentq(excess, lo, hi, xtol=1e-15, rtol=1e-15)
    return np.clip(y - tau, 0.0, upper)


def center_solve_x_dagger(nu: CenterValuation, X_max: float, x_max) -> np.ndarray:
    target = nu.x_dagger
    upper = np.broadcast_to(np.asarray(x_max, dtype=float), target.shape)
    slack = 1e-12 * max(1.0, X_max)
    if np.all(target >= 0) and np.all(target <= upper) and float(np.sum(target)) <= X_max + slack:
        return target.copy()
    logger.info("center target infeasible, projecting onto box and budget")
    return project_feasible(target, upper, X_max)
