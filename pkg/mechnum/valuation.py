from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .consts import ObjectiveKinds
from .errors import DomainError, UnsupportedKindError

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)


def _to_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be nonnegative, got {x!r}")
    return arr


def _unwrap(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True)
class Identity:
    kind = ObjectiveKinds.IDENTITY


@dataclass(frozen=True)
class Rate:
    """Shannon rate log2(1 + g*x / noise_plus_interf) in bit/s/Hz."""

    g: float
    noise_plus_interf: float
    kind = ObjectiveKinds.RATE

    def __post_init__(self):
        if not (self.g > 0 and self.noise_plus_interf > 0):
            raise DomainError("rate requires g > 0 and noise_plus_interf > 0")

    @property
    def snr_slope(self) -> float:
        return self.g / self.noise_plus_interf


@dataclass(frozen=True)
class EnergyEfficiency:
    """Rate per unit of consumed power, r(x) / ((p0 + x) / power_unit).

    power_unit rescales the denominator only (1e-3 gives bit/s/Hz per mW);
    it leaves the peak location unchanged.
    """

    g: float
    noise_plus_interf: float
    p0: float
    power_unit: float = 1.0
    kind = ObjectiveKinds.ENERGY_EFFICIENCY

    def __post_init__(self):
        if not (self.g > 0 and self.noise_plus_interf > 0 and self.p0 > 0):
            raise DomainError("energy efficiency requires g, noise_plus_interf and p0 > 0")
        if not self.power_unit > 0:
            raise DomainError("power_unit must be positive")

    @property
    def rate(self) -> Rate:
        return Rate(self.g, self.noise_plus_interf)


ObjectiveFn = Union[Identity, Rate, EnergyEfficiency]


@dataclass(frozen=True)
class Exponential:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError(f"eps must be positive, got {self.eps}")


@dataclass(frozen=True)
class Scaled:
    alpha: float
    inner: "ValuationFn"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class Affine:
    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise DomainError(f"weight must be positive, got {self.weight}")


ValuationFn = Union[Exponential, Scaled, Affine]


def _rate_value(f: Rate, x: np.ndarray) -> np.ndarray:
    return np.log1p(f.snr_slope * x) / LN2


def _rate_deriv(f: Rate, x: np.ndarray) -> np.ndarray:
    c = f.snr_slope
    return c / ((1.0 + c * x) * LN2)


def eval_objective(f: ObjectiveFn, x):
    arr = _to_array(x, "resource")
    if isinstance(f, Identity):
        out = arr.copy()
    elif isinstance(f, Rate):
        out = _rate_value(f, arr)
    elif isinstance(f, EnergyEfficiency):
        out = _rate_value(f.rate, arr) * f.power_unit / (f.p0 + arr)
    else:
        raise UnsupportedKindError(f"unknown objective {f!r}")
    return _unwrap(out)


def objective_deriv(f: ObjectiveFn, x):
    arr = _to_array(x, "resource")
    if isinstance(f, Identity):
        out = np.ones_like(arr)
    elif isinstance(f, Rate):
        out = _rate_deriv(f, arr)
    elif isinstance(f, EnergyEfficiency):
        q = f.p0 + arr
        out = f.power_unit * _ee_numerator(f, arr) / (q * q)
    else:
        raise UnsupportedKindError(f"unknown objective {f!r}")
    return _unwrap(out)


def _ee_numerator(f: EnergyEfficiency, x):
    # r'(x)(p0 + x) - r(x); strictly decreasing in x
    rate = f.rate
    return _rate_deriv(rate, x) * (f.p0 + x) - _rate_value(rate, x)


def eval_valuation(v: ValuationFn, b):
    arr = _to_array(b, "objective value")
    return _unwrap(_valuation(v, arr))


def _valuation(v: ValuationFn, b: np.ndarray) -> np.ndarray:
    if isinstance(v, Exponential):
        return -np.expm1(-v.eps * b)
    if isinstance(v, Scaled):
        return v.alpha * _valuation(v.inner, b)
    if isinstance(v, Affine):
        return v.weight * b
    raise UnsupportedKindError(f"unknown valuation {v!r}")


def valuation_deriv(v: ValuationFn, b):
    arr = _to_array(b, "objective value")
    return _unwrap(_valuation_deriv(v, arr))


def _valuation_deriv(v: ValuationFn, b: np.ndarray) -> np.ndarray:
    if isinstance(v, Exponential):
        return v.eps * np.exp(-v.eps * b)
    if isinstance(v, Scaled):
        return v.alpha * _valuation_deriv(v.inner, b)
    if isinstance(v, Affine):
        return np.full_like(b, v.weight)
    raise UnsupportedKindError(f"unknown valuation {v!r}")


def exponential_params(v: ValuationFn) -> Optional[Tuple[float, float]]:
    """Return (scale, eps) when v is scale * (1 - exp(-eps*b)), else None."""
    if isinstance(v, Exponential):
        return 1.0, v.eps
    if isinstance(v, Scaled):
        inner = exponential_params(v.inner)
        if inner is not None:
            return v.alpha * inner[0], inner[1]
    return None


def unimodal_peak(f: ObjectiveFn, p_max: float | None = None) -> float:
    """Maximizer of an energy-efficiency objective on [0, p_max].

    The stationarity numerator r'(p)(p0 + p) - r(p) is positive at 0 and
    strictly decreasing, so its root is bracketed and unique. Without p_max
    the bracket is grown geometrically.
    """
    if not isinstance(f, EnergyEfficiency):
        raise UnsupportedKindError(f"peak search needs an energy-efficiency objective, got {f.kind}")
    if p_max is not None:
        if p_max <= 0:
            raise DomainError("p_max must be positive")
        if _ee_numerator(f, p_max) >= 0:
            return float(p_max)
        hi = float(p_max)
    else:
        hi = max(f.p0, 1.0 / f.rate.snr_slope)
        while _ee_numerator(f, hi) >= 0:
            hi *= 2.0
    return float(brentq(lambda p: _ee_numerator(f, p), 0.0, hi, xtol=1e-15, rtol=1e-12))


@dataclass(frozen=True)
class ComposedUtility:
    """u(x) = v(b(x)) on [0, domain_hi]."""

    valuation: ValuationFn
    objective: ObjectiveFn
    domain_hi: float

    def __post_init__(self):
        if not self.domain_hi >= 0:
            raise DomainError("domain_hi must be nonnegative")

    @classmethod
    def compose(cls, valuation: ValuationFn, objective: ObjectiveFn, x_max: float) -> "ComposedUtility":
        hi = float(x_max)
        if isinstance(objective, EnergyEfficiency):
            hi = unimodal_peak(objective, x_max)
        return cls(valuation, objective, hi)

    def with_valuation(self, valuation: ValuationFn) -> "ComposedUtility":
        return replace(self, valuation=valuation)

    def evaluate(self, x):
        """Return (value, clamped) where clamped marks x beyond domain_hi."""
        arr = _to_array(x, "resource")
        over = arr > self.domain_hi
        if np.any(over):
            logger.debug("clamping %d request(s) above domain_hi=%g", int(np.sum(over)), self.domain_hi)
            arr = np.minimum(arr, self.domain_hi)
        b = eval_objective(self.objective, arr)
        value = _valuation(self.valuation, np.asarray(b, dtype=float))
        return _unwrap(value), (bool(over) if over.ndim == 0 else over)

    def value(self, x):
        return self.evaluate(x)[0]

    def __call__(self, x):
        return self.evaluate(x)[0]

    def deriv(self, x):
        arr = _to_array(x, "resource")
        slack = 1e-12 * max(1.0, self.domain_hi)
        if np.any(arr > self.domain_hi + slack):
            raise DomainError(f"x={x!r} outside [0, {self.domain_hi}]")
        arr = np.minimum(arr, self.domain_hi)
        b = np.asarray(eval_objective(self.objective, arr), dtype=float)
        db = np.asarray(objective_deriv(self.objective, arr), dtype=float)
        return _unwrap(_valuation_deriv(self.valuation, b) * db)


def deriv_utility(u: ComposedUtility, x):
    return u.deriv(x)


def compose(valuation: ValuationFn, objective: ObjectiveFn, x_max: float) -> ComposedUtility:
    return ComposedUtility.compose(valuation, objective, x_max)
