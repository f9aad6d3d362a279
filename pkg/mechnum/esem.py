from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .consts import AlphaSchedules, DeltaUpdates, ExitReasons
from .errors import DomainError, InconsistencyError, MechanismConfigError, PreconditionError
from .mechanisms import CenterValuation, validate_alpha
from .valuation import ComposedUtility

logger = logging.getLogger(__name__)


@dataclass
class EsemConfig:
    delta0: float = 1e-2
    alpha0: float = 0.5
    alpha_schedule: str = AlphaSchedules.CONSTANT_GUARDED
    delta_update: str = DeltaUpdates.CONSTANT_CLAMPED
    max_iter: int = 10_000
    seed: int = 0
    gap_tol: float = 1e-13

    def __post_init__(self):
        if not self.delta0 > 0:
            raise MechanismConfigError(f"delta0 must be positive, got {self.delta0}")
        validate_alpha(self.alpha0)
        if self.max_iter < 1:
            raise MechanismConfigError("max_iter must be at least 1")
        if self.alpha_schedule != AlphaSchedules.CONSTANT_GUARDED:
            raise MechanismConfigError(f"unknown alpha_schedule {self.alpha_schedule!r}")
        if self.delta_update != DeltaUpdates.CONSTANT_CLAMPED:
            raise MechanismConfigError(f"unknown delta_update {self.delta_update!r}")
        if self.gap_tol < 0:
            raise MechanismConfigError("gap_tol must be nonnegative")


@dataclass(frozen=True)
class TruthfulQuotes:
    pass


@dataclass(frozen=True)
class ScaledQuote:
    """Greedy (factor > 1) or generous (factor < 1) quoting.

    As a seller the ask is multiplied by factor; as a buyer the bid is
    divided by it.
    """

    factor: float

    def __post_init__(self):
        if not self.factor > 0:
            raise DomainError(f"quote factor must be positive, got {self.factor}")


@dataclass(frozen=True)
class SkipRounds:
    """Refuses to trade except in rounds l with l % period == phase."""

    period: int
    phase: int = 0

    def __post_init__(self):
        if self.period < 2 or not 0 <= self.phase < self.period:
            raise DomainError("SkipRounds needs period >= 2 and 0 <= phase < period")


QuoteStrategy = Union[TruthfulQuotes, ScaledQuote, SkipRounds]


def seller_quotes(u: ComposedUtility, x_i: float, steps: np.ndarray, strategy: Optional[QuoteStrategy], l: int) -> np.ndarray:
    true = float(u.value(x_i)) - np.asarray(u.value(np.maximum(x_i - steps, 0.0)), dtype=float)
    if isinstance(strategy, ScaledQuote):
        return true * strategy.factor
    if isinstance(strategy, SkipRounds) and l % strategy.period != strategy.phase:
        return np.full_like(true, math.inf)
    return true


def buyer_quotes(u: ComposedUtility, x_j: float, steps: np.ndarray, strategy: Optional[QuoteStrategy], l: int) -> np.ndarray:
    true = np.asarray(u.value(x_j + steps), dtype=float) - float(u.value(x_j))
    if isinstance(strategy, ScaledQuote):
        return true / strategy.factor
    if isinstance(strategy, SkipRounds) and l % strategy.period != strategy.phase:
        return np.full_like(true, -math.inf)
    return true


@dataclass(frozen=True)
class RoundMatrices:
    S1: np.ndarray
    S2: np.ndarray
    step: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    W: np.ndarray
    R_i_plus: np.ndarray


def exchange_sets(x: np.ndarray, x_dagger: np.ndarray, gap_tol: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Sellers S1 = {i | x_dagger_i < x_i} and buyers S2 = {j | x_dagger_j > x_j}."""
    S1 = np.flatnonzero(x - x_dagger > gap_tol)
    S2 = np.flatnonzero(x_dagger - x > gap_tol)
    return S1, S2


def pair_steps(x: np.ndarray, x_dagger: np.ndarray, S1: np.ndarray, S2: np.ndarray, delta: float) -> np.ndarray:
    # each side moves at most its remaining gap
    gap1 = x[S1] - x_dagger[S1]
    gap2 = x_dagger[S2] - x[S2]
    return np.minimum(np.minimum(delta, gap1[:, None]), gap2[None, :])


def exchange_gains(nu: CenterValuation, x: np.ndarray, S1: np.ndarray, S2: np.ndarray, step: np.ndarray) -> np.ndarray:
    """theta_ij = nu(x with step moved from i to j) - nu(x)."""
    n1, n2 = step.shape
    moved = np.broadcast_to(x, (n1, n2, x.size)).copy()
    rows, cols = np.indices((n1, n2))
    moved[rows, cols, S1[rows]] -= step
    moved[rows, cols, S2[cols]] += step
    return np.asarray(nu(moved)) - nu(x)


def _surplus(theta: np.ndarray, rho, phi, alpha) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """alpha is a scalar or one value per pair; pairs that do not raise nu never trade."""
    theta = np.asarray(theta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if rho.ndim == 1:
        rho = rho[:, None]
    if phi.ndim == 1:
        phi = phi[None, :]
    psi = alpha * theta + phi - rho
    W = ((psi > 0) & (theta > 0)).astype(int)
    R_i_plus = np.flatnonzero(W.any(axis=1))
    return psi, W, R_i_plus


def esem_round_matrices(
    x_l: Sequence[float],
    x_dagger: Sequence[float],
    rho,
    phi,
    nu: CenterValuation,
    alpha_l: float,
    delta_l: float,
    *,
    gap_tol: float = 0.0,
) -> RoundMatrices:
    """theta, psi, W and R_i+ for one round.

    rho holds one quote per seller (or a |S1| x |S2| matrix when the pair
    steps differ), phi likewise per buyer.
    """
    x = np.asarray(x_l, dtype=float)
    target = np.asarray(x_dagger, dtype=float)
    S1, S2 = exchange_sets(x, target, gap_tol)
    if S1.size == 0 or S2.size == 0:
        raise PreconditionError("round matrices need nonempty seller and buyer sets")
    step = pair_steps(x, target, S1, S2, delta_l)
    theta = exchange_gains(nu, x, S1, S2, step)
    psi, W, R_i_plus = _surplus(theta, rho, phi, alpha_l)
    return RoundMatrices(S1, S2, step, theta, psi, W, R_i_plus)


def esem_alpha_guard(proposed_alpha_l: float, theta_selected: float, history: Sequence[float]) -> float:
    """Cap alpha so that alpha * theta never exceeds an earlier executed product."""
    if theta_selected <= 0:
        raise InconsistencyError(f"exchange gain must be positive, got {theta_selected}")
    if not history:
        return proposed_alpha_l
    return min(proposed_alpha_l, min(history) / theta_selected)


def pair_alphas(proposed_alpha_l: float, theta: np.ndarray, history: Sequence[float]) -> np.ndarray:
    """esem_alpha_guard for every candidate pair at once; zero where theta <= 0.

    Entry (a, b) equals esem_alpha_guard(proposed_alpha_l, theta[a, b], history),
    so whichever pair trades is subsidized at its own capped rate.
    """
    theta = np.asarray(theta, dtype=float)
    alphas = np.zeros_like(theta)
    up = theta > 0
    alphas[up] = proposed_alpha_l
    if history:
        alphas[up] = np.minimum(proposed_alpha_l, min(history) / theta[up])
    return alphas


@dataclass(frozen=True)
class LedgerRecord:
    round: int
    seller: int
    buyer: int
    step: float
    alpha: float
    theta: float
    rho: float
    phi: float
    charge: float
    payment: float

    @property
    def subsidy(self) -> float:
        return self.payment - self.charge

    def to_dict(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "seller": self.seller,
            "buyer": self.buyer,
            "step": self.step,
            "alpha": self.alpha,
            "theta": self.theta,
            "rho": self.rho,
            "phi": self.phi,
            "charge": self.charge,
            "payment": self.payment,
        }


class QuotePolice:
    """Flags quote sequences no concave valuation could have produced.

    A seller giving up resource at ever lower positions must not ask a lower
    per-unit price than before; a buyer moving up must not bid a higher one.
    """

    def __init__(self, rel_tol: float = 1e-9):
        self.rel_tol = rel_tol
        self._asks: Dict[int, float] = {}
        self._bids: Dict[int, float] = {}
        self.flags: List[Dict[str, Any]] = []

    def observe(self, l: int, seller: int, ask: float, buyer: int, bid: float, step: float) -> None:
        if step <= 0 or not (math.isfinite(ask) and math.isfinite(bid)):
            return
        unit_ask, unit_bid = ask / step, bid / step
        prev = self._asks.get(seller)
        if prev is not None and unit_ask < prev - self.rel_tol * max(1.0, abs(prev)):
            self._flag(l, seller, "seller", f"unit ask fell from {prev:.6g} to {unit_ask:.6g}")
        prev = self._bids.get(buyer)
        if prev is not None and unit_bid > prev + self.rel_tol * max(1.0, abs(prev)):
            self._flag(l, buyer, "buyer", f"unit bid rose from {prev:.6g} to {unit_bid:.6g}")
        self._asks[seller] = unit_ask
        self._bids[buyer] = unit_bid

    def _flag(self, l: int, user: int, role: str, message: str) -> None:
        logger.warning("round %d: inconsistent quotes from %s %d: %s", l, role, user, message)
        self.flags.append({"round": l, "user": user, "role": role, "message": message})


class TransferLedger:
    def __init__(self, n_users: int):
        self.user_transfers = np.zeros(n_users)
        self.center_subsidy = 0.0
        self.records: List[LedgerRecord] = []
        self.flags: List[Dict[str, Any]] = []

    def book(self, record: LedgerRecord) -> None:
        self.user_transfers[record.buyer] -= record.charge
        self.user_transfers[record.seller] += record.payment
        self.center_subsidy += record.payment - record.charge
        self.records.append(record)

    @property
    def nu_gain(self) -> float:
        return math.fsum(r.theta for r in self.records)

    @property
    def center_net_gain(self) -> float:
        return self.nu_gain - self.center_subsidy

    def to_records(self) -> List[Dict[str, Any]]:
        return [r.to_dict() for r in self.records]


def replay_ledger(records: Iterable[Mapping[str, Any]], n_users: int) -> TransferLedger:
    """Rebuild balances from dumped records in their original order."""
    ledger = TransferLedger(n_users)
    for rec in records:
        ledger.book(LedgerRecord(**{k: rec[k] for k in LedgerRecord.__dataclass_fields__}))
    return ledger


@dataclass(frozen=True)
class ExchangeRound:
    l: int
    x_l: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    W: np.ndarray
    R_i_plus: np.ndarray
    alphas: np.ndarray
    step: np.ndarray
    # matrix position (row in S1, column in S2) of the traded pair
    selected: Optional[Tuple[int, int]] = None

    @property
    def selected_pair(self) -> Optional[Tuple[int, int]]:
        if self.selected is None:
            return None
        a, b = self.selected
        return int(self.S1[a]), int(self.S2[b])

    @property
    def alpha(self) -> float:
        if self.selected is not None:
            return float(self.alphas[self.selected])
        return float(self.alphas.max()) if self.alphas.size else 0.0

    @property
    def transfers(self) -> Optional[Tuple[float, float]]:
        """(charge to the buyer, payment to the seller) of the executed exchange."""
        if self.selected is None:
            return None
        subsidy = self.alpha * float(self.theta[self.selected])
        return float(self.rho[self.selected]) - subsidy, float(self.phi[self.selected]) + subsidy

    def record(self) -> LedgerRecord:
        if self.selected is None:
            raise PreconditionError(f"round {self.l} executed no exchange")
        i, j = self.selected_pair
        charge, payment = self.transfers
        return LedgerRecord(
            self.l,
            i,
            j,
            float(self.step[self.selected]),
            self.alpha,
            float(self.theta[self.selected]),
            float(self.rho[self.selected]),
            float(self.phi[self.selected]),
            charge,
            payment,
        )

    def x_next(self) -> np.ndarray:
        # same float ops as exchange_gains, so theta is exactly nu(x_next) - nu(x_l)
        x = self.x_l.copy()
        if self.selected is not None:
            i, j = self.selected_pair
            s = float(self.step[self.selected])
            x[i] -= s
            x[j] += s
        return x


@dataclass
class EsemResult:
    x_initial: np.ndarray
    x_final: np.ndarray
    ledger: TransferLedger
    rounds: List[ExchangeRound]
    truncated: bool
    exit_reason: str
    alpha_theta: List[float] = field(default_factory=list)
    utility_trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    nu_trace: List[float] = field(default_factory=list)
    dist_trace: List[float] = field(default_factory=list)

    @property
    def exchanges(self) -> List[ExchangeRound]:
        return [r for r in self.rounds if r.selected is not None]

    @property
    def final_utilities(self) -> np.ndarray:
        return self.utility_trace[-1]

    def round_frame(self) -> pd.DataFrame:
        """One row per executed exchange with cumulative utilities after it."""
        rows = []
        for k, (rec, rnd) in enumerate(zip(self.ledger.records, self.exchanges)):
            row = {
                "l": rec.round,
                "selected_i": rec.seller,
                "selected_j": rec.buyer,
                "delta": rec.step,
                "theta": rec.theta,
                "psi": float(rnd.psi[rnd.selected]),
                "rho": rec.rho,
                "phi": rec.phi,
                "charge": rec.charge,
                "payment": rec.payment,
                "nu": self.nu_trace[k + 1],
            }
            row.update({f"u_{n + 1}": float(v) for n, v in enumerate(self.utility_trace[k + 1])})
            rows.append(row)
        return pd.DataFrame(rows)


def _select_pair(W: np.ndarray, R_i_plus: np.ndarray, rng: np.random.Generator) -> Tuple[Optional[Tuple[int, int]], Optional[str]]:
    rows = list(int(r) for r in R_i_plus)
    cols = list(range(W.shape[1]))
    while True:
        if not rows:
            return None, ExitReasons.ROWS_EXHAUSTED
        if not cols:
            return None, ExitReasons.COLUMNS_EXHAUSTED
        a = rows[int(rng.integers(len(rows)))]
        b = cols[int(rng.integers(len(cols)))]
        if W[a, b]:
            return (a, b), None
        rows.remove(a)
        cols.remove(b)


def cumulative_utilities(users: Sequence[ComposedUtility], x: np.ndarray, transfers: np.ndarray) -> np.ndarray:
    return np.array([float(u.value(max(0.0, xi))) for u, xi in zip(users, x)]) + transfers


def esem_round(
    users: Sequence[ComposedUtility],
    x: np.ndarray,
    x_dagger: np.ndarray,
    nu: CenterValuation,
    products: Sequence[float],
    rng: np.random.Generator,
    l: int,
    cfg: EsemConfig,
    strategies: Optional[Mapping[int, QuoteStrategy]] = None,
) -> Tuple[Optional[ExchangeRound], Optional[str]]:
    """Quote, price and draw one round from allocation x without changing it.

    Returns the round and None when a pair trades. Otherwise the exit reason,
    with the round attached when quotes were collected.
    """
    strategies = strategies or {}
    S1, S2 = exchange_sets(x, x_dagger, cfg.gap_tol)
    if S1.size == 0 or S2.size == 0:
        return None, ExitReasons.TARGET_REACHED
    step = pair_steps(x, x_dagger, S1, S2, cfg.delta0)
    theta = exchange_gains(nu, x, S1, S2, step)
    if float(theta.max()) <= 0:
        # remaining gaps too small to move nu
        return None, ExitReasons.NO_PROFITABLE_PAIR
    alphas = pair_alphas(cfg.alpha0, theta, products)

    rho = np.vstack([seller_quotes(users[i], x[i], step[a, :], strategies.get(i), l) for a, i in enumerate(S1)])
    phi = np.column_stack([buyer_quotes(users[j], x[j], step[:, b], strategies.get(j), l) for b, j in enumerate(S2)])
    psi, W, R_i_plus = _surplus(theta, rho, phi, alphas)

    pair, reason = (None, ExitReasons.NO_PROFITABLE_PAIR) if not W.any() else _select_pair(W, R_i_plus, rng)
    rnd = ExchangeRound(l, x.copy(), S1, S2, rho, phi, theta, psi, W, R_i_plus, alphas, step, pair)
    if pair is not None and rnd.alpha != esem_alpha_guard(cfg.alpha0, float(theta[pair]), products):
        raise InconsistencyError(f"round {l}: pair subsidy rate disagrees with the alpha guard")
    return rnd, reason


def esem_run(
    users: Sequence[ComposedUtility],
    x_star: Sequence[float],
    x_dagger: Sequence[float],
    nu: CenterValuation,
    cfg: EsemConfig | Mapping[str, Any] | None = None,
    *,
    strategies: Optional[Mapping[int, QuoteStrategy]] = None,
) -> EsemResult:
    """Iterated subsidized exchanges from x_star toward the center's target.

    Each round sellers quote what giving up a step costs them and buyers
    what receiving it is worth; one pair with positive subsidized surplus
    is drawn at random and trades.
    """
    if isinstance(cfg, Mapping):
        cfg = EsemConfig(**cfg)
    cfg = cfg or EsemConfig()
    strategies = dict(strategies or {})

    x = np.array(x_star, dtype=float)
    target = np.asarray(x_dagger, dtype=float)
    if x.shape != target.shape or x.shape[0] != len(users):
        raise DomainError("x_star, x_dagger and users must have matching lengths")
    if np.any(x < 0) or np.any(target < 0):
        raise DomainError("allocations must be nonnegative")

    rng = np.random.default_rng(cfg.seed)
    ledger = TransferLedger(len(users))
    police = QuotePolice()
    rounds: List[ExchangeRound] = []
    products: List[float] = []
    utilities = [cumulative_utilities(users, x, ledger.user_transfers)]
    nu_trace = [nu(x)]
    dist_trace = [float(np.linalg.norm(x - target))]
    exit_reason = ExitReasons.MAX_ITER
    truncated = True

    for l in range(cfg.max_iter):
        rnd, reason = esem_round(users, x, target, nu, products, rng, l, cfg, strategies)
        if rnd is not None:
            rounds.append(rnd)
        if reason is not None:
            exit_reason, truncated = reason, False
            break

        rec = rnd.record()
        x = rnd.x_next()
        ledger.book(rec)
        police.observe(l, rec.seller, rec.rho, rec.buyer, rec.phi, rec.step)
        products.append(rec.alpha * rec.theta)
        utilities.append(cumulative_utilities(users, x, ledger.user_transfers))
        nu_trace.append(nu(x))
        dist_trace.append(float(np.linalg.norm(x - target)))
        logger.debug("round %d: %d -> %d step=%.3g theta=%.3g alpha=%.3g", l, rec.seller, rec.buyer, rec.step, rec.theta, rec.alpha)

    if truncated:
        logger.warning("ESEM truncated after max_iter=%d rounds", cfg.max_iter)
    ledger.flags = police.flags
    return EsemResult(
        x_initial=np.array(x_star, dtype=float),
        x_final=x,
        ledger=ledger,
        rounds=rounds,
        truncated=truncated,
        exit_reason=exit_reason,
        alpha_theta=products,
        utility_trace=np.vstack(utilities),
        nu_trace=nu_trace,
        dist_trace=dist_trace,
    )
