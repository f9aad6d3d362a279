"""Executable property suites behind `mechnum check`."""
from __future__ import annotations

import copy
import io
import logging
import math
from dataclasses import replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .config import ExperimentConfig
from .dual_solver import brute_force_social_opt, kkt_residual, solve, sum_valuation
from .errors import PreconditionError
from .esem import (
    EsemConfig,
    EsemResult,
    ExchangeRound,
    QuoteStrategy,
    ScaledQuote,
    SkipRounds,
    TransferLedger,
    cumulative_utilities,
    esem_round,
    esem_run,
    exchange_sets,
    replay_ledger,
)
from .instances import (
    EsemInstance,
    allocated_instance,
    derived_seed,
    esem_instance,
    oracle_instance,
    sample_rng,
    sem_instance,
    two_user_exchange,
)
from .mechanisms import CenterValuation, sem_run
from .ndjson import iter_ndjson_objects, write_ndjson
from .strategies import Truthful, alpha_grid, best_misreport_sweep
from .types import PropertyVerdict, verdict

logger = logging.getLogger(__name__)

SCALED_REPORT_ALPHAS = (0.3, 0.5, 0.7, 0.9)
ALLOC_TOL = 1e-9


# --- dual solver against the grid oracle -------------------------------------------------------


def check_oracle(cfg: ExperimentConfig) -> Tuple[Dict[str, PropertyVerdict], pd.DataFrame]:
    rows = []
    max_users = min(4, cfg.scenario.n_links)
    for k in range(cfg.n_samples):
        rng = sample_rng(cfg.seed, k)
        inst = oracle_instance(rng, max_users, symmetric=(k % 10 == 0))
        alloc = solve(inst.users, inst.X_max, inst.x_max, cfg.solver)
        # finer grid where the mesh stays small
        grid_n = 101 if len(inst.users) >= 4 else 401
        oracle = brute_force_social_opt(inst.users, inst.X_max, inst.x_max, grid_n)
        value = sum_valuation(inst.users, alloc.x)
        best = sum_valuation(inst.users, oracle.x)
        rows.append(
            {
                "sample": k,
                "n_users": len(inst.users),
                "symmetric": k % 10 == 0,
                "oversupplied": inst.X_max >= len(inst.users) * inst.x_max,
                "solve_value": value,
                "oracle_value": best,
                "rel_gap": abs(value - best) / max(abs(best), 1e-12),
                "kkt_residual": kkt_residual(alloc, inst.users),
                "lambda_star": alloc.lambda_star,
                "asymmetry": float(np.ptp(alloc.x)) if k % 10 == 0 else 0.0,
                "converged": alloc.converged,
            }
        )
    frame = pd.DataFrame(rows)
    grid_cell = 1.2 * 10.0 / 100
    props = {
        "oracle_equivalence": verdict(int((frame.rel_gap > 1e-3).sum()), len(frame), "sum-valuation gap <= 1e-3 of optimum"),
        "kkt_residual": verdict(int((frame.kkt_residual > 1e-4).sum()), len(frame), "residual <= 1e-4"),
        "convergence": verdict(int((~frame.converged).sum()), len(frame), "dual loop converged"),
        "oversupply_zero_price": verdict(
            int(((frame.oversupplied) & (frame.lambda_star != 0)).sum()),
            int(frame.oversupplied.sum()),
            "oversupplied instances clear at lambda = 0",
        ),
        "symmetry": verdict(int((frame.asymmetry > grid_cell).sum()), int(frame.symmetric.sum()), "symmetric users share equally"),
    }
    return props, frame


# --- dual pricing is not incentive compatible ---------------------------------------------------


def check_dual_pricing(cfg: ExperimentConfig) -> Tuple[Dict[str, PropertyVerdict], pd.DataFrame]:
    alphas = alpha_grid(99)
    eps_grid = cfg.mechanism.eps_grid
    rows: List[Dict[str, Any]] = []
    price_up_gains = price_up_checked = 0
    price_not_lowered = scaled_checked = 0
    no_gain = gain_not_smaller = users_checked = 0
    truthful_best = 0

    for k in range(cfg.n_samples):
        inst = allocated_instance(sample_rng(cfg.seed, k))
        baseline = solve(inst.users, inst.X_max, inst.x_max, cfg.solver)
        for i in range(len(inst.users)):
            if baseline.x[i] <= ALLOC_TOL:
                continue
            users_checked += 1
            a_sweep = best_misreport_sweep(
                inst.users, i, alphas, inst.X_max, inst.x_max, cfg.solver, baseline=baseline
            )
            e_sweep = best_misreport_sweep(
                inst.users, i, eps_grid, inst.X_max, inst.x_max, cfg.solver, param="eps", baseline=baseline
            )
            base_u = a_sweep.baseline.u_true
            if float(np.max(a_sweep.utility_curve)) <= base_u + 1e-6:
                no_gain += 1
            if isinstance(a_sweep.best, Truthful):
                truthful_best += 1

            for family, sweep in (("alpha", a_sweep), ("eps", e_sweep)):
                for param, o in zip(sweep.params, sweep.outcomes):
                    if o.u_true > base_u + ALLOC_TOL and o.x_under >= o.x_baseline:
                        gain_not_smaller += 1
                    if o.lambda_under > o.lambda_baseline + 1e-6:
                        price_up_checked += 1
                        if o.u_true > base_u + 1e-9:
                            price_up_gains += 1
                    rows.append(
                        {
                            "instance": k,
                            "user": i,
                            "family": family,
                            "param": float(param),
                            "x_under": o.x_under,
                            "lambda_under": o.lambda_under,
                            "u_true": o.u_true,
                            "u_reported": o.u_reported,
                            "x_baseline": o.x_baseline,
                            "lambda_baseline": o.lambda_baseline,
                            "u_baseline": base_u,
                            "gain": o.u_true - base_u,
                            "converged": o.converged,
                        }
                    )
            for a in SCALED_REPORT_ALPHAS:
                scaled_checked += 1
                o = a_sweep.outcomes[int(round(a * 100)) - 1]
                if not o.lambda_under < o.lambda_baseline:
                    price_not_lowered += 1

    props = {
        "price_increase_never_pays": verdict(
            price_up_gains, price_up_checked, "u_true <= baseline + 1e-9 when the price rises"
        ),
        "scaled_report_lowers_price": verdict(
            price_not_lowered, scaled_checked, "alpha in {0.3, 0.5, 0.7, 0.9} lowers lambda"
        ),
        "shading_is_profitable": verdict(no_gain, users_checked, "alpha sweep beats truthful by > 1e-6"),
        "profitable_points_take_less": verdict(gain_not_smaller, len(rows), "profitable points get less"),
        "truthful_never_best": verdict(truthful_best, users_checked, "truthful is never the sweep argmax"),
    }
    return props, pd.DataFrame(rows)


# --- subsidized exchange ----------------------------------------------------------------------


def _quote_grid(true_value: float, n: int, upward: bool) -> np.ndarray:
    if upward:
        base = true_value if true_value > 0 else 1.0
        return true_value + base * 2.0 * np.arange(n) / max(n - 1, 1)
    return true_value * np.arange(n) / max(n - 1, 1)


def check_sem(cfg: ExperimentConfig) -> Tuple[Dict[str, PropertyVerdict], pd.DataFrame]:
    n = cfg.mechanism.dsic_grid_n
    alphas = sorted(cfg.mechanism.alpha_grid)
    dsic1 = dsic2 = dsic_checked = 0
    monotone = identity = positive = fair = successes = 0
    rows = []

    for k in range(cfg.n_samples):
        try:
            inst = sem_instance(cfg, sample_rng(cfg.seed, k))
        except PreconditionError as error:
            logger.warning("sample %d skipped: %s", k, error)
            continue
        rho_tr, phi_tr, s_c = inst.rho_true, inst.phi_true, inst.s_c
        if s_c <= 0:
            # x_dagger == x*: nothing to exchange
            continue
        alpha = alphas[k % len(alphas)]

        for phi in _quote_grid(phi_tr, n, upward=False):
            ref = sem_run(rho_tr, phi, s_c, alpha, rho_true=rho_tr, phi_true=phi_tr).pi_1
            for rho in _quote_grid(rho_tr, n, upward=True):
                dsic_checked += 1
                if sem_run(rho, phi, s_c, alpha, rho_true=rho_tr, phi_true=phi_tr).pi_1 > ref + 1e-12:
                    dsic1 += 1
        for rho in _quote_grid(rho_tr, n, upward=True):
            ref = sem_run(rho, phi_tr, s_c, alpha, rho_true=rho_tr, phi_true=phi_tr).pi_2
            for phi in _quote_grid(phi_tr, n, upward=False):
                if sem_run(rho, phi, s_c, alpha, rho_true=rho_tr, phi_true=phi_tr).pi_2 > ref + 1e-12:
                    dsic2 += 1

        succeeded = False
        for a in alphas:
            out = sem_run(rho_tr, phi_tr, s_c, a)
            if succeeded and not out.success:
                monotone += 1
            succeeded = succeeded or out.success
            if out.success:
                successes += 1
                ledger_gain = s_c - out.pay_user1 + out.charge_user2
                if abs(out.pi_c - ledger_gain) > 1e-12:
                    identity += 1
                if out.pi_c <= 0:
                    positive += 1
                expected = phi_tr - rho_tr + a * s_c
                if abs(out.pi_1 - out.pi_2) > 1e-12 or abs(out.pi_1 - expected) > 1e-12:
                    fair += 1
            rows.append(
                {
                    "sample": k,
                    "alpha": a,
                    "rho": rho_tr,
                    "phi": phi_tr,
                    "s_c": s_c,
                    "success": out.success,
                    "pi_1": out.pi_1,
                    "pi_2": out.pi_2,
                    "pi_c": out.pi_c,
                }
            )

    props = {
        "sem_dsic_seller": verdict(dsic1, dsic_checked, "asking more never raises pi_1"),
        "sem_dsic_buyer": verdict(dsic2, dsic_checked, "bidding less never raises pi_2"),
        "sem_alpha_monotone": verdict(monotone, cfg.n_samples, "success stays once alpha allows it"),
        "sem_center_gain_identity": verdict(identity, successes, "pi_c = (1 - 2 alpha) s_c + rho - phi"),
        "sem_center_gain_positive": verdict(positive, successes, "pi_c > 0 on success"),
        "sem_fairness": verdict(fair, successes, "pi_1 = pi_2 = phi - rho + alpha s_c"),
    }
    return props, pd.DataFrame(rows)


# --- extended subsidized exchange ----------------------------------------------------------


def ledger_roundtrip(result: EsemResult, n_users: int) -> bool:
    """Dump the ledger as NDJSON, read it back, and compare the replayed balances."""
    buf = io.StringIO()
    write_ndjson(result.ledger.to_records(), buf)
    replayed = replay_ledger(iter_ndjson_objects([buf.getvalue()]), n_users)
    return bool(
        np.array_equal(replayed.user_transfers, result.ledger.user_transfers)
        and replayed.center_subsidy == result.ledger.center_subsidy
        and len(replayed.records) == len(result.ledger.records)
    )


def esem_run_properties(result: EsemResult, nu: CenterValuation, n_users: int) -> Dict[str, Any]:
    utilities = result.utility_trace
    steps = np.diff(utilities, axis=0)
    ir_violations = int(np.sum(np.any(steps < -1e-12, axis=1))) if steps.size else 0

    totals = [float(np.sum(r.x_l)) for r in result.rounds] + [float(np.sum(result.x_final))]
    start = float(np.sum(result.x_initial))
    conservation_err = max(abs(t - start) for t in totals)

    products = result.alpha_theta
    increases = sum(1 for p, q in zip(products, products[1:]) if q > p * (1 + 1e-12))

    nu_identity_err = abs(result.ledger.nu_gain - (nu(result.x_final) - nu(result.x_initial)))
    net_negative = sum(1 for r in result.ledger.records if (1 - 2 * r.alpha) * r.theta + r.rho - r.phi <= 0)
    return {
        "rounds": len(result.ledger.records),
        "final_nu": nu(result.x_final),
        "final_dist": result.dist_trace[-1],
        "truncated": result.truncated,
        "exit_reason": result.exit_reason,
        "ir_violations": ir_violations,
        "conservation_err": conservation_err,
        "alpha_theta_increases": increases,
        "replay_ok": ledger_roundtrip(result, n_users),
        "nu_identity_err": nu_identity_err,
        "center_net_nonpositive": net_negative,
        "quote_flags": len(result.ledger.flags),
    }


def untruthful_forms(cfg: ExperimentConfig) -> Dict[str, QuoteStrategy]:
    mech = cfg.mechanism
    return {
        "inflated": ScaledQuote(mech.inflate_factor),
        "deflated": ScaledQuote(mech.deflate_factor),
        "skipping": SkipRounds(mech.skip_period, phase=1),
    }


def untruthful_gain_excess(
    inst: EsemInstance,
    esem_cfg: EsemConfig,
    user: int,
    strategy: QuoteStrategy,
    truthful: Optional[EsemResult] = None,
) -> float:
    """Deviator's cumulative gain under the strategy minus its gain when truthful."""
    if truthful is None:
        truthful = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, esem_cfg)
    lying = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, esem_cfg, strategies={user: strategy})
    gain_truthful = truthful.final_utilities[user] - truthful.utility_trace[0][user]
    gain_lying = lying.final_utilities[user] - lying.utility_trace[0][user]
    return float(gain_lying - gain_truthful)


def check_two_user_untruthful(cfg: ExperimentConfig) -> Dict[str, PropertyVerdict]:
    """Two-user reductions where no profitable misreport exists on any path.

    A single exchange covers all three forms; over several rounds, inflated
    and skipping quotes can only cut the truthful path short.
    """
    forms = untruthful_forms(cfg)
    single = multi = single_checked = multi_checked = 0
    for k in range(cfg.n_samples):
        inst = two_user_exchange(sample_rng(cfg.seed, 10_000 + k))
        gap = float(inst.x_star[0] - inst.x_dagger[0])
        one_shot = replace(cfg.mechanism.esem, delta0=2.0 * gap, seed=derived_seed(cfg.seed, k))
        stepped = replace(cfg.mechanism.esem, delta0=gap / 5.0, seed=derived_seed(cfg.seed, k))
        base_one = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, one_shot)
        base_multi = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, stepped)
        for user in (0, 1):
            for name, strategy in forms.items():
                single_checked += 1
                if untruthful_gain_excess(inst, one_shot, user, strategy, base_one) > 1e-9:
                    single += 1
                if name == "deflated":
                    continue
                multi_checked += 1
                if untruthful_gain_excess(inst, stepped, user, strategy, base_multi) > 1e-9:
                    multi += 1
    return {
        "esem_untruthful_single_exchange": verdict(
            single, single_checked, "no form beats truthful in one exchange"
        ),
        "esem_untruthful_two_user_rounds": verdict(
            multi, multi_checked, "inflated and skipping quotes never pay off"
        ),
    }


def _round_deviators(strategy: QuoteStrategy, S1: np.ndarray, S2: np.ndarray, l: int) -> List[int]:
    # scaled forms misstate an ask; skipping bites only in refused rounds
    if isinstance(strategy, ScaledQuote):
        return [int(i) for i in S1]
    if isinstance(strategy, SkipRounds) and l % strategy.period != strategy.phase:
        return [int(k) for k in np.concatenate([S1, S2])]
    return []


def _utility_after(
    users, user: int, x: np.ndarray, transfers: np.ndarray, rnd: Optional[ExchangeRound]
) -> float:
    t = float(transfers[user])
    if rnd is None or rnd.selected is None:
        return float(cumulative_utilities([users[user]], x[user : user + 1], np.array([t]))[0])
    seller, buyer = rnd.selected_pair
    charge, payment = rnd.transfers
    if user == buyer:
        t -= charge
    if user == seller:
        t += payment
    x_next = rnd.x_next()
    return float(cumulative_utilities([users[user]], x_next[user : user + 1], np.array([t]))[0])


def one_round_deviations(
    inst: EsemInstance, esem_cfg: EsemConfig, forms: Mapping[str, QuoteStrategy]
) -> Dict[str, List[float]]:
    """Excess cumulative utility of one user misquoting in one round of the truthful path.

    Every round of the truthful run is replayed from the same allocation,
    alpha history and random stream with a single user deviating; the
    excess is that user's cumulative utility after the deviant round minus
    its value after the truthful one.
    """
    users = inst.users
    x = np.array(inst.x_star, dtype=float)
    target = np.asarray(inst.x_dagger, dtype=float)
    ledger = TransferLedger(len(users))
    products: List[float] = []
    rng = np.random.default_rng(esem_cfg.seed)
    excess: Dict[str, List[float]] = {name: [] for name in forms}
    for l in range(esem_cfg.max_iter):
        S1, S2 = exchange_sets(x, target, esem_cfg.gap_tol)
        trials = [
            (name, user, strategy)
            for name, strategy in forms.items()
            for user in _round_deviators(strategy, S1, S2, l)
        ]
        stream = copy.deepcopy(rng)
        rnd, reason = esem_round(users, x, target, inst.nu, products, rng, l, esem_cfg)
        for name, user, strategy in trials:
            dev, _ = esem_round(
                users, x, target, inst.nu, products, copy.deepcopy(stream), l, esem_cfg, {user: strategy}
            )
            excess[name].append(
                _utility_after(users, user, x, ledger.user_transfers, dev)
                - _utility_after(users, user, x, ledger.user_transfers, rnd)
            )
        if reason is not None:
            break
        rec = rnd.record()
        ledger.book(rec)
        products.append(rec.alpha * rec.theta)
        x = rnd.x_next()
    return excess


def check_multiuser_untruthful(
    cfg: ExperimentConfig, inst: EsemInstance, runs: int
) -> Dict[str, PropertyVerdict]:
    forms = untruthful_forms(cfg)
    counts = {name: 0 for name in forms}
    checked = {name: 0 for name in forms}
    worst = {name: 0.0 for name in forms}
    for r in range(runs):
        esem_cfg = replace(cfg.mechanism.esem, seed=derived_seed(cfg.seed, r))
        for name, values in one_round_deviations(inst, esem_cfg, forms).items():
            checked[name] += len(values)
            counts[name] += sum(1 for v in values if v > 1e-9)
            worst[name] = max([worst[name], *values])
    return {
        f"esem_untruthful_{name}_multiuser": verdict(
            counts[name], checked[name], f"one user, one round, same random stream; max excess {worst[name]:.3g}"
        )
        for name in forms
    }


def check_esem(cfg: ExperimentConfig, *, multiuser: bool = True) -> Tuple[Dict[str, PropertyVerdict], pd.DataFrame]:
    inst = esem_instance(cfg, sample_rng(cfg.seed, 0))
    n = len(inst.users)
    rows = []
    for r in range(cfg.n_samples):
        esem_cfg = replace(cfg.mechanism.esem, seed=derived_seed(cfg.seed, r))
        result = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, esem_cfg)
        rows.append({"run": r, "seed": esem_cfg.seed, **esem_run_properties(result, inst.nu, n)})
    frame = pd.DataFrame(rows)
    runs = len(frame)
    final_nu = frame.final_nu.to_numpy()
    spread = float((final_nu.max() - final_nu.min()) / final_nu.mean()) if final_nu.mean() > 0 else math.inf

    def bad(mask) -> int:
        return int(mask.sum())

    props: Dict[str, PropertyVerdict] = {
        "esem_terminates": verdict(bad(frame.truncated), runs, "no run hits max_iter"),
        "esem_individual_rationality": verdict(
            bad(frame.ir_violations > 0), runs, "cumulative utilities never drop"
        ),
        "esem_conservation": verdict(
            bad(frame.conservation_err > 1e-12), runs, "sum of x constant to 1e-12"
        ),
        "esem_ledger_replay": verdict(bad(~frame.replay_ok), runs, "NDJSON replay reproduces balances"),
        "esem_nu_identity": verdict(
            bad(frame.nu_identity_err > 1e-12), runs, "booked theta sums to the nu change"
        ),
        "esem_alpha_theta_nonincreasing": verdict(
            bad(frame.alpha_theta_increases > 0), runs, "executed alpha*theta"
        ),
        "esem_final_nu_spread": verdict(int(spread > 0.10), 1, f"(max - min) / mean = {spread:.4f}"),
        "esem_center_net_gain": verdict(
            int(frame.center_net_nonpositive.sum()),
            int(frame.rounds.sum()),
            "(1 - 2 alpha) theta + rho - phi > 0 per exchange",
            informational=True,
        ),
    }
    props.update(check_two_user_untruthful(cfg))
    if multiuser:
        props.update(check_multiuser_untruthful(cfg, inst, cfg.n_samples))
    return props, frame


def failed(props: Mapping[str, PropertyVerdict]) -> List[str]:
    return [name for name, v in props.items() if not v["passed"] and not v["informational"]]


def log_verdicts(suite: str, props: Mapping[str, PropertyVerdict]) -> None:
    for name, v in props.items():
        level = logging.INFO if v["passed"] or v["informational"] else logging.WARNING
        status = "pass" if v["passed"] else "FAIL"
        logger.log(level, "%s/%s: %s (%d/%d violations) %s", suite, name, status, v["violations"], v["checked"], v["detail"])
