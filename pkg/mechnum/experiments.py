"""Example runners and the `check` suites, writing CSV/NDJSON artifacts plus summary.json."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from . import audits
from .config import ExperimentConfig, config_hash, default_config
from .consts import CheckSuites, Experiments
from .csvio import write_csv
from .d2d_scenario import rate_ee_frame, sample_scenario, scenario_to_frame
from .dual_solver import SolverConfig, solve
from .errors import ConfigError, PreconditionError
from .esem import EsemConfig, EsemResult, esem_run
from .instances import EsemInstance, derived_seed, esem_instance, sample_rng, sem_instance
from .mechanisms import sem_run
from .ndjson import write_ndjson
from .strategies import best_misreport_sweep, normalize_curve
from .types import PropertyVerdict, Summary, verdict
from .valuation import ComposedUtility

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

SUMMARY_FILE = "summary.json"

SUITE_EXPERIMENTS = {
    CheckSuites.ORACLE: Experiments.ORACLE_CHECK,
    CheckSuites.LEMMAS: Experiments.DUAL_AUDIT,
    CheckSuites.SEM: Experiments.EXAMPLE2,
    CheckSuites.ESEM: Experiments.EXAMPLE3,
}


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Map in submission order, on a process pool when workers > 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _Artifacts:
    """Writes one run's files and remembers their names for the summary."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.out = cfg.output_path
        self.names: List[str] = []

    def csv(self, name: str, frame: pd.DataFrame) -> Path:
        self.names.append(name)
        return write_csv(frame, self.out / name, config_hash=self.hash, seed=self.cfg.seed)

    def ndjson(self, name: str, records: Iterable[Dict[str, Any]]) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            count = write_ndjson(records, fh)
        logger.info("wrote %s (%d records)", path, count)
        self.names.append(name)
        return path

    def summary(
        self, name: str, properties: Dict[str, PropertyVerdict], metrics: Optional[Dict[str, Any]] = None
    ) -> Summary:
        summary = Summary(
            experiment=name,
            config_hash=self.hash,
            seed=self.cfg.seed,
            properties=properties,
            metrics=metrics or {},
            outputs=list(self.names),
        )
        write_summary(self.out / SUMMARY_FILE, summary)
        return summary


def write_summary(path: Path, summary: Summary) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2, default=_json_default))
        fh.write("\n")
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


# --- Example 1: dual pricing rewards demand reduction -----------------------------------------


def _link_sweep(job: Tuple[List[ComposedUtility], int, List[float], float, float, SolverConfig]):
    users, i, grid, X_max, x_max, solver = job
    return best_misreport_sweep(users, i, grid, X_max, x_max, solver, param="eps")


def run_example1(cfg: ExperimentConfig) -> Summary:
    scen = cfg.scenario
    scenario = sample_scenario(scen, sample_rng(cfg.seed, 0))
    users = scenario.utilities(scen.p_max_w)
    baseline = solve(users, scen.total_power_w, scen.p_max_w, cfg.solver)
    if not baseline.converged:
        logger.warning("truthful allocation did not converge")
    grid = cfg.mechanism.eps_grid
    jobs = [(users, i, grid, scen.total_power_w, scen.p_max_w, cfg.solver) for i in range(len(users))]
    sweeps = parallel_map(_link_sweep, jobs, cfg.workers)

    curves, markers = [], []
    not_best = smaller_alloc = profitable = flagged = 0
    for i, sweep in enumerate(sweeps):
        frame = sweep.to_frame().rename(columns={"strategy_param": "eps_reported"})
        frame.insert(0, "link", i + 1)
        curves.append(frame)
        flagged += int(frame.flagged.sum())

        truth = sweep.baseline
        utility = np.append(frame.utility_raw.to_numpy(), truth.u_true)
        allocation = np.append(frame.allocation_raw.to_numpy(), truth.x_under)
        markers.append(
            {
                "link": i + 1,
                "eps_true": scenario.links[i].eps,
                "x_truthful": truth.x_under,
                "u_truthful": truth.u_true,
                "utility_norm": float(normalize_curve(utility)[-1]),
                "allocation_norm": float(normalize_curve(allocation)[-1]),
                "best_eps": float(sweep.params[int(np.argmax(frame.utility_raw))]),
                "best_gain": float(frame.utility_raw.max() - truth.u_true),
            }
        )
        if frame.utility_raw.max() < truth.u_true:
            not_best += 1
        better = frame.utility_raw > truth.u_true + 1e-9
        profitable += int(better.sum())
        smaller_alloc += int((better & (frame.allocation_raw >= truth.x_under)).sum())

    art = _Artifacts(cfg)
    art.csv("example1_curves.csv", pd.concat(curves, ignore_index=True))
    art.csv("example1_truthful.csv", pd.DataFrame(markers))
    art.csv("example1_rate_ee.csv", rate_ee_frame(scenario))
    art.csv("scenario.csv", scenario_to_frame(scenario))
    props = {
        "example1_profitable_points_smaller_allocation": verdict(
            smaller_alloc, profitable, "every point beating truthful gets less power"
        ),
        "example1_truthful_not_best": verdict(
            not_best, len(sweeps), "grid maximum at least the truthful utility"
        ),
        "example1_converged": verdict(flagged, sum(len(s.outcomes) for s in sweeps), "flagged sweep points"),
    }
    audits.log_verdicts(Experiments.EXAMPLE1, props)
    metrics = {"lambda_star": baseline.lambda_star, "x_star": baseline.x.tolist()}
    return art.summary(Experiments.EXAMPLE1, props, metrics)


# --- Example 2: one-shot subsidized exchange ---------------------------------------------------


def _sem_sample(job: Tuple[ExperimentConfig, int]) -> List[Dict[str, Any]]:
    cfg, k = job
    try:
        inst = sem_instance(cfg, sample_rng(cfg.seed, k))
    except PreconditionError as error:
        logger.warning("sample %d skipped: %s", k, error)
        return []
    if inst.s_c <= 0:
        logger.info("sample %d skipped: target equals x*", k)
        return []
    rows = []
    for alpha in cfg.mechanism.alpha_grid:
        out = sem_run(inst.rho_true, inst.phi_true, inst.s_c, alpha)
        rows.append(
            {
                "sample": k,
                "alpha": alpha,
                "rho": inst.rho_true,
                "phi": inst.phi_true,
                "s_c": inst.s_c,
                "success": out.success,
                "pi_1": out.pi_1,
                "pi_2": out.pi_2,
                "pi_c": out.pi_c,
                "pi_c_norm": out.pi_c / inst.s_c,
            }
        )
    return rows


def run_example2(cfg: ExperimentConfig) -> Summary:
    chunks = parallel_map(_sem_sample, [(cfg, k) for k in range(cfg.n_samples)], cfg.workers)
    samples = pd.DataFrame([row for chunk in chunks for row in chunk])
    if samples.empty:
        raise PreconditionError("no usable two-user samples")

    successes = samples[samples.success]
    curve = (
        samples.groupby("alpha", sort=True)
        .agg(success_prob=("success", "mean"), mean_pi_c=("pi_c", "mean"))
        .reset_index()
    )
    norm = successes.groupby("alpha", sort=True).pi_c_norm.mean()
    curve["mean_pi_c_norm"] = curve.alpha.map(norm).fillna(0.0)

    prob = curve.success_prob.to_numpy()
    gain = curve.mean_pi_c_norm.to_numpy()
    monotone_violations = int(np.sum(np.diff(prob) < 0))
    gain_increases = int(np.sum(np.diff(gain[prob > 0]) > 1e-12))
    ends = curve[curve.success_prob > 0]
    tradeoff_ok = len(ends) < 2 or ends.mean_pi_c_norm.iloc[-1] < ends.mean_pi_c_norm.iloc[0]

    art = _Artifacts(cfg)
    art.csv("example2_sem.csv", curve)
    art.csv("example2_samples.csv", samples)
    props = {
        "example2_success_nondecreasing": verdict(monotone_violations, max(len(prob) - 1, 0), "success probability vs alpha"),
        "example2_center_gain_positive": verdict(int((successes.pi_c <= 0).sum()), len(successes), "pi_c > 0 on success"),
        "example2_gain_tradeoff": verdict(int(not tradeoff_ok), 1, "mean pi_c / s_c lower at the largest alpha"),
        "example2_gain_nonincreasing": verdict(gain_increases, max(len(gain) - 1, 0), "mean pi_c / s_c over successes"),
    }
    audits.log_verdicts(Experiments.EXAMPLE2, props)
    metrics = {"samples": int(samples["sample"].nunique()), "mean_s_c": float(samples.groupby("sample").s_c.first().mean())}
    return art.summary(Experiments.EXAMPLE2, props, metrics)


# --- Example 3: iterated exchanges -------------------------------------------------------------


def _esem_job(job: Tuple[EsemInstance, EsemConfig]) -> EsemResult:
    inst, esem_cfg = job
    return esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, esem_cfg)


def run_example3(cfg: ExperimentConfig) -> Summary:
    inst = esem_instance(cfg, sample_rng(cfg.seed, 0))
    n = len(inst.users)
    configs = [replace(cfg.mechanism.esem, seed=derived_seed(cfg.seed, r)) for r in range(cfg.n_samples)]
    results = parallel_map(_esem_job, [(inst, c) for c in configs], cfg.workers)

    traces, runs = [], []
    for r, (result, esem_cfg) in enumerate(zip(results, configs)):
        traces.append(
            pd.DataFrame(
                {
                    "run": r,
                    "round": np.arange(len(result.nu_trace)),
                    "nu": result.nu_trace,
                    "dist": result.dist_trace,
                }
            )
        )
        runs.append({"run": r, "seed": esem_cfg.seed, **audits.esem_run_properties(result, inst.nu, n)})
    runs_frame = pd.DataFrame(runs)

    first = results[0]
    utilities = pd.DataFrame(first.utility_trace, columns=[f"u_{k + 1}" for k in range(n)])
    utilities.insert(0, "round", np.arange(len(utilities)))

    art = _Artifacts(cfg)
    art.csv("scenario.csv", scenario_to_frame(inst.scenario))
    art.csv("example3_traces.csv", pd.concat(traces, ignore_index=True))
    art.csv("example3_utilities.csv", utilities)
    art.csv("example3_rounds.csv", first.round_frame())
    art.csv("example3_runs.csv", runs_frame)
    art.ndjson("example3_ledger.ndjson", first.ledger.to_records())

    final_nu = runs_frame.final_nu.to_numpy()
    mean_nu = float(final_nu.mean())
    spread = float((final_nu.max() - final_nu.min()) / mean_nu) if mean_nu > 0 else float("inf")
    total = len(runs_frame)
    props = {
        "example3_terminates": verdict(int(runs_frame.truncated.sum()), total, "no run hits max_iter"),
        "example3_utilities_nondecreasing": verdict(int((runs_frame.ir_violations > 0).sum()), total, "per user, every round"),
        "example3_conservation": verdict(int((runs_frame.conservation_err > 1e-12).sum()), total, "sum of x to 1e-12"),
        "example3_ledger_replay": verdict(int((~runs_frame.replay_ok).sum()), total, "NDJSON replay"),
        "example3_alpha_theta_nonincreasing": verdict(int((runs_frame.alpha_theta_increases > 0).sum()), total, ""),
        "example3_final_nu_spread": verdict(int(spread > 0.10), 1, f"(max - min) / mean = {spread:.4f}"),
    }
    audits.log_verdicts(Experiments.EXAMPLE3, props)
    metrics = {
        "initial_nu": float(inst.nu(inst.x_star)),
        "target_nu": float(inst.nu(inst.x_dagger)),
        "mean_final_nu": mean_nu,
        "final_nu_spread": spread,
        "mean_rounds": float(runs_frame.rounds.mean()),
    }
    return art.summary(Experiments.EXAMPLE3, props, metrics)


# --- validation harnesses ----------------------------------------------------------------------


def run_oracle_check(cfg: ExperimentConfig) -> Summary:
    props, frame = audits.check_oracle(cfg)
    audits.log_verdicts(Experiments.ORACLE_CHECK, props)
    art = _Artifacts(cfg)
    art.csv("oracle_check.csv", frame)
    metrics = {"max_rel_gap": float(frame.rel_gap.max()), "max_kkt_residual": float(frame.kkt_residual.max())}
    return art.summary(Experiments.ORACLE_CHECK, props, metrics)


def run_dual_audit(cfg: ExperimentConfig) -> Summary:
    props, frame = audits.check_dual_pricing(cfg)
    audits.log_verdicts(Experiments.DUAL_AUDIT, props)
    art = _Artifacts(cfg)
    art.csv("dual_audit.csv", frame)
    return art.summary(Experiments.DUAL_AUDIT, props, {"deviations": len(frame)})


RUNNERS: Dict[str, Callable[[ExperimentConfig], Summary]] = {
    Experiments.EXAMPLE1: run_example1,
    Experiments.EXAMPLE2: run_example2,
    Experiments.EXAMPLE3: run_example3,
    Experiments.DUAL_AUDIT: run_dual_audit,
    Experiments.ORACLE_CHECK: run_oracle_check,
}


def run_experiment(cfg: ExperimentConfig) -> Summary:
    logger.info("running %s seed=%d config_hash=%s -> %s", cfg.experiment, cfg.seed, config_hash(cfg), cfg.output_dir)
    summary = RUNNERS[cfg.experiment](cfg)
    logger.info("finished %s", cfg.experiment)
    return summary


def suite_config(suite: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    if suite not in SUITE_EXPERIMENTS:
        raise ConfigError(f"unknown check suite {suite!r}; expected one of {', '.join(CheckSuites.ALL)}")
    return default_config(SUITE_EXPERIMENTS[suite], overrides)


def run_check(suite: str, cfg: ExperimentConfig) -> Summary:
    """Run one property suite; the frame goes to <suite>_check.csv."""
    if suite == CheckSuites.ORACLE:
        props, frame = audits.check_oracle(cfg)
    elif suite == CheckSuites.LEMMAS:
        props, frame = audits.check_dual_pricing(cfg)
    elif suite == CheckSuites.SEM:
        props, frame = audits.check_sem(cfg)
    elif suite == CheckSuites.ESEM:
        props, frame = audits.check_esem(cfg)
    else:
        raise ConfigError(f"unknown check suite {suite!r}")
    audits.log_verdicts(suite, props)
    art = _Artifacts(cfg)
    art.csv(f"{suite}_check.csv", frame)
    return art.summary(f"check_{suite}", props)


def failed_properties(summary: Summary) -> List[str]:
    return audits.failed(summary.get("properties", {}))
