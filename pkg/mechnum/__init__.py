from .valuation import (
    Identity,
    Rate,
    EnergyEfficiency,
    Exponential,
    Scaled,
    Affine,
    ComposedUtility,
    eval_objective,
    eval_valuation,
    deriv_utility,
    unimodal_peak,
    compose,
)
from .d2d_scenario import ScenarioConfig, Scenario, sample_scenario, pathloss_db, noise_floor, compute_interference
from .dual_solver import (
    SolverConfig,
    DualState,
    Allocation,
    best_response,
    dual_iterate,
    solve,
    brute_force_social_opt,
    kkt_residual,
)
from .strategies import (
    Truthful,
    ScaledValuation,
    MisreportedEps,
    DeviationOutcome,
    SweepResult,
    deviate_one,
    best_misreport_sweep,
)
from .mechanisms import (
    CenterValuation,
    SemOutcome,
    dual_price_transfer,
    sem_truthful_quotes,
    sem_run,
    center_solve_x_dagger,
    project_feasible,
)
from .esem import (
    EsemConfig,
    ExchangeRound,
    EsemResult,
    TransferLedger,
    TruthfulQuotes,
    ScaledQuote,
    SkipRounds,
    esem_round_matrices,
    esem_alpha_guard,
    esem_round,
    pair_alphas,
    esem_run,
    replay_ledger,
)
from .config import ExperimentConfig, MechanismConfig, default_config, load_config
from .experiments import run_experiment, run_check
from .consts import Experiments, CheckSuites, StepRules, ExitReasons
from .errors import (
    MechnumError,
    DomainError,
    UnsupportedKindError,
    PreconditionError,
    MechanismConfigError,
    InconsistencyError,
    UnsupportedScaleError,
    ConfigError,
)

__all__ = [
    "Identity",
    "Rate",
    "EnergyEfficiency",
    "Exponential",
    "Scaled",
    "Affine",
    "ComposedUtility",
    "eval_objective",
    "eval_valuation",
    "deriv_utility",
    "unimodal_peak",
    "compose",
    "ScenarioConfig",
    "Scenario",
    "sample_scenario",
    "pathloss_db",
    "noise_floor",
    "compute_interference",
    "SolverConfig",
    "DualState",
    "Allocation",
    "best_response",
    "dual_iterate",
    "solve",
    "brute_force_social_opt",
    "kkt_residual",
    "Truthful",
    "ScaledValuation",
    "MisreportedEps",
    "DeviationOutcome",
    "SweepResult",
    "deviate_one",
    "best_misreport_sweep",
    "CenterValuation",
    "SemOutcome",
    "dual_price_transfer",
    "sem_truthful_quotes",
    "sem_run",
    "center_solve_x_dagger",
    "project_feasible",
    "EsemConfig",
    "ExchangeRound",
    "EsemResult",
    "TransferLedger",
    "TruthfulQuotes",
    "ScaledQuote",
    "SkipRounds",
    "esem_round_matrices",
    "esem_alpha_guard",
    "esem_round",
    "pair_alphas",
    "esem_run",
    "replay_ledger",
    "ExperimentConfig",
    "MechanismConfig",
    "default_config",
    "load_config",
    "run_experiment",
    "run_check",
    "Experiments",
    "CheckSuites",
    "StepRules",
    "ExitReasons",
    "MechnumError",
    "DomainError",
    "UnsupportedKindError",
    "PreconditionError",
    "MechanismConfigError",
    "InconsistencyError",
    "UnsupportedScaleError",
    "ConfigError",
]
