class ObjectiveKinds:
    IDENTITY = "identity"
    RATE = "rate"
    ENERGY_EFFICIENCY = "energy_efficiency"


class StepRules:
    FIXED = "fixed"
    DIMINISHING = "diminishing"
    SECANT = "secant"

    ALL = (FIXED, DIMINISHING, SECANT)


class Experiments:
    EXAMPLE1 = "example1"
    EXAMPLE2 = "example2"
    EXAMPLE3 = "example3"
    DUAL_AUDIT = "dual_audit"
    ORACLE_CHECK = "oracle_check"

    ALL = (EXAMPLE1, EXAMPLE2, EXAMPLE3, DUAL_AUDIT, ORACLE_CHECK)


class CheckSuites:
    ORACLE = "oracle"
    LEMMAS = "lemmas"
    SEM = "sem"
    ESEM = "esem"

    ALL = (ORACLE, LEMMAS, SEM, ESEM)


class ExitReasons:
    NO_PROFITABLE_PAIR = "no_profitable_pair"
    ROWS_EXHAUSTED = "rows_exhausted"
    COLUMNS_EXHAUSTED = "columns_exhausted"
    TARGET_REACHED = "target_reached"
    MAX_ITER = "max_iter"


class AlphaSchedules:
    CONSTANT_GUARDED = "constant_guarded"


class DeltaUpdates:
    CONSTANT_CLAMPED = "constant_clamped"


# Thermal noise and link budget constants (dBm / dB / Hz).
THERMAL_NOISE_DBM_HZ = -174.0
DEFAULT_NOISE_FIGURE_DB = 6.0
DEFAULT_RB_BANDWIDTH_HZ = 15000.0
CI_INTERCEPT_DB = 32.4

ENV_OUTPUT_DIR = "MECHNUM_OUTPUT_DIR"
ENV_LOG_LEVEL = "MECHNUM_LOG_LEVEL"
ENV_WORKERS = "MECHNUM_WORKERS"


__all__ = [
    "ObjectiveKinds",
    "StepRules",
    "Experiments",
    "CheckSuites",
    "ExitReasons",
    "AlphaSchedules",
    "DeltaUpdates",
    "THERMAL_NOISE_DBM_HZ",
    "DEFAULT_NOISE_FIGURE_DB",
    "DEFAULT_RB_BANDWIDTH_HZ",
    "CI_INTERCEPT_DB",
    "ENV_OUTPUT_DIR",
    "ENV_LOG_LEVEL",
    "ENV_WORKERS",
]
