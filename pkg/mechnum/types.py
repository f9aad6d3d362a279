from __future__ import annotations

from typing import Any, Dict, List, TypedDict

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]


class PropertyVerdict(TypedDict):
    passed: bool
    violations: int
    checked: int
    informational: bool
    detail: str


class Summary(TypedDict, total=False):
    experiment: str
    config_hash: str
    seed: int
    properties: Dict[str, PropertyVerdict]
    metrics: Dict[str, Any]
    outputs: List[str]


class RunRow(TypedDict):
    run: int
    seed: int
    rounds: int
    final_nu: float
    final_dist: float
    truncated: bool
    exit_reason: str
    ir_violations: int
    conservation_err: float
    alpha_theta_increases: int
    replay_ok: bool
    quote_flags: int


def verdict(violations: int, checked: int, detail: str = "", *, informational: bool = False) -> PropertyVerdict:
    return PropertyVerdict(
        passed=violations == 0,
        violations=int(violations),
        checked=int(checked),
        informational=informational,
        detail=detail,
    )
