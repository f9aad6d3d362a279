import math

import numpy as np
import pytest

from mechnum.dual_solver import solve
from mechnum.errors import DomainError, PreconditionError
from mechnum.instances import allocated_instance, exp_identity_users
from mechnum.strategies import (
    MisreportedEps,
    ScaledValuation,
    Truthful,
    alpha_grid,
    best_misreport_sweep,
    deviate_one,
    normalize_curve,
    reported_utility,
    true_utility,
)
from mechnum.valuation import ComposedUtility, Exponential, Identity


def instance(seed=0, n_users=3):
    inst = allocated_instance(np.random.default_rng(seed), n_users)
    return inst.users, inst.X_max, inst.x_max


def test_strategy_validation():
    with pytest.raises(DomainError):
        ScaledValuation(1.0)
    with pytest.raises(DomainError):
        ScaledValuation(0.0)
    with pytest.raises(DomainError):
        MisreportedEps(0.0)


def test_reported_utility_forms():
    u = ComposedUtility.compose(Exponential(1.0), Identity(), 10.0)
    assert reported_utility(u, Truthful()) is u
    assert reported_utility(u, ScaledValuation(0.5))(math.log(2)) == pytest.approx(0.25)
    swapped = reported_utility(ComposedUtility.compose(Exponential(0.3), Identity(), 10.0), MisreportedEps(0.1))
    assert swapped.valuation == Exponential(0.1)


def test_true_utility_uses_price():
    u = ComposedUtility.compose(Exponential(1.0), Identity(), 10.0)
    assert true_utility(u, math.log(2), 0.1) == pytest.approx(0.5 - 0.1 * math.log(2))


def test_truthful_deviation_equals_baseline():
    users, X, x_max = instance()
    out = deviate_one(users, 1, Truthful(), X, x_max)
    assert out.x_under == out.x_baseline
    assert out.lambda_under == out.lambda_baseline
    assert out.u_true == out.u_truthful_baseline
    assert out.gain == 0.0


def test_scaled_report_lowers_price():
    users, X, x_max = instance(seed=4)
    for alpha in (0.3, 0.5, 0.7, 0.9):
        out = deviate_one(users, 0, ScaledValuation(alpha), X, x_max)
        assert out.x_baseline > 0
        assert out.lambda_under < out.lambda_baseline
        assert out.x_under < out.x_baseline


def test_deviation_reuses_given_baseline():
    users, X, x_max = instance(seed=2)
    baseline = solve(users, X, x_max)
    out = deviate_one(users, 2, ScaledValuation(0.5), X, x_max, baseline=baseline)
    assert out.lambda_baseline == baseline.lambda_star
    with pytest.raises(IndexError):
        deviate_one(users, 5, Truthful(), X, x_max)


def test_oversupply_leaves_nothing_to_gain():
    users = exp_identity_users([0.2, 0.5, 0.8], 5.0)
    for s in (ScaledValuation(0.4), MisreportedEps(0.05), MisreportedEps(2.0)):
        out = deviate_one(users, 1, s, 100.0, 5.0)
        assert out.lambda_under == 0.0
        assert out.u_true <= out.u_truthful_baseline + 1e-12


def test_singleton_true_eps_grid_is_truthful():
    users, X, x_max = instance(seed=1)
    eps = users[0].valuation.eps
    sweep = best_misreport_sweep(users, 0, [eps], X, x_max, param="eps")
    assert isinstance(sweep.best, Truthful)


def test_dense_alpha_sweep_beats_truthful():
    users, X, x_max = instance(seed=3)
    baseline = solve(users, X, x_max)
    for i in range(len(users)):
        sweep = best_misreport_sweep(users, i, alpha_grid(99), X, x_max, baseline=baseline)
        assert isinstance(sweep.best, ScaledValuation)
        assert sweep.utility_curve.max() > sweep.baseline.u_true + 1e-6
        better = sweep.utility_curve > sweep.baseline.u_true + 1e-9
        assert np.all(sweep.allocation_curve[better] < sweep.baseline.x_under)


def test_eps_sweep_profitable_points_take_less():
    users, X, x_max = instance(seed=6)
    grid = np.linspace(0.02, 1.0, 99)
    sweep = best_misreport_sweep(users, 1, grid, X, x_max, param="eps")
    better = sweep.utility_curve > sweep.baseline.u_true + 1e-9
    assert better.any()
    assert np.all(sweep.allocation_curve[better] < sweep.baseline.x_under)


def test_price_increase_never_pays():
    users, X, x_max = instance(seed=8)
    sweep = best_misreport_sweep(users, 0, np.linspace(0.02, 1.0, 99), X, x_max, param="eps")
    for o in sweep.outcomes:
        if o.lambda_under > o.lambda_baseline + 1e-6:
            assert o.u_true <= o.u_truthful_baseline + 1e-9


def test_sweep_frame_and_normalization():
    users, X, x_max = instance(seed=5)
    sweep = best_misreport_sweep(users, 0, alpha_grid(9), X, x_max, normalize=True)
    assert sweep.utility_curve.max() == pytest.approx(1.0)
    frame = sweep.to_frame()
    assert list(frame.columns) == [
        "strategy_param",
        "utility_raw",
        "utility_norm",
        "allocation_raw",
        "allocation_norm",
        "lambda",
        "flagged",
    ]
    assert frame.utility_norm.max() == pytest.approx(1.0)
    assert frame.utility_raw.tolist() == [o.u_true for o in sweep.outcomes]
    assert not frame.flagged.any()


def test_sweep_input_validation():
    users, X, x_max = instance()
    with pytest.raises(PreconditionError):
        best_misreport_sweep(users, 0, [], X, x_max)
    with pytest.raises(DomainError):
        best_misreport_sweep(users, 0, [0.5], X, x_max, param="weight")


def test_alpha_grid_open_interval():
    grid = alpha_grid(99)
    assert len(grid) == 99
    assert grid[0] == pytest.approx(0.01) and grid[-1] == pytest.approx(0.99)


def test_normalize_curve():
    assert normalize_curve([1.0, 2.0, 4.0]).tolist() == [0.25, 0.5, 1.0]
    assert normalize_curve([0.0, 0.0]).tolist() == [0.0, 0.0]
