"""
Acceptance runs for the dual-pricing solver and its incentive audits.
"""
from conftest import SEEDS


def test_solver_matches_grid_oracle(oracle_suite):
    """Sum valuation within 1e-3 of the grid optimum, KKT residual <= 1e-4."""
    props, frame = oracle_suite
    assert len(frame) == SEEDS
    assert frame.n_users.max() <= 4
    for name in ("oracle_equivalence", "kkt_residual", "convergence", "oversupply_zero_price", "symmetry"):
        assert props[name]["passed"], (name, props[name])


def test_every_interior_user_can_gain_by_shading(dual_pricing_suite):
    props, _ = dual_pricing_suite
    assert props["shading_is_profitable"]["checked"] > 0
    assert props["shading_is_profitable"]["passed"]
    assert props["truthful_never_best"]["passed"]


def test_profitable_deviations_take_less(dual_pricing_suite):
    props, frame = dual_pricing_suite
    assert props["profitable_points_take_less"]["passed"]
    better = frame[frame.gain > 1e-9]
    assert len(better) > 0
    assert (better.x_under < better.x_baseline).all()


def test_raising_the_price_never_pays(dual_pricing_suite):
    props, _ = dual_pricing_suite
    assert props["price_increase_never_pays"]["violations"] == 0


def test_scaled_reports_lower_the_price(dual_pricing_suite):
    props, _ = dual_pricing_suite
    assert props["scaled_report_lowers_price"]["checked"] > 0
    assert props["scaled_report_lowers_price"]["passed"]
