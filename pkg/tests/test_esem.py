import io
import math

import numpy as np
import pytest

from mechnum.consts import ExitReasons
from mechnum.dual_solver import solve
from mechnum.errors import DomainError, InconsistencyError, MechanismConfigError, PreconditionError
from mechnum.esem import (
    EsemConfig,
    LedgerRecord,
    QuotePolice,
    ScaledQuote,
    SkipRounds,
    TransferLedger,
    _surplus,
    buyer_quotes,
    esem_alpha_guard,
    esem_round,
    esem_round_matrices,
    esem_run,
    exchange_sets,
    pair_alphas,
    replay_ledger,
    seller_quotes,
)
from mechnum.instances import exp_identity_users, two_user_exchange
from mechnum.mechanisms import CenterValuation, sem_run
from mechnum.ndjson import iter_ndjson_objects, write_ndjson


def multiuser(seed=0, n=6, a=1.0, sigma=0.5):
    rng = np.random.default_rng(seed)
    users = exp_identity_users(rng.uniform(0.1, 0.3, n), 50.0)
    x_star = solve(users, 40.0, 50.0).x
    d = rng.standard_normal(n)
    d -= d.mean()
    x_dagger = x_star + 0.5 * d / np.linalg.norm(d)
    return users, x_star, x_dagger, CenterValuation(a, sigma, x_dagger, 1)


def test_round_matrices_example():
    nu = CenterValuation(2.0, 1.0, [1.0, 1.0], 2)
    rm = esem_round_matrices([2.0, 0.0], [1.0, 1.0], [0.5], [0.3], nu, 0.5, 1.0)
    assert rm.S1.tolist() == [0] and rm.S2.tolist() == [1]
    assert rm.theta[0, 0] == pytest.approx(2 - 2 * math.exp(-2), abs=1e-12)
    assert rm.theta[0, 0] == pytest.approx(1.7293, abs=1e-4)
    assert rm.psi[0, 0] == pytest.approx(0.6647, abs=1e-4)
    assert rm.W.tolist() == [[1]]
    assert rm.R_i_plus.tolist() == [0]


def test_surplus_indicator_and_rows():
    psi = np.array([[0.5, -0.1], [-0.2, -0.3]])
    out, W, R = _surplus(psi, np.zeros(2), np.zeros(2), 1.0)
    assert np.array_equal(out, psi)
    assert W.tolist() == [[1, 0], [0, 0]]
    assert R.tolist() == [0]


def test_round_matrices_need_both_sides():
    nu = CenterValuation(1.0, 1.0, [1.0, 1.0])
    with pytest.raises(PreconditionError):
        esem_round_matrices([1.0, 1.0], [1.0, 1.0], [], [], nu, 0.5, 0.1)


def test_exchange_sets_disjoint():
    S1, S2 = exchange_sets(np.array([3.0, 1.0, 2.0, 0.0]), np.array([2.0, 2.0, 2.0, 1.0]))
    assert S1.tolist() == [0]
    assert S2.tolist() == [1, 3]


def test_alpha_guard():
    assert esem_alpha_guard(0.5, 1.0, []) == 0.5
    assert esem_alpha_guard(0.5, 1.0, [0.6, 0.4]) == pytest.approx(0.4)
    assert esem_alpha_guard(0.5, 0.5, [0.4]) == 0.5
    with pytest.raises(InconsistencyError):
        esem_alpha_guard(0.5, 0.0, [0.4])


def test_pair_alphas_apply_the_guard_per_pair():
    theta = np.array([[2.0, 0.5], [0.0, -1.0]])
    assert pair_alphas(0.5, theta, []).tolist() == [[0.5, 0.5], [0.0, 0.0]]
    alphas = pair_alphas(0.5, theta, [0.8, 0.4])
    assert alphas[0, 0] == esem_alpha_guard(0.5, 2.0, [0.8, 0.4]) == pytest.approx(0.2)
    assert alphas[0, 1] == esem_alpha_guard(0.5, 0.5, [0.8, 0.4]) == 0.5
    assert alphas[1].tolist() == [0.0, 0.0]


def test_pairs_that_lower_nu_never_trade():
    theta = np.array([[0.2, -0.1]])
    psi, W, R = _surplus(theta, np.zeros(1), np.array([0.0, 1.0]), 0.5)
    assert psi.tolist() == pytest.approx([[0.1, 0.95]])
    assert W.tolist() == [[1, 0]]
    assert R.tolist() == [0]


def test_config_validation():
    with pytest.raises(MechanismConfigError):
        EsemConfig(delta0=0.0)
    with pytest.raises(MechanismConfigError):
        EsemConfig(alpha0=0.6)
    with pytest.raises(MechanismConfigError):
        EsemConfig(alpha_schedule="decaying")
    with pytest.raises(DomainError):
        SkipRounds(1)
    with pytest.raises(DomainError):
        ScaledQuote(0.0)


def test_quote_strategies():
    u = exp_identity_users([1.0], 10.0)[0]
    steps = np.array([0.5])
    true_ask = seller_quotes(u, 2.0, steps, None, 0)
    assert true_ask[0] == pytest.approx(math.exp(-1.5) - math.exp(-2.0))
    assert seller_quotes(u, 2.0, steps, ScaledQuote(1.5), 0)[0] == pytest.approx(1.5 * true_ask[0])
    true_bid = buyer_quotes(u, 0.5, steps, None, 0)
    assert buyer_quotes(u, 0.5, steps, ScaledQuote(2.0), 0)[0] == pytest.approx(true_bid[0] / 2.0)
    skip = SkipRounds(2, phase=0)
    assert seller_quotes(u, 2.0, steps, skip, 1)[0] == math.inf
    assert buyer_quotes(u, 0.5, steps, skip, 1)[0] == -math.inf
    assert seller_quotes(u, 2.0, steps, skip, 2)[0] == true_ask[0]


def test_immediate_exit_at_target():
    users = exp_identity_users([0.2, 0.3], 10.0)
    x = [1.0, 2.0]
    nu = CenterValuation(1.0, 1.0, x)
    result = esem_run(users, x, x, nu)
    assert result.exit_reason == ExitReasons.TARGET_REACHED
    assert not result.truncated
    assert result.x_final.tolist() == x
    assert result.ledger.records == []
    assert result.rounds == []


def test_single_round_matches_sem():
    users = exp_identity_users([1.0, 1.0], 10.0)
    x_star, x_dagger = np.array([2.0, 0.5]), np.array([1.5, 1.0])
    nu = CenterValuation(1.0, 1.0, x_dagger, 2)
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.5))

    assert len(result.ledger.records) == 1
    assert result.exit_reason == ExitReasons.TARGET_REACHED
    assert result.x_final == pytest.approx(x_dagger)
    rec = result.ledger.records[0]
    theta = nu(x_dagger) - nu(x_star)
    rho = math.exp(-1.5) - math.exp(-2.0)
    phi = math.exp(-0.5) - math.exp(-1.0)
    sem = sem_run(rho, phi, theta, 0.5)
    assert rec.theta == pytest.approx(theta)
    assert rec.charge == pytest.approx(sem.charge_user2)
    assert rec.payment == pytest.approx(sem.pay_user1)
    gains = result.final_utilities - result.utility_trace[0]
    assert gains == pytest.approx([sem.pi_1, sem.pi_2])
    assert rec.subsidy == pytest.approx(2 * 0.5 * theta + phi - rho)


def test_multiuser_run_properties():
    users, x_star, x_dagger, nu = multiuser()
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.05, seed=3))
    assert not result.truncated
    assert len(result.ledger.records) > 1

    steps = np.diff(result.utility_trace, axis=0)
    assert np.all(steps >= -1e-12)
    for rnd in result.rounds:
        assert abs(rnd.x_l.sum() - x_star.sum()) <= 1e-12
        assert set(rnd.S1.tolist()).isdisjoint(rnd.S2.tolist())
        assert np.array_equal(rnd.W, ((rnd.psi > 0) & (rnd.theta > 0)).astype(int))
    assert abs(result.x_final.sum() - x_star.sum()) <= 1e-12

    products = result.alpha_theta
    assert all(q <= p * (1 + 1e-12) for p, q in zip(products, products[1:]))
    assert result.ledger.nu_gain == pytest.approx(nu(result.x_final) - nu(x_star), abs=1e-12)
    assert result.nu_trace[-1] >= result.nu_trace[0]
    assert result.dist_trace[-1] < result.dist_trace[0]


def test_executed_alpha_is_guarded_on_the_traded_pair():
    users, x_star, x_dagger, nu = multiuser(seed=3, n=8)
    cfg = EsemConfig(delta0=0.05, seed=3)
    result = esem_run(users, x_star, x_dagger, nu, cfg)
    assert len(result.ledger.records) > 2
    for k, rec in enumerate(result.ledger.records):
        assert rec.alpha == esem_alpha_guard(cfg.alpha0, rec.theta, result.alpha_theta[:k])
        assert result.alpha_theta[k] == rec.alpha * rec.theta
    products = result.alpha_theta
    for k in range(1, len(products)):
        theta = result.ledger.records[k].theta
        assert products[k] == pytest.approx(min(cfg.alpha0 * theta, min(products[:k])), rel=1e-12)


def test_round_replays_from_a_given_state():
    users, x_star, x_dagger, nu = multiuser(seed=9)
    cfg = EsemConfig(delta0=0.05, seed=4)
    result = esem_run(users, x_star, x_dagger, nu, cfg)
    rnd, reason = esem_round(users, np.array(x_star), np.asarray(x_dagger), nu, [], np.random.default_rng(4), 0, cfg)
    assert reason is None
    assert rnd.record() == result.ledger.records[0]
    assert nu(rnd.x_next()) == result.nu_trace[1]
    seller = rnd.selected_pair[0]
    skipped, _ = esem_round(
        users, np.array(x_star), np.asarray(x_dagger), nu, [], np.random.default_rng(4), 0, cfg, {seller: SkipRounds(2, phase=1)}
    )
    assert skipped.selected_pair is None or seller not in skipped.selected_pair


def test_subsidy_per_exchange():
    users, x_star, x_dagger, nu = multiuser(seed=1)
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.05, seed=1))
    for rec in result.ledger.records:
        assert rec.subsidy == pytest.approx(2 * rec.alpha * rec.theta + rec.phi - rec.rho, abs=1e-14)
    total = math.fsum(rec.subsidy for rec in result.ledger.records)
    assert result.ledger.center_subsidy == pytest.approx(total, abs=1e-12)
    assert result.ledger.center_net_gain == pytest.approx(result.ledger.nu_gain - total, abs=1e-12)


def test_runs_are_seeded():
    users, x_star, x_dagger, nu = multiuser(seed=2)
    a = esem_run(users, x_star, x_dagger, nu, {"delta0": 0.05, "seed": 9})
    b = esem_run(users, x_star, x_dagger, nu, {"delta0": 0.05, "seed": 9})
    assert a.ledger.to_records() == b.ledger.to_records()
    assert np.array_equal(a.x_final, b.x_final)


def test_truncation_is_a_flag():
    users, x_star, x_dagger, nu = multiuser(seed=4)
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.01, max_iter=2))
    assert result.truncated
    assert result.exit_reason == ExitReasons.MAX_ITER
    assert len(result.ledger.records) <= 2


def test_ledger_replay_through_ndjson():
    users, x_star, x_dagger, nu = multiuser(seed=5)
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.05, seed=5))
    buf = io.StringIO()
    write_ndjson(result.ledger.to_records(), buf)
    replayed = replay_ledger(iter_ndjson_objects([buf.getvalue()]), len(users))
    assert np.array_equal(replayed.user_transfers, result.ledger.user_transfers)
    assert replayed.center_subsidy == result.ledger.center_subsidy


def test_ledger_booking():
    ledger = TransferLedger(3)
    ledger.book(LedgerRecord(0, 0, 2, 0.1, 0.5, 0.4, 0.3, 0.2, 0.1, 0.4))
    assert ledger.user_transfers.tolist() == [0.4, 0.0, -0.1]
    assert ledger.center_subsidy == pytest.approx(0.3)
    assert ledger.nu_gain == pytest.approx(0.4)


def test_round_frame_columns():
    users, x_star, x_dagger, nu = multiuser(seed=6, n=3)
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.05))
    frame = result.round_frame()
    assert list(frame.columns)[:11] == [
        "l", "selected_i", "selected_j", "delta", "theta", "psi", "rho", "phi", "charge", "payment", "nu",
    ]
    assert list(frame.columns)[11:] == ["u_1", "u_2", "u_3"]
    assert len(frame) == len(result.ledger.records)


def test_round_frame_reads_psi_at_the_traded_pair():
    users, x_star, x_dagger, nu = multiuser(seed=8, n=7)
    result = esem_run(users, x_star, x_dagger, nu, EsemConfig(delta0=0.05, seed=8))
    frame = result.round_frame()
    assert len(frame) == len(result.exchanges) > 1
    assert any(rnd.selected_pair != rnd.selected for rnd in result.exchanges)
    for (_, row), rnd in zip(frame.iterrows(), result.exchanges):
        a, b = rnd.selected
        assert (row.selected_i, row.selected_j) == (rnd.S1[a], rnd.S2[b])
        assert row.psi == rnd.psi[a, b] > 0
        assert row.rho == rnd.rho[a, b] and row.phi == rnd.phi[a, b]


def test_quote_police_flags_inconsistent_asks():
    police = QuotePolice()
    police.observe(0, 0, 0.2, 1, 0.1, 0.1)
    police.observe(1, 0, 0.1, 1, 0.1, 0.1)
    assert [f["role"] for f in police.flags] == ["seller"]
    police.observe(2, 0, 0.3, 1, 0.3, 0.1)
    assert [f["role"] for f in police.flags] == ["seller", "buyer"]


def test_skipping_seller_stops_two_user_exchange():
    inst = two_user_exchange(np.random.default_rng(0))
    result = esem_run(
        inst.users, inst.x_star, inst.x_dagger, inst.nu, EsemConfig(delta0=1.0), strategies={0: SkipRounds(2, phase=1)}
    )
    assert result.exit_reason == ExitReasons.NO_PROFITABLE_PAIR
    assert result.ledger.records == []
    assert result.x_final == pytest.approx(inst.x_star)


@pytest.mark.parametrize("user", [0, 1])
@pytest.mark.parametrize("strategy", [ScaledQuote(1.5), ScaledQuote(0.5), SkipRounds(2, phase=1)])
def test_two_user_single_exchange_misreports_do_not_pay(user, strategy):
    for seed in range(5):
        inst = two_user_exchange(np.random.default_rng(seed))
        cfg = EsemConfig(delta0=2 * float(inst.x_star[0] - inst.x_dagger[0]))
        honest = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, cfg)
        lying = esem_run(inst.users, inst.x_star, inst.x_dagger, inst.nu, cfg, strategies={user: strategy})
        honest_gain = honest.final_utilities[user] - honest.utility_trace[0][user]
        lying_gain = lying.final_utilities[user] - lying.utility_trace[0][user]
        assert lying_gain <= honest_gain + 1e-9


def test_run_input_validation():
    users = exp_identity_users([0.2, 0.3], 10.0)
    nu = CenterValuation(1.0, 1.0, [1.0, 1.0])
    with pytest.raises(DomainError):
        esem_run(users, [1.0, 1.0, 1.0], [1.0, 1.0], nu)
    with pytest.raises(DomainError):
        esem_run(users, [-1.0, 1.0], [1.0, 1.0], nu)
