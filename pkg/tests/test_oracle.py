import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyrobust.oracle import (FiniteMarket, SimplexGrid, affine_penalty, biduality_gap, bridge_point,
                               capped_quadratic_penalty, convex_envelope, dual_value, entropy_penalty,
                               exact_dual_and_minimax, exact_primal, exact_risk_measure, quadratic_penalty,
                               risk_measure, simplex_points, strategy_grid, two_state_market)
from levyrobust.utility import make_log_utility, make_power_utility

LOG = make_log_utility()
TWO = two_state_market()
P_HALF = np.array([0.5, 0.5])


def test_simplex_points_count():
    pts = simplex_points(3, 10)
    assert pts.shape == (math.comb(12, 2), 3)
    np.testing.assert_allclose(pts.sum(axis=1), 1.0)
    assert np.all(pts >= 0)


def test_two_state_elmm_vertex():
    ext = TWO.elmm_extreme_points()
    assert ext.shape == (1, 2)
    assert ext[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert np.dot(ext[0], TWO.returns) == pytest.approx(0.0, abs=1e-15)


def test_three_state_elmm_grid_is_martingale():
    mk = FiniteMarket(np.full(3, 1 / 3), 1.0, np.array([1.3, 1.0, 0.8]), entropy_penalty(np.full(3, 1 / 3)))
    grid = mk.elmm_grid(10)
    assert len(grid) > 2
    np.testing.assert_allclose(grid @ mk.returns, 0.0, atol=1e-14)
    np.testing.assert_allclose(grid.sum(axis=1), 1.0)


def test_arbitrage_market_rejected():
    mk = FiniteMarket(P_HALF, 1.0, np.array([1.2, 1.1]), quadratic_penalty(5.0, P_HALF))
    with pytest.raises(ValueError, match="arbitrage"):
        mk.elmm_extreme_points()


@pytest.mark.parametrize("kw", [dict(p_ref=np.array([0.6, 0.6])), dict(s_T=np.array([1.0, -1.0])),
                                dict(p_ref=np.full(7, 1 / 7), s_T=np.ones(7))])
def test_market_validation(kw):
    args = dict(p_ref=P_HALF, s0=1.0, s_T=np.array([1.2, 0.9]), penalty_table=quadratic_penalty(5.0, P_HALF))
    args.update(kw)
    with pytest.raises(ValueError):
        FiniteMarket(**args)


def test_validation_report():
    rep = TWO.validation()
    assert rep["normalized"] and rep["convex"]
    bad = two_state_market(capped_quadratic_penalty(P_HALF))
    assert not bad.validation()["convex"]


def test_strategy_grid_stays_admissible():
    s = strategy_grid(TWO, 101)
    lo, hi = TWO.admissible_interval()
    assert (lo, hi) == pytest.approx((-5.0, 10.0))
    assert np.all((s > lo) & (s < hi))
    assert np.all(1.0 + np.outer(s, TWO.returns) > 0)


@pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
def test_log_strong_duality_and_saddle(x):
    r = exact_dual_and_minimax(TWO, LOG, x)
    tol = 2 * r["grid_resolution"]
    assert r["minimax_gap"] <= tol
    assert r["conjugacy_gap"] <= tol
    assert r["saddle_gap"] <= r["grid_resolution"] * x
    assert not r["boundary_y"]
    assert r["y_star"] == pytest.approx(1.0 / x, rel=2e-3)


def test_log_fixture_values():
    r = exact_dual_and_minimax(TWO, LOG, 1.0)
    assert r["u"] == pytest.approx(0.041743, abs=1e-5)
    np.testing.assert_allclose(r["q_star"], [0.45, 0.55], atol=1e-12)
    assert r["pi_star"] == pytest.approx(1.75, abs=2e-3)


@pytest.mark.parametrize("q", [0.5, -1.0])
def test_power_saddle(q):
    r = exact_dual_and_minimax(TWO, make_power_utility(q), 1.0)
    assert r["conjugacy_gap"] <= 2 * r["grid_resolution"]
    assert r["saddle_gap"] <= r["grid_resolution"]


def test_huge_penalty_gives_complete_market_log_value():
    mk = two_state_market(quadratic_penalty(1e8, P_HALF))
    pis = np.linspace(-5, 10, 100_002)[1:-1]
    brute = np.max(0.5 * np.log1p(0.2 * pis) + 0.5 * np.log1p(-0.1 * pis))
    assert brute == pytest.approx(0.5 * math.log(1.125), abs=1e-9)
    r = exact_dual_and_minimax(mk, LOG, 1.0)
    assert r["u"] == pytest.approx(brute, abs=1e-6)
    np.testing.assert_allclose(r["q_star"], P_HALF)
    assert r["conjugacy_gap"] <= 1e-3


def test_zero_penalty_is_worthless():
    mk = two_state_market(lambda q: 0.0)
    r = exact_primal(mk, LOG, 1.0)
    assert r["u"] == pytest.approx(0.0, abs=1e-12)
    assert abs(r["pi_star"]) <= 2e-3


def test_dual_zero_mass_convention():
    sim = SimplexGrid(2, 10)
    d = dual_value(TWO, LOG, np.array([0.5, 1.0, 2.0]), sim)
    assert np.all(np.isfinite(d["v"]))
    assert np.all(np.diff(d["v"]) < 0)


def test_weak_duality_on_grid():
    ys = np.geomspace(0.1, 10, 41)
    d = dual_value(TWO, LOG, ys, SimplexGrid(2, 20))
    u = exact_primal(TWO, LOG, 1.0, simplex=20)["u"]
    assert np.all(u <= d["v"] + ys + 1e-12)


def test_refinement_directions():
    # finer strategy grids raise the primal; finer q grids lower the dual
    coarse_s = exact_primal(TWO, LOG, 1.0, strategy_grid(TWO, 11), simplex=40)["u"]
    fine_s = exact_primal(TWO, LOG, 1.0, strategy_grid(TWO, 21), simplex=40)["u"]
    assert fine_s >= coarse_s
    ys = np.geomspace(0.5, 2, 5)
    v10 = dual_value(TWO, LOG, ys, SimplexGrid(2, 10))["v"]
    v20 = dual_value(TWO, LOG, ys, SimplexGrid(2, 20))["v"]
    assert np.all(v20 <= v10 + 1e-15)


# ---------------------------------------------------------------------------
# risk measures

SIM = SimplexGrid(2, 40)
PEN = TWO.penalty(SIM.points)
payoff = st.tuples(st.floats(-5, 5), st.floats(-5, 5))


@settings(max_examples=100)
@given(payoff, st.floats(-3, 3))
def test_cash_invariance(X, c):
    X = np.array(X)
    a, b = risk_measure(np.vstack([X, X + c]), SIM.points, PEN)
    assert b == pytest.approx(a - c, abs=1e-9)


def test_constant_payoff():
    for c in (-2.0, 0.0, 1.5):
        assert risk_measure(np.array([c, c]), SIM.points, PEN)[0] == pytest.approx(-c, abs=1e-12)


@settings(max_examples=100)
@given(payoff, st.tuples(st.floats(0, 3), st.floats(0, 3)))
def test_monotone(X, d):
    X = np.array(X)
    a, b = risk_measure(np.vstack([X, X + np.array(d)]), SIM.points, PEN)
    assert b <= a + 1e-12


@settings(max_examples=100)
@given(payoff, payoff, st.floats(0, 1))
def test_convex(X, Y, lam):
    X, Y = np.array(X), np.array(Y)
    a, b, c = risk_measure(np.vstack([X, Y, lam * X + (1 - lam) * Y]), SIM.points, PEN)
    assert c <= lam * a + (1 - lam) * b + 1e-9


def test_entropic_measure():
    mk = two_state_market(entropy_penalty(P_HALF))
    X = np.random.default_rng(0).uniform(-3, 3, (50, 2))
    rep = exact_risk_measure(mk, X, 40)
    expect = np.log(np.mean(np.exp(-X), axis=1))
    assert np.max(np.abs(rep["rho"] - expect)) <= 1 / 40
    assert rep["psi_le_penalty"]


def test_biduality_quadratic():
    rep = biduality_gap(TWO)
    assert rep["strictly_decreasing"]
    np.testing.assert_allclose(rep["gaps"], [0.05, 0.0125, 0.003125], rtol=1e-9)
    assert not rep["non_convex"]


def test_biduality_entropic():
    mk = two_state_market(entropy_penalty(P_HALF))
    rep = biduality_gap(mk)
    assert rep["strictly_decreasing"]
    assert rep["gaps"][-1] < 0.01


def test_biduality_affine_exact():
    rep = biduality_gap(TWO, penalty_table=affine_penalty([0.0, 2.0]))
    assert max(rep["gaps"]) <= 1e-12


def test_biduality_nonconvex_flagged():
    rep = biduality_gap(TWO, penalty_table=capped_quadratic_penalty(P_HALF))
    assert rep["non_convex"]
    assert not rep["strictly_decreasing"]
    assert rep["convexification_distance"] == pytest.approx(rep["gaps"][-1], abs=0.1)


def test_convex_envelope_of_convex_table_is_itself():
    pts = simplex_points(2, 20)
    vals = np.array([quadratic_penalty(5.0, P_HALF)(p) for p in pts])
    np.testing.assert_allclose(convex_envelope(pts, vals), vals, atol=1e-9)


def test_bridge_point():
    p = bridge_point(0.0, 1.0, 1.0)
    assert p[0] == pytest.approx(math.exp(-1.0))
    assert p.sum() == pytest.approx(1.0)
    assert bridge_point(1.0, 1.0, 1.0)[0] < p[0]
