import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyrobust.levy import TimeGrid, build_levy_model, simulate_paths
from levyrobust.market import MarketSpec, price_paths
from levyrobust.measure import (ControlPair, complete_to_elmm, density_paths, elmm_residual, expectation,
                                relative_entropy, tilt_sample)
from levyrobust.penalty import evaluate_penalty, make_log_penalty
from levyrobust.steps import StepFunction

G = TimeGrid(1.0, 64)
BS = build_levy_model(0.0, 0.0, [])
JUMPS = build_levy_model(0.0, 2.0, [(1.0, 0.5), (-1.0, 0.5)])
JD_MARKET = MarketSpec(0.05, 0.2, 0.1, 0.1)


@pytest.fixture(scope="module")
def jump_paths():
    return simulate_paths(JUMPS, G, 20_000, seed=21)


def _ctrl(t0, t1a, t1b, knot=0.5):
    return ControlPair(StepFunction((knot,), t0), StepFunction((knot,), np.array([t1a, t1b]).T))


def test_zero_control_density_is_one(jump_paths):
    d = density_paths(ControlPair.zero(), jump_paths)
    assert np.all(d.d_values == 1.0)


def test_density_forms_agree(jump_paths):
    c = _ctrl([0.4, -1.2], [0.5, -0.5], [2.0, 0.3])
    a = density_paths(c, jump_paths, form="compensated").log_d_values
    b = density_paths(c, jump_paths, form="explicit").log_d_values
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert np.all(a[:, 0] == 0.0)


def test_gaussian_density_normalized():
    p = simulate_paths(BS, G, 100_000, seed=22)
    est = expectation(density_paths(ControlPair(-0.5, 0.0), p).terminal_d)
    assert abs(est.value - 1.0) <= 3 * est.se


def test_killing_jump_flags_zero_density():
    model = build_levy_model(0.0, 1.0, [(1.0, 1.0)])
    p = simulate_paths(model, G, 2000, seed=23)
    d = density_paths(ControlPair(0.0, -1.0, equivalent=False), p)
    jumped = np.bincount(p.jump_path, minlength=p.n_paths) > 0
    np.testing.assert_array_equal(d.hit_zero, jumped)
    assert np.all(d.terminal_d[jumped] == 0.0)
    assert np.all(d.terminal_d[~jumped] > 0.0)


def test_control_validation():
    with pytest.raises(ValueError):
        ControlPair(0.0, -1.5, equivalent=False)
    with pytest.raises(ValueError):
        ControlPair(0.0, -1.0)
    assert ControlPair(0.0, -1.0 + 1e-6).theta1_floor == -1.0 + 1e-6


def test_residual_black_scholes():
    r = elmm_residual(MarketSpec(0.1, 0.2, 0.0, 0.1), ControlPair(-0.5, 0.0), G, BS)
    assert r.sup_abs == 0.0


def test_residual_single_atom_arithmetic():
    model = build_levy_model(0.0, 2.0, [(1.0, 1.0)])
    spec = MarketSpec(0.1, 0.2, 0.5, 0.1)
    r = elmm_residual(spec, ControlPair(-0.25, -0.05), G, model)
    assert r.sup_abs <= 1e-15
    xi = complete_to_elmm(spec, StepFunction.constant(-0.05), model)
    assert xi.theta0.values[0] == pytest.approx(-0.25, abs=1e-15)


def test_reference_measure_not_elmm():
    r = elmm_residual(MarketSpec(0.1, 0.2, 0.0, 0.1), ControlPair.zero(), G, JUMPS)
    assert r.sup_abs == pytest.approx(0.1, abs=1e-15)


def test_completion_of_zero_jump_control():
    spec = MarketSpec(0.1, 0.2, 0.1, 0.1)
    xi = complete_to_elmm(spec, StepFunction.constant(0.0), JUMPS)
    assert xi.theta0.values[0] == pytest.approx(-0.5, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.99, 3.0), min_size=4, max_size=4),
       st.floats(-0.5, 0.5), st.floats(0.05, 1.0), st.floats(-1.0, 1.0), st.floats(0.1, 0.9))
def test_completion_gives_exact_zero_residual(t1, alpha, beta, gamma, knot):
    spec = MarketSpec(StepFunction((knot,), [alpha, -alpha / 2]), beta, StepFunction.from_config([gamma, -gamma]),
                      0.05)
    th1 = StepFunction((0.5,), np.array(t1).reshape(2, 2))
    ctrl = complete_to_elmm(spec, th1, JUMPS)
    assert elmm_residual(spec, ctrl, G, JUMPS).sup_abs == 0.0


def test_entropy_zero_control(jump_paths):
    assert relative_entropy(ControlPair.zero(), jump_paths).value == 0.0


def test_gaussian_entropy_both_forms():
    c = ControlPair(0.5, 0.0)
    p = simulate_paths(BS, G, 100_000, seed=24)
    e_p = relative_entropy(c, p)
    assert abs(e_p.value - 0.125) <= 3 * e_p.se
    q = tilt_sample(c, BS, G, 100_000, seed=25)
    e_q = relative_entropy(c, q)
    assert abs(e_q.value - 0.125) <= 3 * e_q.se


def test_entropy_below_log_threshold():
    c = _ctrl([0.3, -0.6], [0.8, -0.4], [0.2, 1.5])
    q = tilt_sample(c, JUMPS, G, 20_000, seed=26)
    h = relative_entropy(c, q)
    bound = evaluate_penalty(make_log_penalty(1.0), c, JUMPS, 1.0).value
    assert h.value <= bound + 3 * h.se
    assert h.value >= -3 * h.se


def test_tilt_intensity():
    model = build_levy_model(0.0, 1.0, [(1.0, 1.0)])
    q = tilt_sample(ControlPair(0.0, 1.0), model, G, 100_000, seed=27)
    rate = q.jump_counts().mean()
    assert abs(rate - 2.0) <= 3 * np.sqrt(2.0 / q.n_paths)


def test_zero_tilt_equals_reference_sampler():
    a = tilt_sample(ControlPair.zero(), JUMPS, G, 3000, seed=28)
    b = simulate_paths(JUMPS, G, 3000, seed=28)
    np.testing.assert_array_equal(a.levy_values, b.levy_values)


def test_tilt_and_weights_agree(jump_paths):
    c = _ctrl([0.2, -0.3], [0.5, -0.3], [0.1, 0.8])
    w = density_paths(c, jump_paths).terminal_d
    s_p = price_paths(JD_MARKET, jump_paths).s_values[:, -1]
    a = expectation(s_p, w)
    q = tilt_sample(c, JUMPS, G, 20_000, seed=29)
    b = expectation(price_paths(JD_MARKET, q).s_values[:, -1])
    assert abs(a.value - b.value) <= 3 * np.hypot(a.se, b.se)


def test_elmm_martingale_under_tilt():
    ctrl = complete_to_elmm(JD_MARKET, StepFunction.constant(0.4), JUMPS)
    q = tilt_sample(ctrl, JUMPS, G, 50_000, seed=30)
    est = expectation(price_paths(JD_MARKET, q).s_values[:, -1])
    assert abs(est.value - 1.0) <= 3 * est.se


@settings(max_examples=10, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-0.9, 3.0), st.floats(-0.9, 3.0))
def test_density_normalization_property(t0, a, b):
    p = simulate_paths(JUMPS, TimeGrid(1.0, 16), 20_000, seed=31)
    est = expectation(density_paths(ControlPair(t0, StepFunction.from_config([a, b])), p).terminal_d)
    assert abs(est.value - 1.0) <= 4 * est.se
