import math

import numpy as np
import pytest

from phi4lab.coefficients import NoiseStream, constant_coefficients, make_coefficient_set
from phi4lab.coupling import (CoupledIntegrator, JPSurrogates, coupling_drift,
                              coupling_probability, fixed_direction_weights,
                              girsanov_log_weight, harnack_check, harnack_from_samples,
                              jp_forward, jp_inverse, monotonicity_gap, monotonicity_terms,
                              run_replicas, solve_coupled, wilson_interval)
from phi4lab.dynamics import SolverConfig
from phi4lab.errors import ConfigurationError, DomainError
from phi4lab.spectral import Field, TorusGrid, lp_norm

G = TorusGrid(1, 32)
CFG = SolverConfig(1e-3, 2.0)


def smooth(seed, scale=1.0):
    x = G.coordinates()[0]
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(3)
    return scale * (a[0] * np.cos(x) + a[1] * np.sin(2 * x) + a[2])


def test_drift_examples():
    d = np.cos(G.coordinates()[0])
    d = d / lp_norm(d, G, 2)
    zero = Field.constant(G, 0.0)
    one = Field.constant(G, 1.0)
    out = coupling_drift(Field(G, d), zero, 2.0, one, 1e-8)
    assert np.allclose(out.values, 2 * d)
    out3 = coupling_drift(Field(G, 3 * d), zero, 2.0, one, 1e-8)
    assert np.allclose(out3.values, out.values)
    w = Field.constant(G, math.exp(0.3))
    assert coupling_drift(Field(G, d), zero, 1.5, w, 1e-8).l2() == pytest.approx(1.5 * math.exp(0.3))
    assert np.all(coupling_drift(zero, zero, 2.0, one, 1e-8).values == 0)


def test_equal_start_couples_at_once():
    cs = make_coefficient_set(G, 2.0, 0.05, seed=1)
    phi = Field(G, smooth(0, 3.0))
    run = solve_coupled(phi, phi, 4.0, cs, NoiseStream(G, CFG.dt, 5), CFG)
    assert run.tau == 1.0 and run.success
    assert run.drift_steps == []
    assert run.ledger.log_weight == 0.0
    assert girsanov_log_weight(run).log_weight == 0.0


def test_linear_distance_matches_ode_oracle():
    cs = constant_coefficients(G, 2.0, A=0.0)
    base = smooth(1, 2.0)
    ell, c = 2.0, 1.5
    run = solve_coupled(Field(G, base + c), Field(G, base), ell, cs, NoiseStream(G, CFG.dt, 2), CFG)
    d1 = run.l2_at_1
    # constant offset: only the zero mode, ||d||' = -||d|| - ell exactly
    assert d1 == pytest.approx(c * math.exp(-1) * math.sqrt(G.length), rel=1e-9)
    tau_exact = 1 + math.log(1 + d1 / ell)
    assert abs(run.tau - tau_exact) <= 2 * CFG.dt
    assert run.tau <= 1 + d1 / ell + 2 * CFG.dt
    t = run.l2_times
    inside = (t >= 1) & (t < run.tau - CFG.dt)
    oracle = (d1 + ell) * np.exp(-(t[inside] - 1)) - ell
    assert np.abs(run.l2_trace[inside] - oracle).max() <= 2 * CFG.dt * (d1 + ell)


def test_contraction_slope_linear():
    cs = constant_coefficients(G, 2.0, A=0.0)
    for ell in (2.0, 4.0, 8.0):
        run = solve_coupled(Field(G, smooth(3, 3.0)), Field(G, smooth(4, 3.0)), ell, cs,
                            NoiseStream(G, CFG.dt, 6), CFG)
        t, l2 = run.l2_times, run.l2_trace
        idx = np.nonzero((t >= 1) & (t + CFG.dt < run.tau - 1e-9))[0]
        slopes = np.diff(l2)[idx] / CFG.dt
        assert slopes.max() <= -ell + 2 * CFG.dt * ell**2


def test_no_drift_no_coupling():
    cs = constant_coefficients(G, 2.0, A=0.0)
    run = solve_coupled(Field(G, smooth(5) + 1.0), Field(G, smooth(5)), 0.0, cs,
                        NoiseStream(G, CFG.dt, 3), CFG)
    assert not run.success and run.tau == 2.0
    assert run.l2_trace.min() > run.m_tol


def test_ledger_identity_and_freezing():
    cs = make_coefficient_set(G, 2.0, 0.05, seed=2)
    run = solve_coupled(Field(G, smooth(6, 2.0)), Field(G, smooth(7, 2.0)), 6.0, cs,
                        NoiseStream(G, CFG.dt, 8), CFG)
    led = run.ledger
    assert led.log_weight + led.stochastic_integral + led.energy == 0.0
    assert run.success
    after = run.v.times >= run.tau - 1e-12
    assert np.all(run.v.frames[after] == run.v_ell.frames[after])
    rebuilt = girsanov_log_weight(run)
    assert rebuilt.log_weight == pytest.approx(led.log_weight, rel=1e-10, abs=1e-12)
    assert led.energy == pytest.approx(0.5 * 36 * (run.tau - 1), rel=1e-9)


def test_fixed_direction_moments():
    e = np.cos(G.coordinates()[0])
    logw = fixed_direction_weights(G, e, 1.0, 1e-2, 4000, 7)
    R = np.exp(logw)
    se = R.std(ddof=1) / math.sqrt(R.size)
    assert abs(R.mean() - 1) <= 3 * se
    R2 = R * R
    assert abs(R2.mean() - math.e) <= 3 * R2.std(ddof=1) / math.sqrt(R.size)


def test_martingale_normalization_coupled_runs():
    g = TorusGrid(1, 16)
    cs = constant_coefficients(g, 2.0, A=0.0)
    x = g.coordinates()[0]
    res = run_replicas(np.cos(x) + 0.5, np.sin(x), 1.0, cs, SolverConfig(1e-2, 2.0), 10_000,
                       root_seed=12, batch=10_000)
    R = np.exp(res[0].log_weight)
    assert abs(R.mean() - 1) <= 3 * R.std(ddof=1) / math.sqrt(R.size)


def test_coupling_probability_zero_drift():
    cs = constant_coefficients(G, 2.0, A=0.0)
    est = coupling_probability(Field(G, smooth(1) + 1), Field(G, smooth(1)), 0.0, 100, 1, 3,
                               cs, CFG)
    assert est.frequency[0] == 0.0 and est.ci[0][1] < 0.05
    with pytest.raises(DomainError):
        coupling_probability(Field(G, smooth(1)), Field(G, smooth(2)), 1.0, 50, 1, 3, cs, CFG)


def test_coupling_probability_strong_drift():
    cs = make_coefficient_set(G, 2.0, 0.05, seed=4)
    p1, p2 = smooth(8, 2.0), smooth(9, 2.0)
    integ = CoupledIntegrator(cs, CFG)
    from phi4lab.coefficients import NoiseBank
    d1 = integ.run(np.broadcast_to(p1, (100, 32)), np.broadcast_to(p2, (100, 32)), 0.0,
                   NoiseBank(G, CFG.dt, 5, range(100)), stop_at=1.0 + CFG.dt).l2_at_start[0]
    est = coupling_probability(Field(G, p1), Field(G, p2), 2 * d1.max(), 100, 1, 5, cs, CFG)
    assert est.frequency[0] == 1.0 and est.ci[0][0] > 0.95


def test_window_product_form_linear():
    cs = constant_coefficients(G, 6.0, A=0.0)
    # the linear gap is deterministic, so failures are all-or-nothing in every window
    est = coupling_probability(Field(G, smooth(2) + 1), Field(G, smooth(2)), 1e-3, 100, 3, 4,
                               cs, SolverConfig(1e-3, 6.0))
    fail = [1 - f for f in est.frequency]
    for n in (1, 2, 3):
        assert fail[n - 1] == pytest.approx(fail[0] ** n)


def test_windows_need_horizon():
    cs = constant_coefficients(G, 2.0, A=0.0)
    with pytest.raises(ConfigurationError):
        run_replicas(smooth(1), smooth(2), 1.0, cs, CFG, 4, 0, windows=2)


def test_wilson_interval():
    lo, hi = wilson_interval(200, 200)
    assert lo > 0.95 and hi == 1.0
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi < 0.05


def test_monotonicity_cubic_term_nonpositive():
    cs = make_coefficient_set(G, 2.0, 0.05, seed=3)
    c = cs.at(1.5)
    for s in range(10):
        t = monotonicity_terms(smooth(s, 3.0), smooth(s + 100, 3.0), c, 4.0, G)
        assert t["A"] <= 0


def test_monotonicity_drift_only():
    zero = np.zeros(G.shape)
    cs = constant_coefficients(G, 2.0, A=0.0)
    c = cs.at(1.0)
    v, vp = smooth(1), smooth(2)
    gap = monotonicity_gap(Field(G, v), Field(G, vp), c, 8.0)
    assert gap == pytest.approx(-8.0 * lp_norm(v - vp, G, 2), rel=1e-12)
    assert monotonicity_gap(Field(G, v), Field(G, v), c, 8.0) == 0.0
    del zero


def test_harnack_constant_function():
    cs = make_coefficient_set(G, 2.0, 0.05, seed=6)
    rep = harnack_check(lambda s: np.ones(s.shape[0]), 2.0, Field(G, smooth(1, 2.0)),
                        Field(G, smooth(2, 2.0)), 3.0, 200, cs, CFG, 9, f_sup=1.0)
    assert rep.lhs == pytest.approx(1.0, abs=3 * 2 * rep.lhs_se + 1e-12)
    assert rep.rhs >= rep.lhs
    assert 0 <= rep.a_hat <= 1


def test_harnack_diagonal():
    cs = make_coefficient_set(G, 2.0, 0.05, seed=6)
    phi = Field(G, smooth(3, 2.0))
    f = lambda s: 1.5 + 0.5 * np.tanh(s.mean(axis=-1))
    rep = harnack_check(f, 2.0, phi, phi, 3.0, 100, cs, CFG, 9, f_sup=2.0)
    assert rep.psi_hat == 0.0 and rep.a_hat == 0.0
    # with a unit weight the two sides are (E f)^2 and E f^2
    assert rep.lhs <= rep.rhs


def test_harnack_needs_f_at_least_one():
    with pytest.raises(DomainError):
        harnack_from_samples(np.array([0.5, 1.0]), np.ones(2), np.zeros(2), np.zeros(2, bool),
                             2.0, 1.0)


def test_jp_identity_and_round_trip():
    v = Field(G, smooth(4))
    assert np.array_equal(jp_inverse(v, JPSurrogates.zeros(G)).values, v.values)
    rng = np.random.default_rng(0)
    s = JPSurrogates(*(0.3 * rng.standard_normal(G.shape) for _ in range(4)))
    back = jp_forward(jp_inverse(v, s), s)
    assert np.abs(back.values - v.values).max() < 1e-13


def test_jp_constant_tree2():
    v = Field(G, smooth(5))
    rng = np.random.default_rng(1)
    t1, t3, vr = (rng.standard_normal(G.shape) for _ in range(3))
    s = JPSurrogates(t1, np.full(G.shape, 0.2), t3, vr)
    u = jp_inverse(v, s).values
    assert np.allclose(u - (t1 - t3), math.exp(-0.6) * (v.values + vr))
    with pytest.raises(ConfigurationError):
        jp_inverse(v, {"tree1": t1})
