from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from growfrag import levy as lv
from growfrag import pdmp
from growfrag import spectral as S
from growfrag.pdmp import HitSampleSet

from conftest import RHO_LEVY

P142 = lv.LevyParams(1.0, 4.0, 2.0)


@pytest.fixture(scope="module")
def ub_returns(ub):
    return pdmp.sample_hitting_set(ub, 1.0, 1.0, 20_000, 1000.0, seed=5)


# -- Laplace functional ------------------------------------------------------------


@pytest.mark.parametrize("q,band", [(1.0, 0.01), (1.5, 0.01), (1.25, 0.015)])
def test_laplace_matches_closed_form(levy_returns, q, band):
    e = S.laplace_estimate(levy_returns, q)
    ref = lv.L_closed(P142, q)
    assert abs(e.mean - ref) <= band
    assert abs(e.mean - ref) <= 3 * e.stderr


def test_laplace_at_large_q(levy_returns, levy):
    # short returns (an early small jump) keep L(cbar_sup + 50) near 8/(2 + Phi)^2, not below 1e-10
    q = levy.cbar_sup + 50
    e = S.laplace_estimate(levy_returns, q)
    assert abs(e.mean - lv.L_closed(P142, q)) <= 3 * e.stderr
    assert lv.L_closed(P142, 1e6) < 1e-10
    assert S.laplace_estimate(levy_returns, 1e6).mean < 1e-10


@given(st.floats(-3, 5), st.floats(1e-3, 2), st.floats(1e-3, 2))
@settings(max_examples=60, deadline=None)
def test_laplace_strictly_decreasing(levy_returns, q1, d2, d3):
    q2 = q1 + d2
    q3 = q2 + d3
    l1, l2, l3 = (S.log_laplace(levy_returns, q) for q in (q1, q2, q3))
    assert l1 > l2 > l3


def test_laplace_on_all_censored(pure_growth):
    s = pdmp.sample_hitting_set(pure_growth, 2.0, 1.0, 10, 5.0)
    assert S.log_laplace(s, 0.0) == -math.inf
    assert S.laplace_estimate(s, 0.0).mean == 0.0


# -- derivative --------------------------------------------------------------------------


def test_derivative_at_drift(levy_returns):
    d = S.laplace_derivative(levy_returns, 1.0)
    # psi''(Phi(0)) / psi'(Phi(0)) = (16/64) / (1/2)
    th = lv.Phi(P142, 0.0)
    ref = lv.d2psi(P142, th) / lv.dpsi(P142, th)
    assert ref == pytest.approx(0.5, abs=1e-12)
    assert abs(d.value - ref) <= 0.02
    assert not d.divergent


def test_derivative_flags_null_recurrence(levy_returns):
    d = S.laplace_derivative(levy_returns, RHO_LEVY)
    assert d.divergent
    assert d.top_share > 0.5


def test_derivative_positive_recurrent(ub_returns):
    d = S.laplace_derivative(ub_returns, 1.0)
    assert not d.divergent
    assert 0 < d.value < math.inf
    # E[H] for returns of the uniform-binary model (seed 5, N=2e4, T_max=1e3), frozen as a regression baseline
    assert d.value == pytest.approx(2.6636070702784838, rel=1e-9)


# -- spectral radius ----------------------------------------------------------------------


def test_find_rho_positive_recurrent(ub_returns, ub):
    est = S.find_rho(ub_returns, ub.cbar_sup)
    assert abs(est.rho_hat - 1.0) <= 0.02
    assert est.hit_fraction == 1.0
    assert est.L_at_rho == pytest.approx(1.0, abs=1e-6)
    assert est.rho_hat <= ub.cbar_sup + 3 * est.stderr + 1e-8
    assert est.minus_Lprime_at_rho > 0
    assert not est.divergent


def test_find_rho_root_condition_and_bias_direction(levy_returns, levy):
    est = S.find_rho(levy_returns, levy.cbar_sup)
    assert est.L_at_rho == pytest.approx(1.0, abs=1e-6)
    assert est.bias_direction == "down"
    assert est.rho_hat <= RHO_LEVY + (est.ci95[1] - est.rho_hat)
    assert est.rho_hat <= levy.cbar_sup + 3 * est.stderr
    assert est.ci95[0] <= est.rho_hat <= est.ci95[1]
    assert est.divergent
    assert est.censor_fraction == pytest.approx(1 - levy_returns.hit_fraction)


def test_anchor_independence_positive_recurrent(ub):
    e1, _ = S.estimate_rho(ub, 5000, 1000.0, seed=1, x0=1.0)
    e2, _ = S.estimate_rho(ub, 5000, 1000.0, seed=2, x0=2.0)
    w1 = e1.ci95[1] - e1.ci95[0]
    w2 = e2.ci95[1] - e2.ci95[0]
    assert abs(e1.rho_hat - e2.rho_hat) <= w1 + w2 + 1e-7


def test_lower_bound_by_stationary_growth_rate(ub, ub_returns):
    # <pi, cbar> for linear growth is a; the occupation law is only needed for its support
    est = S.find_rho(ub_returns, ub.cbar_sup)
    batch = pdmp.simulate_paths(ub, 1.0, np.linspace(10, 200, 50), 20, seed=3)
    mean_cbar = float(np.mean(ub.cbar(batch.mass)))
    assert est.rho_hat >= mean_cbar - 1e-6


def test_no_hits(pure_growth):
    s = pdmp.sample_hitting_set(pure_growth, 2.0, 1.0, 10, 5.0)
    with pytest.raises(S.NoHits):
        S.find_rho(s, pure_growth.cbar_sup)


def test_bracket_failure_is_reported():
    n = 1_000_000
    H = np.full(n, np.nan)
    W = np.full(n, np.nan)
    hit = np.zeros(n, dtype=bool)
    H[0], W[0], hit[0] = 1e-9, 1e-9, True
    s = HitSampleSet(1.0, 1.0, H, W, hit, 10.0, 0)
    with pytest.raises(S.BracketFailure):
        S.find_rho(s, 1.0)


def test_upper_bracket_failure_is_reported():
    # log W above cbar_sup * H cannot come from the model
    s = HitSampleSet(1.0, 1.0, np.array([1.0]), np.array([50.0]), np.array([True]), 10.0, 0)
    with pytest.raises(S.BracketFailure):
        S.find_rho(s, 1.0)


# -- eigenfunction table ------------------------------------------------------------------------


def test_ell_table_uniform_binary(ub):
    tab = S.build_ell_table(ub, 1.0, S.log_grid(0.25, 4.0, 9), 2000, 500.0, seed=2)
    assert np.all(tab.values > 0)
    assert np.all(np.abs(tab.values - 1.0) <= 3 * tab.stderr + 1e-12)
    assert tab(1.0) == pytest.approx(1.0)
    assert tab.rho_used == 1.0 and tab.x0 == 1.0


def test_ell_table_interpolation_rule():
    grid = np.array([1.0, 2.0, 4.0])
    tab = S.EllTable(grid, np.array([1.0, 4.0, 16.0]), np.zeros(3), 0.5, 1.0)
    # linear in (log x, log ell): ell = x^2 between nodes
    assert tab(math.sqrt(2)) == pytest.approx(2.0, rel=1e-12)
    assert tab(3.0) == pytest.approx(9.0, rel=1e-12)
    # constant beyond the ends, flagged
    assert tab(0.1) == pytest.approx(1.0) and tab(100.0) == pytest.approx(16.0)
    assert list(tab.extrapolated([0.1, 2.0, 100.0])) == [True, False, True]
    assert tab.slope(1.0, 4.0) == pytest.approx(2.0)


def test_ell_table_skips_points_without_hits():
    grid = np.array([1.0, 2.0, 4.0])
    tab = S.EllTable(grid, np.array([1.0, 0.0, 16.0]), np.zeros(3), 0.5, 1.0)
    assert list(tab.ok) == [True, False, True]
    assert tab(2.0) == pytest.approx(4.0)
    with pytest.raises(S.NoHits):
        S.EllTable(grid, np.zeros(3), np.zeros(3), 0.5, 1.0)


# -- eigenmeasure density ---------------------------------------------------------------------------


def test_nu_density_formula(ub):
    ell = S.EllTable.constant([0.5, 2.0], 1.0, 1.0)
    d = S.nu_density(ub, ell, lambda y: 3.0, np.array([0.5, 1.0, 2.0]))
    np.testing.assert_allclose(d, 1.0 / (np.array([0.5, 1.0, 2.0]) ** 2 * 3.0), rtol=1e-15)
    est = S.DerivativeEstimate(2.0, 0.1, False, 0.01)
    assert S.nu_density(ub, ell, lambda y: est, 2.0) == pytest.approx(1 / 8)


def test_nu_density_refuses_divergent(levy):
    ell = S.EllTable.constant([1.0], 1.0, RHO_LEVY)
    bad = S.DerivativeEstimate(5.0, 1.0, True, 0.9)
    with pytest.raises(S.DivergentDerivative):
        S.nu_density(levy, ell, lambda y: bad, 1.0)


def test_normalize_integrates_to_one():
    y = np.geomspace(0.1, 10, 201)
    dens, z = S.normalize(y, 1.0 / y**2)
    assert z > 0
    assert abs(np.trapezoid(dens, y) - 1.0) < 1e-6


def test_minus_lprime_curve_positive_recurrent(ub):
    ds = S.minus_Lprime_curve(ub, [0.5, 1.0, 2.0], 1.0, 2000, 500.0, seed=1)
    assert all(d.value > 0 and not d.divergent for d in ds)


def test_csv_writers(tmp_path, ub_returns, ub):
    est = S.find_rho(ub_returns, ub.cbar_sup)
    S.write_spectral(tmp_path / "s.csv", est, ["seed=5"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# seed=5"
    assert lines[1] == "rho_hat,ci_lo,ci_hi,L_at_rho,minus_Lprime,hit_fraction,N,T_max,seed"
    tab = S.EllTable.constant([1.0, 2.0], 1.0, 1.0)
    S.write_ell_table(tmp_path / "e.csv", tab)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "x,ell_hat,stderr"
