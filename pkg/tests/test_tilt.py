from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from growfrag import levy as lv
from growfrag import pde, pdmp, spectral, tilt
from growfrag.functions import Bump

from conftest import THETA0, RHO_LEVY, within

P142 = lv.LevyParams(1.0, 4.0, 2.0)


@pytest.fixture(scope="module")
def ub_tilt(ub):
    # linear growth: ell is constant and rho = a
    return tilt.trivial(ub, ub.growth.a)


@pytest.fixture(scope="module")
def levy_tilt(levy):
    return tilt.from_levy(levy)


def ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


# -- simulation -------------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 17])
def test_constant_ell_reproduces_base_path(ub, ub_tilt, seed):
    base = pdmp.simulate_path(ub, 1.0, 20.0, seed, 3)
    tilted = tilt.simulate_tilted(ub_tilt, 1.0, 20.0, seed, 3)
    assert base.events == tilted.events
    assert base.end_mass == tilted.end_mass


def test_constant_table_reproduces_base_batch(ub):
    tm = tilt.from_table(ub, spectral.EllTable.constant(spectral.log_grid(0.1, 10, 7), 1.0, 1.0))
    a = pdmp.simulate_paths(ub, 1.0, [1.0, 5.0], 500, seed=4)
    b = tilt.simulate_tilted_paths(tm, 1.0, [1.0, 5.0], 500, seed=4)
    assert np.array_equal(a.log_mass, b.log_mass)
    assert np.array_equal(a.n_events, b.n_events)


def test_levy_tilt_is_centered(levy_tilt):
    t = 50.0
    batch = tilt.simulate_tilted_paths(levy_tilt, 1.0, [t], 10_000, seed=3)
    d = batch.log_mass[:, 0] / t
    assert within(d.mean(), 0.0, 3, d.std(ddof=1) / math.sqrt(d.size))


def test_levy_tilt_returns(levy_tilt):
    s = tilt.return_sample(levy_tilt, 10_000, 500.0, seed=4)
    assert s.hit_fraction >= 0.95


def test_levy_tilted_jump_law(levy_tilt):
    # kernel times (y/x)^(theta0-1): rate lambda beta/(beta+theta0-1), ratio density prop. to v^(beta+theta0-2)
    be = P142.beta + THETA0 - 1.0
    tr = tilt.simulate_tilted(levy_tilt, 1.0, 2000.0, seed=21)
    n = tr.event_times.size
    rate = P142.lam * P142.beta / be
    assert within(n, rate * 2000.0, 4, math.sqrt(rate * 2000.0))
    logv = np.log(tr.post / tr.pre)
    assert stats.kstest(-logv, "expon", args=(0, 1 / be)).pvalue > 1e-3


def test_accept_bound_dominates_ratios(ub):
    z = np.linspace(-3, 3, 13)
    tm = tilt.TiltedModel(ub, pdmp.Tilt("table", tz=z, tl=-z * np.cos(z)), 1.0)
    v = np.linspace(1e-3, 1 - 1e-3, 400)
    for x in np.geomspace(0.02, 30, 40):
        assert tm.accept_bound(x) >= np.max(tm.ell(x * v)) / tm.ell(x)
        assert tm.accept_bound(x) >= 1.0


def test_bound_violation_is_reported(ub):
    z = np.linspace(-3, 3, 13)
    # safety below 1 cannot bound ell(xv)/ell(x) for a decreasing ell
    tm = tilt.TiltedModel(ub, pdmp.Tilt("table", tz=z, tl=-z, safety=0.5), 1.0)
    with pytest.raises(pdmp.BoundViolated):
        tilt.simulate_tilted(tm, 1.0, 10.0)
    with pytest.raises(pdmp.BoundViolated):
        tilt.simulate_tilted_paths(tm, 1.0, [5.0], 100)


def test_power_tilt_with_negative_exponent_refused():
    with pytest.raises(pdmp.BoundViolated):
        pdmp.Tilt("power", exponent=-0.5)


# -- occupation measure -------------------------------------------------------------


@pytest.fixture(scope="module")
def ub_occupation(ub_tilt):
    fs = [ones, lambda x: (np.asarray(x) >= 1.0) * 1.0, lambda x: (np.asarray(x) < 1.0) * 1.0]
    return tilt.occupation_measure(ub_tilt, fs, 20_000, seed=5)


def test_occupation_total_is_return_derivative(ub, ub_occupation):
    total = ub_occupation.values[0]
    assert ub_occupation.n_censored == 0
    np.testing.assert_allclose(ub_occupation.per_excursion[:, 0], ub_occupation.lengths, rtol=1e-9)
    s = pdmp.sample_hitting_set(ub, 1.0, 1.0, 20_000, 1e3, seed=6)
    d = spectral.laplace_derivative(s, 1.0)
    # two 95% intervals overlap
    assert abs(total.mean - d.value) <= 1.96 * (total.stderr + d.stderr)


def test_occupation_additivity(ub_occupation):
    pe = ub_occupation.per_excursion
    np.testing.assert_allclose(pe[:, 1] + pe[:, 2], pe[:, 0], rtol=1e-10, atol=1e-12)


def test_occupation_positivity(ub_tilt):
    occ = tilt.occupation_measure(ub_tilt, [Bump(1.5, 0.4), Bump(0.5, 0.3)], 2000, seed=8)
    assert np.all(occ.per_excursion >= 0)
    assert all(v.mean >= 0 for v in occ.values)


def test_occupation_counts_censored(levy_tilt):
    occ = tilt.occupation_measure(levy_tilt, [ones], 2000, T_max=1.0, seed=9)
    assert occ.n_censored > 0
    assert occ.per_excursion.shape[0] == occ.n_total - occ.n_censored
    with pytest.raises(tilt.ExcursionCensored):
        tilt.occupation_measure(levy_tilt, [ones], 50, T_max=1e-6, seed=9)


# -- stationary law ---------------------------------------------------------------


@pytest.fixture(scope="module")
def ub_stationary(ub_tilt):
    return tilt.stationary_density(ub_tilt, 100.0, 5e4, 32, seed=7)


def test_stationary_histogram_matches_curve(ub_stationary):
    assert ub_stationary.passed
    assert ub_stationary.critical == pytest.approx(stats.chi2.ppf(1 - 1e-3, 31))


def test_stationary_histogram_normalized(ub_stationary):
    w = ub_stationary.widths
    assert np.sum(ub_stationary.empirical * w) == pytest.approx(1.0, abs=1e-12)
    assert np.sum(ub_stationary.curve * w) == pytest.approx(1.0, abs=1e-12)


def test_eigenmeasure_is_stationary_law_over_mass(ub, ub_stationary):
    st = ub_stationary
    yc = st.centers
    ders = dict(zip(yc.tolist(), st.minus_Lprime.tolist()))
    nu = spectral.nu_density(ub, lambda y: 1.0, lambda y: ders[float(y)], yc)
    h = st.empirical / yc
    w = st.widths
    ratio = (nu / np.sum(nu * w)) / (h / np.sum(h * w))
    central = slice(4, 28)
    assert np.max(np.abs(ratio[central] - 1.0)) < 0.05


# -- asymptotic profile --------------------------------------------------------------


def test_profile_estimators_agree(ub_tilt):
    p = tilt.asymptotic_profile(ub_tilt, Bump(1.0, 0.5), 1.0, 2.0, 20_000, seed=8)
    assert p.agree(3.0)


def test_profile_of_zero(ub_tilt):
    p = tilt.asymptotic_profile(ub_tilt, lambda x: np.zeros_like(x), 1.0, 2.0, 200, seed=8)
    assert p.direct.mean == 0.0 and p.tilted.mean == 0.0


def test_profile_stabilizes(ub_tilt):
    f = Bump(1.0, 0.5)
    p4 = tilt.asymptotic_profile(ub_tilt, f, 1.0, 4.0, 20_000, seed=8)
    p8 = tilt.asymptotic_profile(ub_tilt, f, 1.0, 8.0, 20_000, seed=8)
    assert abs(p8.tilted.mean / p4.tilted.mean - 1.0) < 0.05


def test_profile_limit_scales_with_ell_bar(levy_tilt):
    ys = np.geomspace(0.1, 10, 200)
    nu = ys ** -(THETA0 + 1)
    f = Bump(1.0, 0.5)
    a = tilt.profile_limit(levy_tilt, f, 1.0, ys, nu)
    b = tilt.profile_limit(levy_tilt, f, 2.0, ys, nu)
    assert b / a == pytest.approx(2.0 ** THETA0, rel=1e-12)
    ref = integrate.quad(lambda y: f(y) * y ** -(THETA0 + 1), *f.support)[0]
    assert a == pytest.approx(ref, rel=1e-5)


# -- ratio limit -----------------------------------------------------------------


def test_ratio_of_equal_functions(ub_tilt):
    f = Bump(1.0, 0.5)
    rc = tilt.ratio_limit(ub_tilt, f, f, 1.0, [2.0, 8.0], 1000, seed=9)
    assert np.all(rc.ratio == 1.0)


def test_ratio_is_linear(ub_tilt):
    f = Bump(1.0, 0.5)

    def f2(x):
        return 2.0 * f(x)

    f2.support = f.support
    rc = tilt.ratio_limit(ub_tilt, f2, f, 1.0, [2.0, 8.0], 1000, seed=9)
    np.testing.assert_allclose(rc.ratio, 2.0, rtol=1e-14)


def test_ratio_matches_occupation_target(ub_tilt):
    f, g = Bump(1.0, 0.5), Bump(2.0, 0.5)
    rc = tilt.ratio_limit(ub_tilt, f, g, 1.0, [2.0, 4.0, 8.0], 20_000, seed=9)
    target = tilt.ratio_target(ub_tilt, f, g, 20_000, seed=10)
    assert abs(rc.ratio[-1] / target.mean - 1.0) < 0.10


# -- eigenmeasure residual ----------------------------------------------------------


def test_ub_eigenmeasure_residual(ub):
    ys = spectral.log_grid(0.1, 10, 25)
    ders = spectral.minus_Lprime_curve(ub, ys, 1.0, 20_000, 1e3, seed=12)
    lookup = dict(zip(ys.tolist(), ders))
    nu = spectral.nu_density(ub, lambda y: 1.0, lambda y: lookup[float(y)], ys)
    res = tilt.eigenmeasure_residual(ub, ys, nu, Bump(1.0, 0.7), 1.0, pde.PdeGrid(0.01, 100, 1024))
    assert res.relative < 0.05


def test_residual_of_zero(ub):
    ys = np.geomspace(0.1, 10, 10)
    res = tilt.eigenmeasure_residual(ub, ys, 1.0 / ys, lambda x: np.zeros_like(x), 1.0, pde.PdeGrid(0.01, 100, 256))
    assert res.relative == 0.0 and res.lhs == 0.0


def test_levy_eigenmeasure_residual(levy):
    ys = np.geomspace(1e-3, 1e3, 400)
    nu = ys ** -(THETA0 + 1)
    bump = Bump(1.0, 0.7)
    res = tilt.eigenmeasure_residual(levy, ys, nu, lambda x: x ** THETA0 * bump(x), RHO_LEVY,
                                     pde.PdeGrid(1e-3, 1e3, 1024))
    assert res.relative < 0.05
    # rho <nu, fbar> with fbar = y^theta0 bump reduces to rho int bump(y) / y dy
    ref = integrate.quad(lambda y: bump(y) / y, *bump.support)[0]
    assert res.rhs == pytest.approx(RHO_LEVY * ref, rel=1e-4)
