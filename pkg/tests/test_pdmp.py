from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from growfrag import _kernels as kern
from growfrag import pdmp
from growfrag.functions import Bump, Identity
from growfrag.model import (ConstantRate, FragmentationSpec, GeneralGrowth, LinearGrowth, ModelSpec,
                            UniformBinaryRatio, levy_model, load_model, validate)
from growfrag.rng import key_for, seed_word


def wavy_model():
    """c(x) = x (1 + sin(log x) / 2), so cbar ranges over [0.5, 1.5]."""
    g = GeneralGrowth(lambda x: x * (1.0 + 0.5 * np.sin(np.log(x))), cbar_sup=1.5, name="wavy")
    return validate(ModelSpec(g, FragmentationSpec(ConstantRate(2.0), UniformBinaryRatio()), 1.0, "wavy"))


# -- flow -------------------------------------------------------------------------


def test_flow_map_examples(levy):
    assert pdmp.flow_map(levy, 1.0, math.log(2.0)) == pytest.approx(2.0, rel=1e-15)
    assert pdmp.flow_map(levy, 3.7, 0.0) == 3.7
    m2 = levy_model(2.0, 4.0, 2.0)
    assert pdmp.flow_map(m2, 3.0, 0.5) == pytest.approx(3 * math.e, rel=1e-15)
    assert pdmp.flow_map(wavy_model(), 2.5, 0.0) == 2.5


@pytest.mark.parametrize("x,y", [(0.3, 0.3), (0.5, 2.0), (1.0, 40.0)])
def test_numeric_flow_round_trip(x, y):
    m = wavy_model()
    t = pdmp.time_to_reach(m, x, y)
    assert t >= 0
    assert pdmp.flow_map(m, x, t) == pytest.approx(y, rel=1e-8)


def test_time_to_reach_rejects_downward(levy):
    with pytest.raises(ValueError):
        pdmp.time_to_reach(levy, 2.0, 1.0)


# -- trajectories ----------------------------------------------------------------------


@given(st.integers(0, 2**32), st.integers(0, 10_000), st.floats(0.01, 100), st.floats(0, 6),
       st.sampled_from(["levy_142", "ub_14"]))
@settings(max_examples=60, deadline=None)
def test_trajectory_invariants(seed, index, x, t_end, name):
    m = load_model(name)
    a = m.growth.a
    tr = pdmp.simulate_path(m, x, t_end, seed, index)
    assert np.all(np.diff(tr.event_times) > 0)
    assert np.all(tr.post < tr.pre)
    # the path follows the flow exactly between events
    t_prev, m_prev = 0.0, x
    for t, p, q in tr.events:
        assert p == pytest.approx(m_prev * math.exp(a * (t - t_prev)), rel=1e-11)
        t_prev, m_prev = t, q
    assert tr.end_mass == pytest.approx(m_prev * math.exp(a * (t_end - t_prev)), rel=1e-11)
    assert tr.log_E == pytest.approx(tr.product_identity(), abs=1e-9)
    assert tr.log_E == a * t_end
    assert tr.log_E <= m.cbar_sup * t_end + 1e-12


def test_python_engine_matches_kernels(levy, ub):
    for m in (levy, ub):
        eng = pdmp._PyEngine(m)
        for i in range(25):
            a = pdmp.simulate_path(m, 1.3, 4.0, 5, i)
            b = eng.path(5, i, 1.3, 4.0)
            assert len(a.event_times) == len(b.event_times)
            np.testing.assert_allclose(a.event_times, b.event_times, rtol=1e-12)
            np.testing.assert_allclose(a.post, b.post, rtol=1e-12)
            assert a.end_mass == pytest.approx(b.end_mass, rel=1e-12)
        hs = pdmp.sample_hitting_set(m, 1.0, 1.0, 200, 50.0, seed=3)
        for i in range(200):
            H, W, hit = eng.hit(3, i, 1.0, 1.0, 50.0)
            assert hit == hs.hit[i]
            if hit:
                assert H == pytest.approx(hs.H[i], rel=1e-12)
                assert W == pytest.approx(hs.log_W[i], rel=1e-12)
        times = np.array([0.5, 1.0, 3.0])
        batch = pdmp.simulate_paths(m, 0.7, times, 50, seed=9)
        for i in range(50):
            z, le = eng.observe(9, i, 0.7, times)
            np.testing.assert_allclose(batch.log_mass[i], z, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(batch.log_E[i], le, rtol=1e-12)


def test_numeric_flow_product_matches_time_integral():
    m = wavy_model()
    for i in range(15):
        tr = pdmp.simulate_path(m, 1.0, 3.0, seed=21, index=i)
        # integrate cbar(X_s) over each flow segment in time
        starts = np.concatenate([[0.0], tr.event_times])
        ends = np.concatenate([tr.event_times, [tr.end_time]])
        masses = np.concatenate([[tr.start], tr.post])
        total = 0.0
        for s0, s1, x in zip(starts, ends, masses):
            total += integrate.quad(lambda s: float(m.cbar(pdmp.flow_map(m, x, s))), 0.0, s1 - s0,
                                    epsabs=1e-12, epsrel=1e-12, limit=200)[0]
        assert abs(tr.log_E - total) < 1e-6
        assert tr.log_E <= m.cbar_sup * tr.end_time + 1e-12


def test_numeric_and_exact_flow_agree_on_linear_growth(levy):
    g = GeneralGrowth(lambda x: 1.0 * np.asarray(x), cbar_sup=1.0)
    numeric = validate(ModelSpec(g, levy.frag, 1.0, "linear-as-general"))
    eng = pdmp._PyEngine(numeric)
    hs = pdmp.sample_hitting_set(levy, 0.5, 1.0, 100, 50.0, seed=4)
    for i in range(100):
        H, W, hit = eng.hit(4, i, 0.5, 1.0, 50.0)
        assert hit == hs.hit[i]
        if hit:
            assert H == pytest.approx(hs.H[i], rel=1e-8)
            # log W from the product identity equals a H under linear growth
            assert W == pytest.approx(hs.log_W[i], rel=1e-8)


def test_determinism(ub):
    a = pdmp.simulate_paths(ub, 1.0, [1.0, 2.0], 1000, seed=42)
    b = pdmp.simulate_paths(ub, 1.0, [1.0, 2.0], 1000, seed=42)
    assert np.array_equal(a.log_mass, b.log_mass)
    c = pdmp.simulate_paths(ub, 1.0, [1.0, 2.0], 1000, seed=43)
    assert not np.array_equal(a.log_mass, c.log_mass)


def test_offsets_split_a_batch(ub):
    whole = pdmp.simulate_paths(ub, 1.0, [2.0], 100, seed=1)
    tail = pdmp.simulate_paths(ub, 1.0, [2.0], 40, seed=1, offset=60)
    assert np.array_equal(whole.log_mass[60:], tail.log_mass)


def test_no_fragmentation_path(pure_growth):
    tr = pdmp.simulate_path(pure_growth, 2.0, 1.5, seed=0)
    assert tr.events == []
    assert tr.end_mass == pytest.approx(pdmp.flow_map(pure_growth, 2.0, 1.5), rel=1e-15)


def test_event_count_is_poisson_four(levy):
    batch = pdmp.simulate_paths(levy, 1.0, [1.0], 100_000, seed=2)
    n = batch.n_events
    se = n.std(ddof=1) / math.sqrt(n.size)
    assert abs(n.mean() - 4.0) <= 3 * se


@pytest.mark.parametrize("name,z", [("ub_14", 0.0), ("ub_14", -1.0), ("levy_142", 0.3)])
def test_thinning_wait_is_exponential(name, z):
    """Held flow: candidates at a frozen position until one is accepted."""
    m = load_model(name)
    P, tz, tl, tpm = pdmp.pack(m)
    lam = P[8]
    sw = seed_word(17)
    n = 100_000
    waits = np.empty(n)
    for i in range(n):
        key = np.uint64(key_for(sw, i))
        ctr, total = 0, 0.0
        while True:
            total += kern.wait(key, ctr + 1, lam)
            acc, _, _ = kern.candidate(z, key, ctr + 1, P, tz, tl, tpm)
            ctr += 3
            if acc:
                break
        waits[i] = total
    K = float(m.K(math.exp(z)))
    assert stats.kstest(waits, "expon", args=(0, 1 / K)).pvalue > 1e-3


# -- hitting ----------------------------------------------------------------------------


def test_hitting_without_jumps(pure_growth):
    s = pdmp.sample_hitting(pure_growth, 1.0, 3.0, 10.0)
    assert s.hit
    assert s.H == pytest.approx(pdmp.time_to_reach(pure_growth, 1.0, 3.0), rel=1e-14)
    assert s.log_W == pytest.approx(math.log(3.0), rel=1e-14)
    down = pdmp.sample_hitting_set(pure_growth, 3.0, 1.0, 50, 100.0)
    assert not np.any(down.hit)
    assert np.all(np.isnan(down.H))


def test_hit_samples_respect_censoring(levy):
    s = pdmp.sample_hitting_set(levy, 1.0, 1.0, 5000, 5.0, seed=8)
    assert np.all(s.H[s.hit] <= 5.0)
    assert np.all(s.H[s.hit] > 0)
    assert np.all(np.isnan(s.H[~s.hit]))
    assert s.samples[0].censor_time == 5.0
    assert len(s.samples) == s.N == 5000


def test_return_fraction_is_one_half(levy_returns):
    # P(H < inf) = 1 - psi'(Phi(0)) = 1/2; the remaining mass beyond T_max=200 is negligible
    assert abs(levy_returns.hit_fraction - 0.5) <= 0.01


# -- Feynman-Kac --------------------------------------------------------------------------


def test_feynman_kac_identity_is_exact(levy, ub):
    for m in (levy, ub):
        e = pdmp.feynman_kac(m, 1.7, 1.3, Identity(), 500, seed=3)
        assert e.mean == pytest.approx(1.7 * math.exp(1.3), rel=1e-13)
        assert e.stderr == 0.0


def test_feynman_kac_without_jumps(pure_growth):
    f = Bump(2.0, 0.5)
    e = pdmp.feynman_kac(pure_growth, 1.0, 0.6, f, 100)
    assert e.mean == pytest.approx(f(pdmp.flow_map(pure_growth, 1.0, 0.6)), rel=1e-13)
    assert e.stderr == 0.0


def test_feynman_kac_needs_two_paths(levy):
    with pytest.raises(ValueError):
        pdmp.feynman_kac(levy, 1.0, 1.0, Identity(), 1)


def test_feynman_kac_general_growth_identity():
    # T_t id(x) = x E[E_t]; with c(x) = x(1 + sin(log x)/2) this is a genuine expectation
    m = wavy_model()
    e = pdmp.feynman_kac(m, 1.0, 0.5, Identity(), 400, seed=1)
    assert math.exp(0.25) <= e.mean <= math.exp(0.75)


def test_estimate_helper():
    e = pdmp.estimate(np.array([2.0, 2.0, 2.0]))
    assert (e.mean, e.stderr, e.n) == (2.0, 0.0, 3)
    e = pdmp.estimate(np.array([1.0, 3.0]))
    assert e.stderr == pytest.approx(1.0)


def test_trajectory_csv(tmp_path, ub):
    trs = [pdmp.simulate_path(ub, 1.0, 2.0, 0, i) for i in range(3)]
    p = tmp_path / "t.csv"
    pdmp.write_trajectories_csv(p, trs)
    lines = p.read_text().splitlines()
    assert lines[0] == "path_id,event_time,pre_mass,post_mass"
    assert len(lines) == 1 + sum(len(t.events) for t in trs)
