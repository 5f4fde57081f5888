"""Jitted event loops for linear growth ``c(x) = a x``.

State is the log-mass ``z``; between candidate jump epochs it moves as
``z + a s``.  Candidate epochs arrive at the constant dominating rate
``LAM`` (thinning).  Each candidate consumes exactly three draws of the
path's stream: waiting time, acceptance uniform, ratio uniform.  The base
and tilted dynamics share this layout, so a trivial tilt reproduces the
base path draw for draw.

Parameter vector layout (see ``pack``)::

    0 a   1 rate kind (0 constant, 1 saturating)   2 b   3 gamma0   4 Ksup
    5 beta   6 tilt kind (0 none, 1 table, 2 power)   7 tilt exponent
    8 LAM   9 table safety factor
"""
from __future__ import annotations

import math

import numpy as np
import numba
from numba import njit, prange

from .rng import key_for, uniform

# the bundled TBB is too old and numba warns on every import otherwise
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

OK = 0
BOUND_VIOLATED = 1

_A, _RK, _B, _G0, _KSUP, _BETA, _TK, _TE, _LAM, _SAFE = range(10)


@njit(cache=True, inline="always")
def rate_at(z, P):
    if P[_RK] == 0.0:
        return P[_B]
    return P[_B] / (1.0 + math.exp(-P[_G0] * z))


@njit(cache=True)
def log_ell(z, P, tz, tl):
    kind = P[_TK]
    if kind == 0.0:
        return 0.0
    if kind == 2.0:
        return P[_TE] * z
    n = tz.size
    if z <= tz[0]:
        return tl[0]
    if z >= tz[n - 1]:
        return tl[n - 1]
    i = np.searchsorted(tz, z) - 1
    w = (z - tz[i]) / (tz[i + 1] - tz[i])
    return tl[i] + w * (tl[i + 1] - tl[i])


@njit(cache=True)
def log_bound(z, P, tz, tl, tpm):
    """log sup_{v in (0,1)} ell(z + log v) / ell(z), with the table safety factor."""
    kind = P[_TK]
    if kind != 1.0:
        return 0.0
    lz = log_ell(z, P, tz, tl)
    j = np.searchsorted(tz, z) - 1
    m = lz
    if j >= 0 and tpm[j] > m:
        m = tpm[j]
    return math.log(P[_SAFE]) + m - lz


@njit(cache=True, inline="always")
def wait(key, ctr, lam):
    u = uniform(key, ctr)
    if lam <= 0.0:
        return np.inf
    return -math.log(u) / lam


@njit(cache=True)
def candidate(z, key, ctr, P, tz, tl, tpm):
    """Draws acceptance and ratio at a candidate epoch.

    Returns (accepted, log V, status)."""
    u = uniform(key, ctr + 1)
    lv = math.log(uniform(key, ctr + 2)) / P[_BETA]
    k = rate_at(z, P)
    if P[_TK] == 0.0:
        return u * P[_LAM] < k, lv, np.int64(OK)
    lr = log_ell(z + lv, P, tz, tl) - log_ell(z, P, tz, tl)
    lb = log_bound(z, P, tz, tl, tpm)
    status = np.int64(OK)
    if lr > lb + 1e-12 or k * math.exp(lb) > P[_LAM] * (1.0 + 1e-12):
        status = np.int64(BOUND_VIOLATED)
    return u * P[_LAM] < k * math.exp(lr), lv, status


@njit(cache=True)
def path_record(P, tz, tl, tpm, sw, index, z0, t_end, ev_t, ev_pre, ev_post):
    """One path to ``t_end`` storing up to ``ev_t.size`` events.

    Returns (z_end, n_events, status); n_events may exceed the buffer."""
    key = key_for(sw, index)
    a = P[_A]
    t = 0.0
    z = z0
    ctr = 0
    n = 0
    status = np.int64(OK)
    cap = ev_t.size
    while True:
        e = wait(key, ctr + 1, P[_LAM])
        if t + e >= t_end:
            # updating z here before break trips numba type inference
            break
        t += e
        z += a * e
        acc, lv, st = candidate(z, key, ctr + 1, P, tz, tl, tpm)
        ctr += 3
        if st > status:
            status = st
        if acc:
            if n < cap:
                ev_t[n] = t
                ev_pre[n] = z
                ev_post[n] = z + lv
            n += 1
            z += lv
    z += a * (t_end - t)
    return z, n, status


@njit(cache=True, parallel=True)
def observe(P, tz, tl, tpm, sw, offset, z0, times, Z, nev, stat):
    """Log-mass of each path at the sorted ``times``; row i uses stream offset+i."""
    n = Z.shape[0]
    m = times.size
    a = P[_A]
    for i in prange(n):
        key = key_for(sw, offset + i)
        t = 0.0
        z = z0
        ctr = 0
        j = 0
        cnt = 0
        status = np.int64(OK)
        while j < m:
            e = wait(key, ctr + 1, P[_LAM])
            while j < m and times[j] <= t + e:
                Z[i, j] = z + a * (times[j] - t)
                j += 1
            if j == m:
                break
            t += e
            z += a * e
            acc, lv, st = candidate(z, key, ctr + 1, P, tz, tl, tpm)
            ctr += 3
            if st > status:
                status = st
            if acc:
                z += lv
                cnt += 1
        nev[i] = cnt
        stat[i] = status


@njit(cache=True, parallel=True)
def hitting(P, tz, tl, tpm, sw, offset, z0, zy, t_max, H, hit, stat):
    """First hitting time of ``zy`` (t > 0) by up-crossing, censored at ``t_max``."""
    n = H.size
    a = P[_A]
    for i in prange(n):
        key = key_for(sw, offset + i)
        t = 0.0
        z = z0
        ctr = 0
        status = np.int64(OK)
        H[i] = np.nan
        hit[i] = False
        while True:
            e = wait(key, ctr + 1, P[_LAM])
            if z < zy:
                ttr = (zy - z) / a
                if ttr <= e:
                    if t + ttr <= t_max:
                        H[i] = t + ttr
                        hit[i] = True
                    break
            if t + e > t_max:
                break
            t += e
            z += a * e
            acc, lv, st = candidate(z, key, ctr + 1, P, tz, tl, tpm)
            ctr += 3
            if st > status:
                status = st
            if acc:
                z += lv
        stat[i] = status


@njit(cache=True, inline="always")
def _cumint(k, z, fz0, fdz, F, G):
    """int_{fz0}^{z} of the piecewise-linear table k, constant beyond its ends."""
    nf = F.shape[1]
    zend = fz0 + (nf - 1) * fdz
    if z <= fz0:
        return F[k, 0] * (z - fz0)
    if z >= zend:
        return G[k, nf - 1] + F[k, nf - 1] * (z - zend)
    j = int((z - fz0) / fdz)
    if j > nf - 2:
        j = nf - 2
    w = z - (fz0 + j * fdz)
    return G[k, j] + F[k, j] * w + 0.5 * (F[k, j + 1] - F[k, j]) / fdz * w * w


@njit(cache=True, parallel=True)
def excursions(P, tz, tl, tpm, sw, offset, z0, t_max, fz0, fdz, F, G, I, H, done, stat):
    """Excursions away from ``z0``: integrals of each table over the excursion."""
    n = H.size
    nk = F.shape[0]
    a = P[_A]
    for i in prange(n):
        key = key_for(sw, offset + i)
        t = 0.0
        z = z0
        ctr = 0
        status = np.int64(OK)
        for k in range(nk):
            I[i, k] = 0.0
        done[i] = False
        while True:
            e = wait(key, ctr + 1, P[_LAM])
            z_stop = np.nan
            if z < z0:
                ttr = (z0 - z) / a
                if ttr <= e and t + ttr <= t_max:
                    z_stop = z0
                    done[i] = True
            if not done[i] and t + e > t_max:
                z_stop = z + a * (t_max - t)
            if not np.isnan(z_stop):
                for k in range(nk):
                    I[i, k] += (_cumint(k, z_stop, fz0, fdz, F, G) - _cumint(k, z, fz0, fdz, F, G)) / a
                H[i] = t + (z_stop - z) / a
                break
            z1 = z + a * e
            for k in range(nk):
                I[i, k] += (_cumint(k, z1, fz0, fdz, F, G) - _cumint(k, z, fz0, fdz, F, G)) / a
            t += e
            z = z1
            acc, lv, st = candidate(z, key, ctr + 1, P, tz, tl, tpm)
            ctr += 3
            if st > status:
                status = st
            if acc:
                z += lv
        stat[i] = status


@njit(cache=True)
def _deposit(za, zb, a, zb0, dzb, row, out, outside):
    """Adds the time spent while the flow moves from za up to zb into z-bins."""
    nb = out.shape[1]
    zlo = zb0
    zhi = zb0 + nb * dzb
    total = (zb - za) / a
    inside = 0.0
    lo = max(za, zlo)
    hi = min(zb, zhi)
    if hi > lo:
        k0 = int((lo - zlo) / dzb)
        k1 = min(int((hi - zlo) / dzb), nb - 1)
        for k in range(k0, k1 + 1):
            e0 = max(lo, zlo + k * dzb)
            e1 = min(hi, zlo + (k + 1) * dzb)
            if e1 > e0:
                out[row, k] += (e1 - e0) / a
                inside += (e1 - e0) / a
    outside[row] += total - inside


@njit(cache=True)
def occupation_histogram(P, tz, tl, tpm, sw, index, z0, t_burn, t_run, zb0, dzb, out, outside):
    """Time spent in each z-bin during [t_burn, t_burn + t_run], split into
    ``out.shape[0]`` consecutive batches of equal length."""
    key = key_for(sw, index)
    a = P[_A]
    nbatch = out.shape[0]
    blen = t_run / nbatch
    t_end = t_burn + t_run
    t = 0.0
    z = z0
    ctr = 0
    status = np.int64(OK)
    while t < t_end:
        e = wait(key, ctr + 1, P[_LAM])
        t1 = min(t + e, t_end)
        ta = max(t, t_burn)
        while ta < t1:
            row = min(int((ta - t_burn) / blen), nbatch - 1)
            tb = min(t1, t_burn + (row + 1) * blen)
            if row == nbatch - 1:
                tb = t1
            _deposit(z + a * (ta - t), z + a * (tb - t), a, zb0, dzb, row, out, outside)
            ta = tb
        if t + e >= t_end:
            break
        t += e
        z += a * e
        acc, lv, st = candidate(z, key, ctr + 1, P, tz, tl, tpm)
        ctr += 3
        if st > status:
            status = st
        if acc:
            z += lv
    return status


_GL5_X = np.array([-0.9061798459386640, -0.5384693101056831, 0.0,
                   0.5384693101056831, 0.9061798459386640])
_GL5_W = np.array([0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                   0.4786286704993665, 0.2369268850561891])


@njit(cache=True, inline="always")
def _table_at(k, z, fz0, fdz, F):
    nf = F.shape[1]
    if z <= fz0:
        return F[k, 0]
    zend = fz0 + (nf - 1) * fdz
    if z >= zend:
        return F[k, nf - 1]
    j = int((z - fz0) / fdz)
    if j > nf - 2:
        j = nf - 2
    w = (z - (fz0 + j * fdz)) / fdz
    return F[k, j] + w * (F[k, j + 1] - F[k, j])


@njit(cache=True)
def _weighted_piece(k, t0, t1, t_ref, z_ref, a, growth, fz0, fdz, F, G, h, gx, gw):
    """int_{t0}^{t1} exp(growth s) phi_k(z(s)) ds along the flow z(s) = z_ref + a (s - t_ref)."""
    if t1 <= t0:
        return 0.0
    if growth == 0.0:
        za = z_ref + a * (t0 - t_ref)
        zb = z_ref + a * (t1 - t_ref)
        return (_cumint(k, zb, fz0, fdz, F, G) - _cumint(k, za, fz0, fdz, F, G)) / a
    m = int(math.ceil((t1 - t0) / h))
    step = (t1 - t0) / m
    acc = 0.0
    for q in range(m):
        lo = t0 + q * step
        for r in range(gx.size):
            s = lo + 0.5 * step * (gx[r] + 1.0)
            acc += 0.5 * step * gw[r] * math.exp(growth * s) * _table_at(k, z_ref + a * (s - t_ref), fz0, fdz, F)
    return acc


@njit(cache=True, parallel=True)
def time_integrals(P, tz, tl, tpm, sw, offset, z0, growth, t_grid, fz0, fdz, F, G, h, out, stat):
    """out[i, j, k] = int_0^{t_grid[j]} exp(growth s) phi_k(z_s) ds for path i."""
    n = out.shape[0]
    m = t_grid.size
    nk = F.shape[0]
    a = P[_A]
    gx = _GL5_X
    gw = _GL5_W
    for i in prange(n):
        key = key_for(sw, offset + i)
        t = 0.0
        z = z0
        ctr = 0
        status = np.int64(OK)
        acc = np.zeros(nk)
        j = 0
        while j < m:
            e = wait(key, ctr + 1, P[_LAM])
            seg_end = t + e
            s0 = t
            while j < m and t_grid[j] <= seg_end:
                for k in range(nk):
                    acc[k] += _weighted_piece(k, s0, t_grid[j], t, z, a, growth, fz0, fdz, F, G, h, gx, gw)
                    out[i, j, k] = acc[k]
                s0 = t_grid[j]
                j += 1
            if j == m:
                break
            for k in range(nk):
                acc[k] += _weighted_piece(k, s0, seg_end, t, z, a, growth, fz0, fdz, F, G, h, gx, gw)
            t = seg_end
            z += a * e
            ok, lv, st = candidate(z, key, ctr + 1, P, tz, tl, tpm)
            ctr += 3
            if st > status:
                status = st
            if ok:
                z += lv
        stat[i] = status
