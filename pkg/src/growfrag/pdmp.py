"""Simulation of the tagged-fragment process X.

X follows ``dx/dt = c(x)`` and at rate ``K(x)`` jumps to ``x V`` with
``V ~ Q_x``.  Its exponential functional is tracked through the jump-ratio
product identity

    E_t = (X_t / X_0) * prod_{jumps} X_{s-} / X_s,

which for linear growth collapses to ``E_t = exp(a t)``.

Linear growth with a built-in rate and ratio family runs through the jitted
kernels; any other model runs through the pure-Python engine below, which
uses the same streams and event layout.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import _kernels as kern
from .model import (ConstantRate, LinearGrowth, PowerBetaRatio, SaturatingRate,
                    ValidatedModel)
from .rng import Stream, seed_word


class SimulationError(Exception):
    pass


class BoundViolated(SimulationError):
    """A tilted proposal exceeded its thinning bound (stale or coarse ell table)."""


class FlowDiverged(SimulationError):
    pass


def set_threads(n: int | None) -> int:
    import numba

    n = numba.config.NUMBA_NUM_THREADS if n is None else min(int(n), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(max(1, n))
    return numba.get_num_threads()


# -- value types --------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    start: float
    event_times: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    end_time: float
    end_mass: float
    log_E: float

    @property
    def events(self) -> list[tuple[float, float, float]]:
        return list(zip(self.event_times.tolist(), self.pre.tolist(), self.post.tolist()))

    def product_identity(self) -> float:
        """``log(end/start) + sum log(pre/post)``."""
        return math.log(self.end_mass / self.start) + float(np.sum(np.log(self.pre / self.post)))


@dataclass(frozen=True)
class HitSample:
    target: float
    H: float
    log_W: float
    hit: bool
    censor_time: float


@dataclass(frozen=True)
class HitSampleSet:
    """I.i.d. (H, log E_H, hit) samples of paths from ``source`` to ``target``."""

    source: float
    target: float
    H: np.ndarray  # nan where censored
    log_W: np.ndarray  # nan where censored
    hit: np.ndarray
    censor_time: float
    seed: int
    model_label: str = ""

    def __post_init__(self):
        if self.H.size < 1:
            raise ValueError("a HitSampleSet needs at least one sample")

    @property
    def N(self) -> int:
        return int(self.H.size)

    @property
    def hit_fraction(self) -> float:
        return float(np.mean(self.hit))

    @property
    def samples(self) -> list[HitSample]:
        return [HitSample(self.target, float(h), float(w), bool(b), self.censor_time)
                for h, w, b in zip(self.H, self.log_W, self.hit)]


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    def __iter__(self):
        yield self.mean
        yield self.stderr


def estimate(values: np.ndarray) -> Estimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(np.mean(values))
    # values equal up to rounding (e.g. f = id under linear growth) are a zero-variance sample
    if n < 2 or np.ptp(values) <= 16 * np.finfo(float).eps * abs(mean):
        return Estimate(mean, 0.0, n)
    return Estimate(mean, float(np.std(values, ddof=1) / math.sqrt(n)), n)


# -- tilt description shared with the tilt module -----------------------------


@dataclass(frozen=True)
class Tilt:
    """Jump-kernel reweighting by ``ell(y)/ell(x)``.

    ``kind == "power"`` means ``ell(x) = x^exponent`` (up to a constant);
    ``kind == "table"`` interpolates ``log ell`` linearly in ``log x`` over the
    nodes ``tz`` with constant extrapolation.
    """

    kind: str
    exponent: float = 0.0
    tz: np.ndarray = field(default_factory=lambda: np.zeros(1))
    tl: np.ndarray = field(default_factory=lambda: np.zeros(1))
    safety: float = 1.05

    def __post_init__(self):
        if self.kind == "power" and self.exponent < 0:
            raise BoundViolated("ell(x) = x^e with e < 0 is unbounded below the current mass")
        if self.kind == "table":
            if self.tz.size < 1 or np.any(np.diff(self.tz) <= 0):
                raise ValueError("tilt table nodes must be strictly increasing")
            if np.ptp(self.tl) == 0.0:
                object.__setattr__(self, "safety", 1.0)

    @property
    def tpm(self) -> np.ndarray:
        return np.maximum.accumulate(self.tl)

    @property
    def log_bmax(self) -> float:
        if self.kind != "table":
            return 0.0
        return math.log(self.safety) + float(np.max(self.tl) - np.min(self.tl))

    def log_ell(self, z: float) -> float:
        if self.kind == "power":
            return self.exponent * z
        return float(np.interp(z, self.tz, self.tl))

    def log_bound(self, z: float) -> float:
        if self.kind != "table":
            return 0.0
        lz = self.log_ell(z)
        j = int(np.searchsorted(self.tz, z)) - 1
        m = max(lz, self.tpm[j]) if j >= 0 else lz
        return math.log(self.safety) + m - lz


_NO_TABLE = np.zeros(1)


def _fast(model: ValidatedModel) -> bool:
    f = model.frag
    return (isinstance(model.growth, LinearGrowth) and isinstance(f.rate, (ConstantRate, SaturatingRate))
            and isinstance(f.ratio, PowerBetaRatio))


def pack(model: ValidatedModel, tilt: Tilt | None = None):
    """Kernel parameter vector and tilt tables."""
    rate = model.frag.rate
    P = np.zeros(10)
    P[0] = model.growth.a
    if isinstance(rate, SaturatingRate):
        P[1], P[2], P[3] = 1.0, rate.b, rate.gamma0
    else:
        P[1], P[2] = 0.0, rate.b
    P[4] = model.Ksup
    P[5] = model.frag.ratio.beta
    P[8] = model.Ksup
    P[9] = 1.0
    tz = tl = tpm = _NO_TABLE
    if tilt is not None:
        P[6] = 1.0 if tilt.kind == "table" else 2.0
        P[7] = tilt.exponent
        P[8] = model.Ksup * math.exp(tilt.log_bmax)
        P[9] = tilt.safety
        if tilt.kind == "table":
            tz, tl, tpm = (np.ascontiguousarray(tilt.tz, dtype=float), np.ascontiguousarray(tilt.tl, dtype=float),
                           np.ascontiguousarray(tilt.tpm, dtype=float))
    return P, tz, tl, tpm


def _check(stat: np.ndarray):
    if np.any(stat == kern.BOUND_VIOLATED):
        raise BoundViolated(f"{int(np.sum(stat == kern.BOUND_VIOLATED))} paths proposed a tilted jump "
                            "above the thinning bound; refine the ell table")


# -- flow ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExactFlow:
    """Closed-form flow of ``dx/dt = a x``."""

    a: float

    def advance(self, z: float, dt: float) -> float:
        return z + self.a * dt

    def time_to_reach(self, z: float, zy: float) -> float:
        return (zy - z) / self.a

    def log_E(self, z0: float, z1: float, dt: float) -> float:
        return self.a * dt


@dataclass(frozen=True)
class NumericFlow:
    """RK4 in log-mass for a general growth rate, crossing times by quadrature."""

    cbar: Callable[[float], float]
    rk4_step: float = 1e-2
    quad_tol: float = 1e-12
    max_steps: int = 10_000_000

    def _rhs(self, z: float) -> float:
        return self.cbar(math.exp(z))

    def advance(self, z: float, dt: float) -> float:
        if dt <= 0:
            return z
        n = int(math.ceil(dt / self.rk4_step))
        if n > self.max_steps:
            raise FlowDiverged(f"flow over dt={dt} needs {n} RK4 steps")
        h = dt / n
        f = self._rhs
        for _ in range(n):
            k1 = f(z)
            k2 = f(z + 0.5 * h * k1)
            k3 = f(z + 0.5 * h * k2)
            k4 = f(z + h * k3)
            z += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            if not math.isfinite(z):
                raise FlowDiverged("log-mass left the finite range")
        return z

    def time_to_reach(self, z: float, zy: float) -> float:
        val, _ = integrate.quad(lambda u: 1.0 / self._rhs(u), z, zy, epsabs=0.0, epsrel=self.quad_tol,
                                limit=200)
        return val

    def log_E(self, z0: float, z1: float, dt: float) -> float:
        # along a flow segment int cbar ds = log(x1/x0)
        return z1 - z0


def flow_solver(model: ValidatedModel, rk4_step: float = 1e-2):
    if isinstance(model.growth, LinearGrowth):
        return ExactFlow(model.growth.a)
    g = model.growth
    return NumericFlow(lambda x: float(g.c(x)) / x, rk4_step=rk4_step)


def flow_map(model: ValidatedModel, x: float, dt: float) -> float:
    """Mass after following ``dx/dt = c(x)`` for ``dt`` from ``x``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return x
    if isinstance(model.growth, LinearGrowth):
        return x * math.exp(model.growth.a * dt)
    return math.exp(flow_solver(model).advance(math.log(x), dt))


def time_to_reach(model: ValidatedModel, x: float, y: float) -> float:
    """Flow time from ``x`` up to ``y >= x``."""
    if y < x:
        raise ValueError("the flow only increases mass")
    return flow_solver(model).time_to_reach(math.log(x), math.log(y))


# -- pure-Python engine --------------------------------------------------------


class _PyEngine:
    """Reference event loop for arbitrary growth (and for cross-checking kernels)."""

    def __init__(self, model: ValidatedModel, tilt: Tilt | None = None, flow=None):
        self.model = model
        self.flow = flow or flow_solver(model)
        self.tilt = tilt
        self.lam = model.Ksup * (math.exp(tilt.log_bmax) if tilt is not None else 1.0)
        self.ratio = model.frag.ratio

    def _wait(self, rs: Stream) -> float:
        u = rs.uniform()
        return math.inf if self.lam <= 0 else -math.log(u) / self.lam

    def _log_ratio(self, rs: Stream, z: float) -> float:
        u = rs.uniform()
        if isinstance(self.ratio, PowerBetaRatio):
            return math.log(u) / self.ratio.beta
        return math.log(_sample_custom(self.ratio, u, math.exp(z)))

    def _candidate(self, rs: Stream, z: float):
        u = rs.uniform()
        lv = self._log_ratio(rs, z)
        k = float(self.model.K(math.exp(z)))
        if self.tilt is None:
            return u * self.lam < k, lv
        lr = self.tilt.log_ell(z + lv) - self.tilt.log_ell(z)
        lb = self.tilt.log_bound(z)
        if lr > lb + 1e-12 or k * math.exp(lb) > self.lam * (1 + 1e-12):
            raise BoundViolated(f"proposal ratio exp({lr:.4g}) above bound exp({lb:.4g}) at x={math.exp(z):.4g}")
        return u * self.lam < k * math.exp(lr), lv

    def path(self, seed: int, index: int, x: float, t_end: float) -> Trajectory:
        rs = Stream(seed, index)
        z0 = z = math.log(x)
        t = 0.0
        log_e = 0.0
        times, pre, post = [], [], []
        while True:
            e = self._wait(rs)
            if t + e >= t_end:
                z1 = self.flow.advance(z, t_end - t)
                log_e += self.flow.log_E(z, z1, t_end - t)
                z = z1
                break
            z1 = self.flow.advance(z, e)
            log_e += self.flow.log_E(z, z1, e)
            t, z = t + e, z1
            acc, lv = self._candidate(rs, z)
            if acc:
                times.append(t)
                pre.append(math.exp(z))
                post.append(math.exp(z + lv))
                z += lv
        if isinstance(self.flow, NumericFlow):
            # product identity: log(end/start) + sum log(pre/post)
            log_e = (z - z0) - float(np.sum(np.log(np.asarray(post) / np.asarray(pre)))) if pre else z - z0
        return Trajectory(x, np.array(times), np.array(pre), np.array(post), t_end, math.exp(z), log_e)

    def hit(self, seed: int, index: int, x: float, y: float, t_max: float):
        """(H, log_W, hit) for the first up-crossing of y."""
        rs = Stream(seed, index)
        z0 = z = math.log(x)
        zy = math.log(y)
        t = 0.0
        sum_jumps = 0.0
        while True:
            e = self._wait(rs)
            if z < zy:
                ttr = self.flow.time_to_reach(z, zy)
                if ttr <= e:
                    if t + ttr <= t_max:
                        if isinstance(self.flow, ExactFlow):
                            return t + ttr, self.flow.a * (t + ttr), True
                        return t + ttr, (zy - z0) - sum_jumps, True
                    return math.nan, math.nan, False
            if t + e > t_max:
                return math.nan, math.nan, False
            t, z = t + e, self.flow.advance(z, e)
            acc, lv = self._candidate(rs, z)
            if acc:
                z += lv
                sum_jumps += lv

    def observe(self, seed: int, index: int, x: float, times: np.ndarray):
        """Log-mass and log E at each of the sorted ``times``."""
        rs = Stream(seed, index)
        z = math.log(x)
        t = 0.0
        log_e = 0.0
        zs = np.empty(times.size)
        les = np.empty(times.size)
        j = 0
        while j < times.size:
            e = self._wait(rs)
            while j < times.size and times[j] <= t + e:
                zj = self.flow.advance(z, times[j] - t)
                zs[j] = zj
                les[j] = log_e + self.flow.log_E(z, zj, times[j] - t)
                j += 1
            if j == times.size:
                break
            z1 = self.flow.advance(z, e)
            log_e += self.flow.log_E(z, z1, e)
            t, z = t + e, z1
            acc, lv = self._candidate(rs, z)
            if acc:
                z += lv
        return zs, les

    def excursion(self, seed: int, index: int, x0: float, t_max: float, fs):
        """Integrals of each f over one excursion from x0 (per-segment quadrature)."""
        rs = Stream(seed, index)
        z0 = z = math.log(x0)
        t = 0.0
        acc_i = np.zeros(len(fs))

        def seg(za, zb):
            # ds = dz / cbar(e^z) along the flow
            for k, f in enumerate(fs):
                acc_i[k] += integrate.quad(lambda u: f(math.exp(u)) / self.flow_cbar(u), za, zb, limit=200)[0]

        while True:
            e = self._wait(rs)
            if z < z0:
                ttr = self.flow.time_to_reach(z, z0)
                if ttr <= e and t + ttr <= t_max:
                    seg(z, z0)
                    return acc_i, t + ttr, True
            if t + e > t_max:
                z1 = self.flow.advance(z, t_max - t)
                seg(z, z1)
                return acc_i, t_max, False
            z1 = self.flow.advance(z, e)
            seg(z, z1)
            t, z = t + e, z1
            ok, lv = self._candidate(rs, z)
            if ok:
                z += lv

    def flow_cbar(self, z: float) -> float:
        if isinstance(self.flow, ExactFlow):
            return self.flow.a
        return self.flow._rhs(z)


def _sample_custom(ratio, u: float, x: float) -> float:
    """Inverse-CDF draw from a custom ratio density by bisection."""
    from scipy.optimize import brentq

    cdf = lambda v: integrate.quad(lambda w: ratio.density(w, x), 0.0, v, limit=200)[0] - u
    return brentq(cdf, 1e-300, 1.0, xtol=1e-14)


# -- public operations -------------------------------------------------------


def simulate_path(model: ValidatedModel, x: float, t_end: float, seed: int = 0, index: int = 0,
                  tilt: Tilt | None = None) -> Trajectory:
    """One exact-in-law trajectory of X (or of the tilted process when ``tilt`` is given)."""
    if not x > 0 or t_end < 0:
        raise ValueError("need x > 0 and t_end >= 0")
    if not _fast(model):
        return _PyEngine(model, tilt).path(seed, index, x, t_end)
    P, tz, tl, tpm = pack(model, tilt)
    cap = 64
    while True:
        buf = np.empty(cap), np.empty(cap), np.empty(cap)
        z, n, st = kern.path_record(P, tz, tl, tpm, seed_word(seed), index, math.log(x), float(t_end), *buf)
        if n <= cap:
            break
        cap = 2 * n
    _check(np.array([st]))
    a = model.growth.a
    return Trajectory(x, buf[0][:n].copy(), np.exp(buf[1][:n]), np.exp(buf[2][:n]), float(t_end),
                      math.exp(z), a * t_end)


@dataclass(frozen=True)
class PathBatch:
    """End states of ``n`` independent paths observed at ``times``."""

    times: np.ndarray
    log_mass: np.ndarray  # (n, len(times))
    log_E: np.ndarray  # (n, len(times))
    n_events: np.ndarray  # events before the last time

    @property
    def mass(self) -> np.ndarray:
        return np.exp(self.log_mass)


def simulate_paths(model: ValidatedModel, x: float, times, n: int, seed: int = 0,
                   tilt: Tilt | None = None, offset: int = 0) -> PathBatch:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be sorted and non-negative")
    if not _fast(model):
        eng = _PyEngine(model, tilt)
        Z = np.empty((n, times.size))
        LE = np.empty((n, times.size))
        for i in range(n):
            Z[i], LE[i] = eng.observe(seed, offset + i, x, times)
        return PathBatch(times, Z, LE, np.full(n, -1))
    P, tz, tl, tpm = pack(model, tilt)
    Z = np.empty((n, times.size))
    nev = np.empty(n, dtype=np.int64)
    stat = np.empty(n, dtype=np.int8)
    kern.observe(P, tz, tl, tpm, seed_word(seed), offset, math.log(x), times, Z, nev, stat)
    _check(stat)
    LE = np.broadcast_to(model.growth.a * times, Z.shape)
    return PathBatch(times, Z, LE, nev)


def sample_hitting(model: ValidatedModel, x: float, y: float, T_max: float, seed: int = 0,
                   index: int = 0, tilt: Tilt | None = None) -> HitSample:
    """Hitting time of ``y`` from ``x`` and ``log E`` at that time (one path)."""
    s = sample_hitting_set(model, x, y, 1, T_max, seed, tilt=tilt, offset=index)
    return s.samples[0]


def sample_hitting_set(model: ValidatedModel, x: float, y: float, n: int, T_max: float, seed: int = 0,
                       tilt: Tilt | None = None, offset: int = 0) -> HitSampleSet:
    if not (x > 0 and y > 0 and T_max > 0 and n >= 1):
        raise ValueError("need x, y, T_max > 0 and n >= 1")
    if not _fast(model):
        eng = _PyEngine(model, tilt)
        rows = [eng.hit(seed, offset + i, x, y, T_max) for i in range(n)]
        H, W, hit = (np.array(c) for c in zip(*rows))
        return HitSampleSet(x, y, H.astype(float), W.astype(float), hit.astype(bool), float(T_max), seed,
                            model.label)
    P, tz, tl, tpm = pack(model, tilt)
    H = np.empty(n)
    hit = np.empty(n, dtype=np.bool_)
    stat = np.empty(n, dtype=np.int8)
    kern.hitting(P, tz, tl, tpm, seed_word(seed), offset, math.log(x), math.log(y), float(T_max), H, hit, stat)
    _check(stat)
    return HitSampleSet(x, y, H, model.growth.a * H, hit, float(T_max), seed, model.label)


def _vector_f(f):
    def call(x):
        out = f(x)
        if np.ndim(out) == 0:
            return np.vectorize(f, otypes=[float])(x)
        return np.asarray(out, dtype=float)

    return call


def feynman_kac(model: ValidatedModel, x: float, t: float, f, N: int, seed: int = 0) -> Estimate:
    """Monte Carlo estimate of ``T_t f(x) = x E_x[E_t f(X_t) / X_t]``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    batch = simulate_paths(model, x, [t], N, seed)
    X = batch.mass[:, 0]
    vals = x * np.exp(batch.log_E[:, 0]) * _vector_f(f)(X) / X
    return estimate(vals)


def write_trajectories_csv(path, trajectories: list[Trajectory]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "event_time", "pre_mass", "post_mass"])
        for pid, tr in enumerate(trajectories):
            for t, a, b in tr.events:
                w.writerow([pid, repr(t), repr(a), repr(b)])
