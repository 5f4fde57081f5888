"""Foster-Lyapunov drift checks for linear growth.

With ``V(x) = x^-B`` below 1 and ``x^A`` above 2, the drift ratio
``G V / V`` tends to

    a A - beta_inf (1 - M(A))          as x -> infinity (gamma_inf = 0),
    -a B + beta_0 (M(-B) - 1)          as x -> 0       (gamma_0 = 0),

and to ``-a B`` at 0 when ``gamma_0 > 0``.  A model is certified when the
drift ratio is negative off a compact centre, checked on a grid with a
margin for the variation between nodes, and both limits are negative.

The published sufficient condition for the small-x side is stated as
``a/beta_0 < (M(-B) - 1)/B``; the brace above is negative near 0 exactly
when the reverse inequality holds.  Both are reported and the direct
sign is used for the verdict.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .model import (ConstantRate, Diverged, LinearGrowth, PowerBetaRatio, SaturatingRate, ValidatedModel,
                    moment_sup)


class ErgoError(Exception):
    pass


class MomentDiverged(ErgoError):
    pass


_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class LyapunovSpec:
    """``V`` with a quintic bridge in ``s = log x`` for ``log V`` on [1, 2].

    The bridge matches value, slope and curvature of ``log V`` at both ends,
    so V is C2 and positive.  It cannot be monotone: ``log V`` leaves 1 with
    slope ``-B`` and reaches 2 with slope ``A``.
    """

    A: float
    B: float
    coef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise ValueError("A and B must be positive")
        L = _LOG2
        # p(s) = sum c_k s^k with p(0)=0, p'(0)=-B, p''(0)=0, p(L)=A L, p'(L)=A, p''(L)=0
        rows = [[1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0],
                [1, L, L**2, L**3, L**4, L**5], [0, 1, 2 * L, 3 * L**2, 4 * L**3, 5 * L**4],
                [0, 0, 2, 6 * L, 12 * L**2, 20 * L**3]]
        rhs = [0.0, -self.B, 0.0, self.A * L, self.A, 0.0]
        object.__setattr__(self, "coef", np.linalg.solve(np.array(rows, dtype=float), np.array(rhs)))

    def log_V(self, x):
        s = np.log(np.asarray(x, dtype=float))
        mid = np.polynomial.polynomial.polyval(np.clip(s, 0.0, _LOG2), self.coef)
        return np.where(s <= 0, -self.B * s, np.where(s >= _LOG2, self.A * s, mid))

    def V(self, x):
        out = np.exp(self.log_V(x))
        return float(out) if out.ndim == 0 else out

    def dlogV_ds(self, x):
        s = np.log(np.asarray(x, dtype=float))
        d = np.polynomial.polynomial.polyder(self.coef)
        mid = np.polynomial.polynomial.polyval(np.clip(s, 0.0, _LOG2), d)
        return np.where(s <= 0, -self.B, np.where(s >= _LOG2, self.A, mid))

    def dV(self, x):
        x = np.asarray(x, dtype=float)
        out = self.V(x) * self.dlogV_ds(x) / x
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AssumptionReport:
    A: float
    B: float
    M_A: float
    M_minus_B: float
    beta0: float
    gamma0: float
    beta_inf: float
    gamma_inf: float
    paper_conditions: dict
    drift_conditions: dict
    discrepancy: bool

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("A", "B", "M_A", "M_minus_B", "beta0", "gamma0", "beta_inf",
                                               "gamma_inf", "paper_conditions", "drift_conditions",
                                               "discrepancy")}


def _linear_a(model: ValidatedModel) -> float:
    if not isinstance(model.growth, LinearGrowth):
        raise ErgoError("the drift check is stated for linear growth c(x) = a x")
    return model.growth.a


def _asymptotics(model: ValidatedModel, exponents=None):
    if exponents is not None:
        return tuple(float(e) for e in exponents)
    rate = model.frag.rate
    if isinstance(rate, (ConstantRate, SaturatingRate)):
        return rate.asymptotics()
    raise ErgoError("rate family has no known asymptotics; pass exponents=(beta0, gamma0, beta_inf, gamma_inf)")


def check_assumptions(model: ValidatedModel, A: float, B: float, exponents=None) -> AssumptionReport:
    """Moment conditions, rate asymptotics, the printed sufficient conditions and the direct drift limits."""
    a = _linear_a(model)
    try:
        MA = moment_sup(model, A)
        MB = moment_sup(model, -B)
    except Diverged as exc:
        raise MomentDiverged(str(exc)) from exc
    if not math.isfinite(MB):
        raise MomentDiverged(f"M(-{B}) is infinite")
    b0, g0, binf, ginf = _asymptotics(model, exponents)

    tail_printed = ginf == 0 and binf > 0 and a / binf < (1.0 - MA) / A
    if g0 > 0:
        small_printed = True
    else:
        small_printed = g0 == 0 and b0 > 0 and a / b0 < (MB - 1.0) / B
    stated = {
        "M(A)<1": MA < 1.0,
        "M(-B)<inf": True,
        "gamma_inf==0 and a/beta_inf<(1-M(A))/A": bool(tail_printed),
        "gamma0>0 or (gamma0==0 and a/beta0<(M(-B)-1)/B)": bool(small_printed),
        "all": bool(MA < 1.0 and tail_printed and small_printed),
    }

    large = a * A - binf * (1.0 - MA) if ginf == 0 else (a * A if ginf < 0 else -math.inf)
    small = -a * B if g0 > 0 else -a * B + b0 * (MB - 1.0)
    drift = {
        "large_x_brace_limit": large,
        "small_x_brace_limit": small,
        "large_x_negative": bool(large < 0),
        "small_x_negative": bool(small < 0),
        "all": bool(large < 0 and small < 0),
    }
    return AssumptionReport(A, B, MA, MB, b0, g0, binf, ginf, stated, drift,
                            discrepancy=bool(small_printed != (small < 0)))


def _mean_V_after_jump(spec: LyapunovSpec, model: ValidatedModel, x: float) -> float:
    """``int_0^1 V(x v) q_x(v) dv``."""
    ratio = model.frag.ratio
    A, B = spec.A, spec.B
    v1 = min(1.0, 1.0 / x)
    v2 = min(1.0, 2.0 / x)
    if isinstance(ratio, PowerBetaRatio):
        be = ratio.beta
        if B >= be:
            raise MomentDiverged(f"int v^-B q(v) dv diverges for B={B} >= beta={be}")
        low = x ** -B * be / (be - B) * v1 ** (be - B)
        high = x ** A * be / (A + be) * (1.0 - v2 ** (A + be)) if v2 < 1 else 0.0
        mid = 0.0
        if v2 > v1:
            mid = integrate.quad(lambda v: spec.V(x * v) * be * v ** (be - 1), v1, v2, epsabs=0, epsrel=1e-12)[0]
        return low + mid + high
    q = lambda v: ratio.density(v, x)
    tot = 0.0
    for lo, hi in ((0.0, v1), (v1, v2), (v2, 1.0)):
        if hi > lo:
            tot += integrate.quad(lambda v: spec.V(x * v) * q(v), lo, hi, epsabs=0, epsrel=1e-10, limit=200)[0]
    return tot


def generator_V(model: ValidatedModel, spec: LyapunovSpec, x) -> np.ndarray:
    """``G V(x) = c(x) V'(x) + K(x) (E V(x V) - V(x))``."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    jump = np.array([_mean_V_after_jump(spec, model, float(xi)) for xi in xs])
    out = model.c(xs) * spec.dV(xs) + model.K(xs) * (jump - spec.V(xs))
    return out if np.ndim(x) else float(out[0])


@dataclass(frozen=True)
class DriftResult:
    x: np.ndarray
    ratio: np.ndarray  # G V / V
    certified: bool
    alpha: float
    delta: float
    margin: float
    center: tuple[float, float]
    violations: list
    limits: dict

    @property
    def status(self) -> str:
        return "Certified" if self.certified else "NotCertified"

    def as_dict(self) -> dict:
        return {"status": self.status, "alpha": self.alpha, "delta": self.delta, "margin": self.margin,
                "center": list(self.center), "violating_intervals": self.violations, "limits": self.limits}


def _intervals(x: np.ndarray, mask: np.ndarray) -> list:
    out = []
    i = 0
    while i < mask.size:
        if mask[i]:
            j = i
            while j + 1 < mask.size and mask[j + 1]:
                j += 1
            out.append([float(x[i]), float(x[j])])
            i = j + 1
        else:
            i += 1
    return out


def drift_profile(model: ValidatedModel, spec: LyapunovSpec, grid=None, center=(1e-2, 1e2),
                  exponents=None) -> DriftResult:
    """``G V / V`` on a grid and the best (alpha, delta) certified on it.

    alpha is minus the largest drift ratio off the centre, less half the
    largest jump of the ratio between neighbouring nodes; delta covers the
    centre.  Both asymptotic braces must also be negative."""
    grid = np.geomspace(1e-4, 1e4, 401) if grid is None else np.asarray(grid, dtype=float)
    gv = generator_V(model, spec, grid)
    V = spec.V(grid)
    r = gv / V
    lo, hi = center
    outside = (grid < lo) | (grid > hi)
    # between-node variation only matters where the bound is claimed
    pair = outside[1:] | outside[:-1]
    margin = 0.5 * float(np.max(np.abs(np.diff(r))[pair])) if np.any(pair) else 0.0
    rep = check_assumptions(model, spec.A, spec.B, exponents)
    limits = {"large_x": rep.drift_conditions["large_x_brace_limit"],
              "small_x": rep.drift_conditions["small_x_brace_limit"]}
    worst = float(np.max(r[outside])) if np.any(outside) else -math.inf
    alpha = -worst - margin
    bad = outside & (r + margin >= 0)
    certified = bool(alpha > 0 and rep.drift_conditions["all"])
    if certified:
        delta = max(0.0, float(np.max((gv + alpha * V)[~outside]))) if np.any(~outside) else 0.0
    else:
        alpha, delta = max(alpha, 0.0), math.nan
    return DriftResult(grid, r, certified, float(alpha), delta, margin, (lo, hi), _intervals(grid, bad), limits)
