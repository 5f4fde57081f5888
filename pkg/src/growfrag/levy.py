"""Closed forms for linear growth with constant rate and Beta ratio law.

With ``c(x) = a x``, ``K = lam`` and ``V ~ beta v^(beta-1)``, log X is a
compound-Poisson process with drift.  Its Laplace exponent is

    psi(theta) = a theta - lam theta / (beta + theta),   theta > -beta,

the cumulant of the mean-field operator is ``kappa(theta) = psi(theta - 1) + a``
and ``A x^theta = kappa(theta) x^theta``.  These formulas serve as the
reference values for every Monte Carlo estimator in the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .model import ConstantRate, LinearGrowth, PowerBetaRatio, ValidatedModel


class LevyError(Exception):
    pass


class OutOfDomain(LevyError):
    pass


class DriftZero(LevyError):
    """The minimiser of kappa sits at 1, i.e. lam = a beta."""


@dataclass(frozen=True)
class LevyParams:
    a: float
    lam: float
    beta: float

    def __post_init__(self):
        if not (self.a > 0 and self.lam > 0 and self.beta > 0):
            raise ValueError("a, lam and beta must all be positive")

    @classmethod
    def from_model(cls, model: ValidatedModel) -> "LevyParams":
        f = model.frag
        if not (isinstance(model.growth, LinearGrowth) and isinstance(f.rate, ConstantRate)
                and isinstance(f.ratio, PowerBetaRatio)):
            raise ValueError("closed forms need linear growth, constant rate and a Beta ratio law")
        return cls(model.growth.a, f.rate.b, f.ratio.beta)


def _dom(p: LevyParams, theta):
    if np.any(np.asarray(theta) <= -p.beta):
        raise OutOfDomain(f"psi is only defined for theta > -beta = {-p.beta}")


def psi(p: LevyParams, theta):
    _dom(p, theta)
    return p.a * theta - p.lam * theta / (p.beta + theta)


def dpsi(p: LevyParams, theta):
    _dom(p, theta)
    return p.a - p.lam * p.beta / (p.beta + theta) ** 2


def d2psi(p: LevyParams, theta):
    _dom(p, theta)
    return 2.0 * p.lam * p.beta / (p.beta + theta) ** 3


def kappa(p: LevyParams, theta):
    return psi(p, theta - 1.0) + p.a


def dkappa(p: LevyParams, theta):
    return dpsi(p, theta - 1.0)


def d2kappa(p: LevyParams, theta):
    return d2psi(p, theta - 1.0)


@dataclass(frozen=True)
class Theta0:
    theta0: float
    rho: float

    def __iter__(self):
        yield self.theta0
        yield self.rho


def theta0_rho(p: LevyParams) -> Theta0:
    """Minimiser of kappa and the spectral radius ``kappa(theta0)``."""
    root = math.sqrt(p.lam * p.beta / p.a)
    theta0 = 1.0 - p.beta + root
    if abs(theta0 - 1.0) <= 1e-14 * max(1.0, p.beta):
        raise DriftZero("lam = a beta puts the minimiser of kappa at 1; this boundary case is excluded")
    rho = float(kappa(p, theta0))
    assert rho < p.a, "the minimum of kappa cannot exceed kappa(1) = a"
    return Theta0(theta0, rho)


def Phi(p: LevyParams, q: float, tol: float = 1e-15, max_iter: int = 200) -> float:
    """Largest root of ``psi(theta) = q``.

    Safeguarded Newton on the increasing branch ``theta >= theta0 - 1``.
    """
    th0, _ = theta0_rho(p)
    lo = th0 - 1.0
    qmin = float(psi(p, lo))
    # rounding can put q = rho - a a hair below the minimum
    slack = 1e-13 * max(1.0, abs(qmin), p.a, p.lam)
    if q < qmin - slack:
        raise OutOfDomain(f"psi(theta) = {q} has no solution; its minimum is {qmin}")
    if q - qmin <= slack:
        return lo
    # psi(theta) >= a theta - lam for theta >= 0, so this bracket is valid
    hi = max(lo + 1.0, (q + p.lam) / p.a + 1.0)
    while psi(p, hi) < q:
        hi = 2.0 * hi + 1.0
    x = lo + 1.0 if psi(p, lo + 1.0) >= q else hi
    for _ in range(max_iter):
        f = float(psi(p, x)) - q
        if f > 0:
            hi = x
        else:
            lo = x
        d = float(dpsi(p, x))
        step = f / d if d > 0 else math.inf
        nx = x - step
        if not (lo < nx < hi):
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= tol * max(1.0, abs(x)):
            return nx
        x = nx
    return x


def L_closed(p: LevyParams, q: float) -> float:
    """First-return Laplace functional ``1 - psi'(Phi(q - a))`` for ``q >= rho``."""
    _, rho = theta0_rho(p)
    if q < rho - 1e-14:
        raise OutOfDomain(f"the first-return functional is only closed-form for q >= rho = {rho}")
    return 1.0 - float(dpsi(p, Phi(p, q - p.a)))


def ell_closed(p: LevyParams, x, x0: float = 1.0):
    """Eigenfunction ``(x/x0)^(theta0 - 1)``."""
    th0, _ = theta0_rho(p)
    return (np.asarray(x, dtype=float) / x0) ** (th0 - 1.0)


def profile_integral(p: LevyParams, f, support: tuple[float, float] | None = None) -> float:
    """``int f(y) y^-(theta0 + 1) dy``, by quadrature in log y."""
    th0, _ = theta0_rho(p)
    if support is None:
        support = getattr(f, "support", (0.0, math.inf))
    lo, hi = support
    ulo = math.log(lo) if lo > 0 else -math.inf
    uhi = math.log(hi) if math.isfinite(hi) else math.inf
    val, _ = integrate.quad(lambda u: float(f(math.exp(u))) * math.exp(-th0 * u), ulo, uhi,
                            epsabs=1e-13, epsrel=1e-11, limit=400)
    return val


def asymptotic_value(p: LevyParams, t: float, f, x: float, support=None) -> float:
    """Local-CLT equivalent of ``T_t f(x)`` as ``t`` grows."""
    th0, rho = theta0_rho(p)
    integral = profile_integral(p, f, support)
    if integral == 0.0:
        return 0.0
    k2 = float(d2kappa(p, th0))
    return x ** th0 * math.exp(t * rho) / math.sqrt(2.0 * math.pi * t * k2) * integral


def oracle_summary(p: LevyParams, qs=(1.0, 1.25, 1.5, 2.0)) -> dict:
    th0, rho = theta0_rho(p)
    return {
        "a": p.a, "lambda": p.lam, "beta": p.beta,
        "theta0": th0, "rho": rho, "kappa2_theta0": float(d2kappa(p, th0)),
        "L": [{"q": float(q), "L": L_closed(p, q)} for q in qs if q >= rho],
    }
