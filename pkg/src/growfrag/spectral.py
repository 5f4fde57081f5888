"""Estimators built on hitting samples: L(q), rho, -L'(rho), ell and nu.

For a fixed sample of (H, log W) pairs the map

    q -> L_hat(q) = (1/N) sum_{hit} exp(log W_i - q H_i)

is deterministic, continuous and strictly decreasing, so the spectral
radius estimate is found by plain bisection on one reused sample (common
random numbers).  Censored paths contribute zero, which biases L_hat and
hence rho_hat downwards; hit and censor fractions are reported with every
estimate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import pdmp
from .model import ValidatedModel
from .pdmp import Estimate, HitSampleSet
from .rng import derive_seed


class SpectralError(Exception):
    pass


class NoHits(SpectralError):
    pass


class BracketFailure(SpectralError):
    pass


class DivergentDerivative(SpectralError):
    pass


def _exponents(s: HitSampleSet, q: float) -> np.ndarray:
    return s.log_W[s.hit] - q * s.H[s.hit]


def log_laplace(s: HitSampleSet, q: float) -> float:
    """``log L_hat(q)``; ``-inf`` when nothing hit."""
    x = _exponents(s, q)
    if x.size == 0:
        return -math.inf
    return float(logsumexp(x)) - math.log(s.N)


def _mean_and_stderr(log_terms: np.ndarray, n: int) -> Estimate:
    """Mean and standard error of ``n`` values of which the nonzero ones are ``exp(log_terms)``."""
    if log_terms.size == 0:
        return Estimate(0.0, 0.0, n)
    m = float(np.max(log_terms))
    if not math.isfinite(m):
        return Estimate(math.inf, math.inf, n)
    v = np.exp(log_terms - m)
    s1 = float(np.sum(v)) / n
    mean = s1 * math.exp(m) if m < 709 else math.inf
    if n < 2 or (log_terms.size == n and np.ptp(log_terms) == 0.0):
        return Estimate(mean, 0.0, n)
    s2 = float(np.sum(v * v)) / n
    var = max(s2 - s1 * s1, 0.0) * n / (n - 1)
    se = math.sqrt(var / n) * math.exp(m) if m < 709 else math.inf
    return Estimate(mean, se, n)


def laplace_estimate(s: HitSampleSet, q: float) -> Estimate:
    """``(1/N) sum_{hit} exp(log W - q H)`` with its standard error."""
    return _mean_and_stderr(_exponents(s, q), s.N)


@dataclass(frozen=True)
class DerivativeEstimate:
    value: float
    stderr: float
    divergent: bool
    top_share: float

    def __iter__(self):
        yield self.value
        yield self.stderr


def laplace_derivative(s: HitSampleSet, q: float, top: float = 0.01, share: float = 0.5) -> DerivativeEstimate:
    """``-L_hat'(q) = (1/N) sum_{hit} H exp(log W - q H)``.

    ``divergent`` is set when the largest ``top`` fraction of the N terms
    carries more than ``share`` of their sum, a finite-sample sign of an
    infinite mean.
    """
    h = s.H[s.hit]
    lt = _exponents(s, q) + np.log(h)
    est = _mean_and_stderr(lt, s.N)
    if lt.size == 0:
        return DerivativeEstimate(0.0, 0.0, False, 0.0)
    k = max(1, int(math.ceil(top * s.N)))
    srt = np.sort(lt)[::-1]
    top_share = float(math.exp(logsumexp(srt[:k]) - logsumexp(srt)))
    return DerivativeEstimate(est.mean, est.stderr, top_share > share, top_share)


@dataclass(frozen=True)
class SpectralEstimate:
    rho_hat: float
    ci95: tuple[float, float]
    stderr: float
    L_at_rho: float
    minus_Lprime_at_rho: float
    divergent: bool
    hit_fraction: float
    censor_fraction: float
    N: int
    T_max: float
    seed: int
    # censored paths count as zero, so rho_hat is biased low
    bias_direction: str = "down"

    def as_row(self) -> dict:
        return {"rho_hat": self.rho_hat, "ci_lo": self.ci95[0], "ci_hi": self.ci95[1], "L_at_rho": self.L_at_rho,
                "minus_Lprime": self.minus_Lprime_at_rho, "hit_fraction": self.hit_fraction, "N": self.N,
                "T_max": self.T_max, "seed": self.seed}


def find_rho(s: HitSampleSet, cbar_sup: float, tol: float = 1e-8, margin: float = 1.0) -> SpectralEstimate:
    """Root of ``L_hat(q) = 1`` by bisection on a single sample (source = target)."""
    if not np.any(s.hit):
        raise NoHits(f"all {s.N} paths censored at T_max={s.censor_time}")
    q_lo = -cbar_sup - 100.0
    if log_laplace(s, q_lo) <= 0.0:
        raise BracketFailure(f"L_hat({q_lo}) <= 1; no root below")
    # log W <= cbar_sup H on every path, so L_hat(cbar_sup) <= hit fraction <= 1
    q_hi = cbar_sup + margin
    if log_laplace(s, q_hi) > 0.0:
        raise BracketFailure(f"L_hat({q_hi}) > 1; sample inconsistent with the growth bound")
    while q_hi - q_lo > tol:
        mid = 0.5 * (q_lo + q_hi)
        if log_laplace(s, mid) > 0.0:
            q_lo = mid
        else:
            q_hi = mid
    rho = 0.5 * (q_lo + q_hi)
    L = laplace_estimate(s, rho)
    d = laplace_derivative(s, rho)
    se = L.stderr / d.value if d.value > 0 else math.inf
    return SpectralEstimate(rho, (rho - 1.96 * se, rho + 1.96 * se), se, L.mean, d.value, d.divergent,
                            s.hit_fraction, 1.0 - s.hit_fraction, s.N, s.censor_time, s.seed)


def estimate_rho(model: ValidatedModel, N: int, T_max: float, seed: int = 0, x0: float | None = None):
    x0 = model.x0 if x0 is None else x0
    s = pdmp.sample_hitting_set(model, x0, x0, N, T_max, seed)
    return find_rho(s, model.cbar_sup), s


# -- eigenfunction table -------------------------------------------------------


@dataclass(frozen=True)
class EllTable:
    """Estimates of ``ell(x) = L_{x,x0}(rho)`` on a log-spaced grid.

    Interpolation is linear in (log x, log ell) over the points that had at
    least one hit, with constant extrapolation beyond them.
    """

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    rho_used: float
    x0: float
    ok: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ok is None:
            object.__setattr__(self, "ok", self.values > 0)
        if not np.any(self.ok):
            raise NoHits("no grid point produced a hit")

    @property
    def log_grid(self) -> np.ndarray:
        return np.log(self.grid[self.ok])

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values[self.ok])

    def __call__(self, x):
        out = np.exp(np.interp(np.log(np.asarray(x, dtype=float)), self.log_grid, self.log_values))
        return float(out) if out.ndim == 0 else out

    def extrapolated(self, x) -> np.ndarray:
        g = self.grid[self.ok]
        x = np.asarray(x, dtype=float)
        return (x < g[0]) | (x > g[-1])

    def slope(self, lo: float, hi: float) -> float:
        """Least-squares slope of log ell against log x over grid points in ``[lo, hi]``."""
        m = self.ok & (self.grid >= lo * (1 - 1e-12)) & (self.grid <= hi * (1 + 1e-12))
        return float(np.polyfit(np.log(self.grid[m]), np.log(self.values[m]), 1)[0])

    def tilt(self, safety: float = 1.05) -> pdmp.Tilt:
        return pdmp.Tilt("table", tz=self.log_grid.copy(), tl=self.log_values.copy(), safety=safety)

    @classmethod
    def constant(cls, grid, x0: float, rho: float) -> "EllTable":
        g = np.asarray(grid, dtype=float)
        return cls(g, np.ones_like(g), np.zeros_like(g), rho, x0)


def build_ell_table(model: ValidatedModel, rho: float, grid, N: int, T_max: float, seed: int = 0) -> EllTable:
    """``ell_hat(x) = L_hat_{x,x0}(rho)`` from a fresh sample at every grid point."""
    grid = np.asarray(grid, dtype=float)
    vals = np.empty(grid.size)
    ses = np.empty(grid.size)
    for i, x in enumerate(grid):
        s = pdmp.sample_hitting_set(model, float(x), model.x0, N, T_max, derive_seed(seed, i))
        e = laplace_estimate(s, rho)
        vals[i], ses[i] = e.mean, e.stderr
    return EllTable(grid, vals, ses, rho, model.x0)


def log_grid(lo: float, hi: float, k: int) -> np.ndarray:
    return np.exp(np.linspace(math.log(lo), math.log(hi), k))


# -- eigenmeasure ----------------------------------------------------------------


def minus_Lprime_curve(model: ValidatedModel, ys, rho: float, N: int, T_max: float,
                       seed: int = 0) -> list[DerivativeEstimate]:
    """``-L'_{y,y}(rho)`` at each ``y`` from independent return samples."""
    out = []
    for i, y in enumerate(np.asarray(ys, dtype=float)):
        s = pdmp.sample_hitting_set(model, float(y), float(y), N, T_max, derive_seed(seed, 10_000 + i))
        out.append(laplace_derivative(s, rho))
    return out


def nu_density(model: ValidatedModel, ell, minus_Lprime, y):
    """Unnormalised eigenmeasure density ``1 / (c(y) y ell(y) |L'_{y,y}(rho)|)``.

    ``minus_Lprime`` maps y to a float or to a DerivativeEstimate."""
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(ys.size)
    for i, yy in enumerate(ys):
        d = minus_Lprime(yy)
        if getattr(d, "divergent", False):
            raise DivergentDerivative(f"-L'_{{y,y}}(rho) looks infinite at y={yy}")
        val = getattr(d, "value", d)
        out[i] = 1.0 / (float(model.c(yy)) * yy * float(ell(yy)) * abs(val))
    return float(out[0]) if np.ndim(y) == 0 else out


def normalize(y, density) -> tuple[np.ndarray, float]:
    """Divide by the trapezoid integral over ``y``."""
    z = float(np.trapezoid(density, y)) if hasattr(np, "trapezoid") else float(np.trapz(density, y))
    return np.asarray(density) / z, z


# -- CSV ---------------------------------------------------------------------------


def _write(path, header: list[str], cols: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_ell_table(path, table: EllTable, header: list[str] = ()) -> None:
    _write(path, list(header), ["x", "ell_hat", "stderr"],
           zip(table.grid, table.values, table.stderr))


def write_spectral(path, est: SpectralEstimate, header: list[str] = ()) -> None:
    row = est.as_row()
    _write(path, list(header), list(row), [list(row.values())])
