"""The tilted process Y and the quantities read off its excursions.

Y is X with jump kernel ``kbar(x, y) ell(y) / ell(x)``.  It is simulated by
thinning: candidates arrive at ``Ksup * Bmax``, a proposal ``V ~ Q_p`` is
accepted with probability ``K(p) ell(pV) / ell(p) / (Ksup Bmax)``, where
``Bmax`` bounds the ratio ``ell(pV)/ell(p)``.  With ``ell`` constant this is
the base process draw for draw.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels as kern
from . import pdmp, pde
from .levy import LevyParams, theta0_rho
from .model import ValidatedModel
from .pdmp import Estimate, Tilt, estimate
from .rng import derive_seed, seed_word
from .spectral import EllTable, laplace_derivative


class TiltError(Exception):
    pass


class ExcursionCensored(TiltError):
    pass


@dataclass(frozen=True)
class TiltedModel:
    base: ValidatedModel
    tilt: Tilt
    rho: float
    ell_scale: float = 1.0  # ell(x) = ell_scale * exp(log_ell(log x))

    def ell(self, x):
        x = np.asarray(x, dtype=float)
        if self.tilt.kind == "power":
            out = self.ell_scale * x ** self.tilt.exponent
        else:
            out = self.ell_scale * np.exp(np.interp(np.log(x), self.tilt.tz, self.tilt.tl))
        return float(out) if out.ndim == 0 else out

    def ell_bar(self, x):
        return np.asarray(x, dtype=float) * self.ell(x) if np.ndim(x) else x * self.ell(x)

    def accept_bound(self, x: float) -> float:
        """Bound on ``ell(x v) / ell(x)`` over ``v`` in (0, 1), safety factor included."""
        return math.exp(self.tilt.log_bound(math.log(x)))

    @property
    def x0(self) -> float:
        return self.base.x0


def from_table(model: ValidatedModel, table: EllTable, safety: float = 1.05) -> TiltedModel:
    return TiltedModel(model, table.tilt(safety), table.rho_used)


def trivial(model: ValidatedModel, rho: float) -> TiltedModel:
    """ell identically 1 (e.g. recurrent linear growth, where rho = a)."""
    z = np.array([math.log(model.x0)])
    return TiltedModel(model, Tilt("table", tz=z, tl=np.zeros(1)), rho)


def from_levy(model: ValidatedModel) -> TiltedModel:
    """Closed-form ``ell(x) = (x/x0)^(theta0 - 1)``."""
    p = LevyParams.from_model(model)
    th0, rho = theta0_rho(p)
    return TiltedModel(model, Tilt("power", exponent=th0 - 1.0), rho, ell_scale=model.x0 ** -(th0 - 1.0))


def simulate_tilted(tm: TiltedModel, x: float, t_end: float, seed: int = 0, index: int = 0) -> pdmp.Trajectory:
    return pdmp.simulate_path(tm.base, x, t_end, seed, index, tilt=tm.tilt)


def simulate_tilted_paths(tm: TiltedModel, x: float, times, n: int, seed: int = 0) -> pdmp.PathBatch:
    return pdmp.simulate_paths(tm.base, x, times, n, seed, tilt=tm.tilt)


def return_sample(tm: TiltedModel, n: int, T_max: float, seed: int = 0, x: float | None = None):
    """Return times of Y to x (default x0)."""
    x = tm.x0 if x is None else x
    return pdmp.sample_hitting_set(tm.base, x, x, n, T_max, seed, tilt=tm.tilt)


# -- tabulated test functions ---------------------------------------------------


@dataclass(frozen=True)
class LogTable:
    """Functions sampled on a uniform grid in log mass, piecewise linear in between
    and constant beyond the ends, with exact running integrals."""

    z0: float
    dz: float
    F: np.ndarray  # (k, n)
    G: np.ndarray  # (k, n), G[:, j] = int_{z0}^{z0 + j dz} of row

    @classmethod
    def build(cls, fs, lo: float, hi: float, n: int = 4001, divide_by_x: bool = False) -> "LogTable":
        z = np.linspace(math.log(lo), math.log(hi), n)
        x = np.exp(z)
        rows = []
        for f in fs:
            v = np.asarray(f(x), dtype=float) * np.ones(n)
            rows.append(v / x if divide_by_x else v)
        F = np.ascontiguousarray(np.vstack(rows))
        dz = (z[-1] - z[0]) / (n - 1)
        G = np.zeros_like(F)
        G[:, 1:] = np.cumsum(0.5 * dz * (F[:, 1:] + F[:, :-1]), axis=1)
        return cls(float(z[0]), float(dz), F, np.ascontiguousarray(G))


def _span(fs, default=(1e-3, 1e3)):
    lo, hi = default
    for f in fs:
        s = getattr(f, "support", None)
        if s is not None:
            lo = min(lo, s[0]) if s[0] > 0 else lo
            hi = max(hi, s[1]) if math.isfinite(s[1]) else hi
    return lo, hi


def _fast_or_raise(model: ValidatedModel):
    if not pdmp._fast(model):
        raise TiltError("excursion and occupation functionals are implemented for linear growth "
                        "with built-in rate and ratio families")


# -- occupation measure ------------------------------------------------------------


@dataclass(frozen=True)
class Occupation:
    values: list[Estimate]
    per_excursion: np.ndarray  # (completed, k)
    lengths: np.ndarray  # completed excursion lengths
    n_censored: int
    n_total: int

    @property
    def censored_fraction(self) -> float:
        return self.n_censored / self.n_total


def occupation_measure(tm: TiltedModel, fs, n_excursions: int, T_max: float = 1e4, seed: int = 0,
                       table_points: int = 4001, span=None) -> Occupation:
    """``<m0, f> = E[int_0^{H(x0)} f(Y_s) ds]`` over excursions from x0, for each f in ``fs``.

    Each f is replaced by its piecewise-linear interpolant in log mass on
    ``table_points`` nodes, which is then integrated exactly along every
    flow segment.  Censored excursions are dropped and counted."""
    fs = list(fs) if isinstance(fs, (list, tuple)) else [fs]
    _fast_or_raise(tm.base)
    lo, hi = span or _span(fs)
    tab = LogTable.build(fs, lo, hi, table_points)
    P, tz, tl, tpm = pdmp.pack(tm.base, tm.tilt)
    n = n_excursions
    I = np.zeros((n, len(fs)))
    H = np.zeros(n)
    done = np.zeros(n, dtype=np.bool_)
    stat = np.zeros(n, dtype=np.int8)
    kern.excursions(P, tz, tl, tpm, seed_word(seed), 0, math.log(tm.x0), float(T_max), tab.z0, tab.dz,
                    tab.F, tab.G, I, H, done, stat)
    pdmp._check(stat)
    if not np.any(done):
        raise ExcursionCensored(f"all {n} excursions censored at T_max={T_max}")
    Ic = I[done]
    return Occupation([estimate(Ic[:, k]) for k in range(len(fs))], Ic, H[done], int(n - done.sum()), n)


# -- stationary law ------------------------------------------------------------------


@dataclass(frozen=True)
class Stationary:
    edges: np.ndarray
    empirical: np.ndarray  # density in y, normalised over the bins
    empirical_se: np.ndarray
    curve: np.ndarray  # model curve, same normalisation
    curve_se: np.ndarray
    minus_Lprime: np.ndarray
    chi2: float
    critical: float
    df: int
    outside_fraction: float

    @property
    def passed(self) -> bool:
        return self.chi2 < self.critical

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.edges[1:] * self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def occupation_histogram(tm: TiltedModel, t_burn: float, t_run: float, edges_log, n_batches: int = 50,
                         seed: int = 0, x: float | None = None):
    """Time spent by one long path of Y in uniform log-mass bins, split into batches."""
    _fast_or_raise(tm.base)
    zb = np.asarray(edges_log, dtype=float)
    dzb = float(zb[1] - zb[0])
    out = np.zeros((n_batches, zb.size - 1))
    outside = np.zeros(n_batches)
    P, tz, tl, tpm = pdmp.pack(tm.base, tm.tilt)
    x = tm.x0 if x is None else x
    st = kern.occupation_histogram(P, tz, tl, tpm, seed_word(seed), 0, math.log(x), float(t_burn), float(t_run),
                                   float(zb[0]), dzb, out, outside)
    pdmp._check(np.array([st]))
    return out, outside


def stationary_density(tm: TiltedModel, t_burn: float, t_run: float, bins: int = 32, lo: float = 0.1,
                       hi: float = 10.0, n_batches: int = 50, N_curve: int = 20000, T_max: float = 1e3,
                       seed: int = 0, significance: float = 1e-3) -> Stationary:
    """Occupation histogram of Y against ``1 / (c(y) |L'_{y,y}(rho)|)`` on log-spaced bins.

    The histogram variance comes from batch means; the curve variance from
    the stderr of each derivative estimate.  Both are normalised to unit
    mass over the bins.  The curve is evaluated at the geometric bin centre
    and weighted by the bin width in log mass (midpoint rule in z)."""
    zb = np.linspace(math.log(lo), math.log(hi), bins + 1)
    edges = np.exp(zb)
    out, outside = occupation_histogram(tm, t_burn, t_run, zb, n_batches, derive_seed(seed, 0))
    inside = out.sum(axis=1)
    probs = out / inside[:, None]
    p_hat = out.sum(axis=0) / inside.sum()
    p_se = probs.std(axis=0, ddof=1) / math.sqrt(n_batches)

    yc = np.exp(0.5 * (zb[1:] + zb[:-1]))
    ders = []
    for i, y in enumerate(yc):
        s = pdmp.sample_hitting_set(tm.base, float(y), float(y), N_curve, T_max, derive_seed(seed, 1 + i))
        ders.append(laplace_derivative(s, tm.rho))
    d = np.array([e.value for e in ders])
    dse = np.array([e.stderr for e in ders])
    dens_y = 1.0 / (np.asarray(tm.base.c(yc)) * d)
    w = dens_y * yc * np.diff(zb)
    p_curve = w / w.sum()
    curve_se = p_curve * dse / d

    var = p_se ** 2 + curve_se ** 2
    chi2 = float(np.sum((p_hat - p_curve) ** 2 / var))
    df = bins - 1
    crit = float(stats.chi2.ppf(1.0 - significance, df))
    widths = np.diff(edges)
    return Stationary(edges, p_hat / widths, p_se / widths, p_curve / widths, curve_se / widths, d, chi2, crit,
                      df, float(outside.sum() / (outside.sum() + inside.sum())))


# -- asymptotic profile ------------------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    t: float
    direct: Estimate
    tilted: Estimate

    def agree(self, k: float = 3.0) -> bool:
        return abs(self.direct.mean - self.tilted.mean) <= k * math.hypot(self.direct.stderr, self.tilted.stderr)


def _call(f, x):
    out = f(x)
    if np.ndim(out) == 0 and np.ndim(x) > 0:
        return np.vectorize(f, otypes=[float])(x)
    return np.asarray(out, dtype=float)


def asymptotic_profile(tm: TiltedModel, f, x: float, t: float, N: int, seed: int = 0) -> Profile:
    """``exp(-rho t) T_t f(x)`` two ways, on independent streams.

    direct: ``x exp(-rho t) E_x[E_t f(X_t) / X_t]``;
    tilted: ``ellbar(x) Q_x[f(Y_t) / ellbar(Y_t)]``."""
    fk = pdmp.feynman_kac(tm.base, x, t, f, N, derive_seed(seed, 1))
    scale = math.exp(-tm.rho * t)
    direct = Estimate(fk.mean * scale, fk.stderr * scale, fk.n)
    batch = simulate_tilted_paths(tm, x, [t], N, derive_seed(seed, 2))
    Y = batch.mass[:, 0]
    vals = tm.ell_bar(x) * _call(f, Y) / tm.ell_bar(Y)
    return Profile(t, direct, estimate(vals))


def profile_limit(tm: TiltedModel, f, x: float, ys, nu_values, n_fine: int = 4001) -> float:
    """``ellbar(x) <nu, f>``; the density is interpolated log-log onto a fine grid for the trapezoid rule."""
    ys = np.asarray(ys, dtype=float)
    xs = np.geomspace(ys[0], ys[-1], n_fine)
    integrand = _call(f, xs) * _fine(ys, nu_values, xs)
    return float(tm.ell_bar(x)) * float(_trapezoid(integrand, xs))


def _trapezoid(y, x):
    return np.trapezoid(y, x) if hasattr(np, "trapezoid") else np.trapz(y, x)


def write_profile(path, rows: list[Profile], header=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "direct", "direct_se", "tilted", "tilted_se"])
        for r in rows:
            w.writerow([repr(float(r.t)), repr(r.direct.mean), repr(r.direct.stderr), repr(r.tilted.mean),
                        repr(r.tilted.stderr)])


def write_stationary(path, st: Stationary, header=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "empirical", "model_curve"])
        for lo, hi, e, c in zip(st.edges[:-1], st.edges[1:], st.empirical, st.curve):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(e)), repr(float(c))])


# -- ratio limit ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioCurve:
    t: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    ratio: np.ndarray
    ratio_se: np.ndarray


def time_integrated(model: ValidatedModel, fs, x: float, t_grid, N: int, growth: float, seed: int = 0,
                    h: float = 0.05, span=None) -> np.ndarray:
    """Per path: ``int_0^t exp(growth s) phi_k(X_s) ds`` with ``phi_k = f_k / id``, shape (N, len(t), k)."""
    _fast_or_raise(model)
    fs = list(fs)
    lo, hi = span or _span(fs)
    tab = LogTable.build(fs, lo, hi, 4001, divide_by_x=True)
    P, tz, tl, tpm = pdmp.pack(model)
    t_grid = np.asarray(t_grid, dtype=float)
    out = np.zeros((N, t_grid.size, len(fs)))
    stat = np.zeros(N, dtype=np.int8)
    kern.time_integrals(P, tz, tl, tpm, seed_word(seed), 0, math.log(x), float(growth), t_grid, tab.z0, tab.dz,
                        tab.F, tab.G, float(h), out, stat)
    pdmp._check(stat)
    return out


def ratio_limit(tm: TiltedModel, f, g, x: float, t_grid, N: int, seed: int = 0) -> RatioCurve:
    """``int_0^t e^{-rho s} T_s f(x) ds / int_0^t e^{-rho s} T_s g(x) ds`` on one set of paths.

    For linear growth ``E_s = e^{a s}``, so the integrand weight is
    ``exp((a - rho) s)``."""
    a = tm.base.growth.a
    arr = time_integrated(tm.base, [f, g], x, t_grid, N, a - tm.rho, seed)
    num = x * arr[:, :, 0].mean(axis=0)
    den = x * arr[:, :, 1].mean(axis=0)
    ratio = num / den
    # delta method for a ratio of means on common paths
    se = np.empty(ratio.size)
    for j in range(ratio.size):
        u, v = arr[:, j, 0], arr[:, j, 1]
        r = ratio[j]
        se[j] = np.std(u - r * v, ddof=1) / math.sqrt(N) / abs(v.mean()) if v.mean() != 0 else math.inf
    return RatioCurve(np.asarray(t_grid, dtype=float), num, den, ratio, se)


def ratio_target(tm: TiltedModel, f, g, n_excursions: int, T_max: float = 1e4, seed: int = 0) -> Estimate:
    """``<m0, f/ellbar> / <m0, g/ellbar>`` from the same excursions."""
    fo = lambda y: _call(f, y) / tm.ell_bar(y)
    go = lambda y: _call(g, y) / tm.ell_bar(y)
    for h, src in ((fo, f), (go, g)):
        h.support = getattr(src, "support", None)
    occ = occupation_measure(tm, [fo, go], n_excursions, T_max, seed, span=_span([f, g], (1e-3, 1e3)))
    u, v = occ.per_excursion[:, 0], occ.per_excursion[:, 1]
    r = u.mean() / v.mean()
    se = np.std(u - r * v, ddof=1) / math.sqrt(u.size) / abs(v.mean())
    return Estimate(float(r), float(se), int(u.size))


# -- eigenmeasure residual ---------------------------------------------------------------


@dataclass(frozen=True)
class Residual:
    lhs: float  # <nu, A fbar>
    rhs: float  # rho <nu, fbar>
    relative: float


def _fine(ys, nu_values, xs):
    """log-log interpolation of a positive density onto ``xs`` inside the range of ``ys``; 0 outside."""
    ys = np.asarray(ys, dtype=float)
    nu = np.asarray(nu_values, dtype=float)
    inside = (xs >= ys[0]) & (xs <= ys[-1])
    out = np.zeros(xs.size)
    out[inside] = np.exp(np.interp(np.log(xs[inside]), np.log(ys), np.log(nu)))
    return out


def eigenmeasure_residual(model: ValidatedModel, ys, nu_values, fbar, rho: float, grid: pde.PdeGrid) -> Residual:
    """``<nu, A fbar> - rho <nu, fbar>`` relative to ``rho <nu, fbar>``.

    ``A fbar`` comes from the finite-difference operator on ``grid``; the
    density, known at ``ys``, is interpolated log-log onto the grid nodes
    and both pairings use the trapezoid rule there."""
    x = grid.x
    nu = _fine(ys, nu_values, x)
    Af = pde.apply_A(model, fbar, grid).values
    lhs = float(_trapezoid(nu * Af, x))
    rhs = rho * float(_trapezoid(nu * _call(fbar, x), x))
    if rhs == 0.0:
        return Residual(lhs, rhs, 0.0 if lhs == 0.0 else math.inf)
    return Residual(lhs, rhs, abs(lhs - rhs) / abs(rhs))
