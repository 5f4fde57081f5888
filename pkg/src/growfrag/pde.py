"""Finite-difference solver for the backward equation ``d/dt g = Abar g``.

``Abar g(x) = c(x) g'(x) + K(x) int_0^1 (g(xv) - g(x)) q_x(v) dv + cbar(x) g(x)``

on a uniform grid in z = log x.  Transport is upwinded from the right (the
characteristics of ``c d/dx`` carry values down from larger masses), the
fragmentation integral pairs the piecewise-linear interpolant of g in z
with the ratio law (exactly for the power-law ratio families, by
Gauss-Legendre nodes in the ratio variable otherwise), and time stepping is
explicit Heun.  The transport difference is minmod-limited second order,
which keeps explicit steps monotone.  Values below the grid are extrapolated as constant; the
size of that approximation is returned as a leak estimate.

The mass-side semigroup follows from ``T_t F(x) = x * Tbar_t(F / x)(x)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import PowerBetaRatio, ValidatedModel


class PdeError(Exception):
    pass


class DomainTooSmall(PdeError):
    pass


class CflViolation(PdeError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    x_min: float
    x_max: float
    n: int = 512
    quad_nodes: int = 32
    cfl: float = 0.5

    def __post_init__(self):
        if self.n < 16:
            raise ValueError("the grid needs at least 16 nodes")
        if not 0 < self.x_min < self.x_max:
            raise ValueError("need 0 < x_min < x_max")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")

    @property
    def z(self) -> np.ndarray:
        return np.linspace(math.log(self.x_min), math.log(self.x_max), self.n)

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.z)

    @property
    def dz(self) -> float:
        return (math.log(self.x_max) - math.log(self.x_min)) / (self.n - 1)

    def contains(self, x0: float) -> bool:
        return self.x_min < x0 < self.x_max


@dataclass(frozen=True)
class GridFunction:
    grid: PdeGrid
    values: np.ndarray
    t: float = 0.0
    label: str = ""
    leak: np.ndarray | None = field(default=None, repr=False)
    # right end of the support of the represented function, when known
    support_top: float | None = None

    def __post_init__(self):
        if self.values.shape != (self.grid.n,):
            raise ValueError("values must have one entry per grid node")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    def __call__(self, x):
        return np.interp(np.log(x), self.grid.z, self.values)

    @classmethod
    def of(cls, grid: PdeGrid, f, label: str = "") -> "GridFunction":
        return cls(grid, np.asarray(f(grid.x), dtype=float) * np.ones(grid.n), 0.0, label)


class _Operator:
    """Precomputed interpolation stencils for one (model, grid) pair."""

    def __init__(self, model: ValidatedModel, grid: PdeGrid):
        self.model, self.grid = model, grid
        x = grid.x
        self.cbar = np.asarray(model.cbar(x), dtype=float) * np.ones(grid.n)
        self.K = np.asarray(model.K(x), dtype=float) * np.ones(grid.n)
        ratio = model.frag.ratio
        self.conv = None
        if isinstance(ratio, PowerBetaRatio):
            # in z' = log(x v) the ratio density is beta exp(beta (z' - z)); the piecewise-linear
            # interpolant of g is integrated against it exactly, with weights depending on i - j only
            k = ratio.beta * grid.dz
            e0 = math.expm1(k) / k
            e1 = (math.exp(k) * (k - 1.0) + 1.0) / (k * k)
            # cell m spans [z_{i-m-1}, z_{i-m}] with density beta exp(-k (m+1)) exp(k tau), tau in [0, 1]
            cell = ratio.beta * grid.dz * np.exp(-k * np.arange(1, grid.n + 1))
            w = cell * e1
            w[1:] += cell[:-1] * (e0 - e1)
            self.conv = w
            self.below = np.exp(-k * np.arange(grid.n))
            # weight the convolution misses on row i: mass below the grid less the part of
            # w[i] that belongs to the cell below it; closed form avoids cancellation
            self.tail = self.below - cell * e1
            return
        u, w = np.polynomial.legendre.leggauss(grid.quad_nodes)
        u = 0.5 * (u + 1.0)
        w = 0.5 * w
        v = np.broadcast_to(u, (grid.n, u.size))
        wt = np.stack([w * ratio.density(u, xi) for xi in x])
        below = np.array([_mass_below(ratio, grid.x_min / xi, xi) for xi in x])
        zt = grid.z[:, None] + np.log(v)
        pos = (zt - grid.z[0]) / grid.dz
        j = np.clip(np.floor(pos).astype(int), 0, grid.n - 2)
        frac = np.clip(pos - j, 0.0, 1.0)
        # below the grid: constant extrapolation g(x_min)
        frac = np.where(pos < 0, 0.0, frac)
        self.j, self.frac, self.wt = j, frac, np.ascontiguousarray(wt)
        self.below = below

    def integral(self, g: np.ndarray) -> np.ndarray:
        if self.conv is not None:
            return np.convolve(g, self.conv)[: g.size] + g[0] * self.tail - g
        gv = g[self.j] * (1.0 - self.frac) + g[self.j + 1] * self.frac
        return np.sum(self.wt * (gv - g[:, None]), axis=1)

    def transport(self, g: np.ndarray) -> np.ndarray:
        """``cbar dg/dz`` from the right (upwind) side, minmod-limited second order.

        The face value between nodes j and j+1 is reconstructed from node
        j+1; the face difference is (g[j+1] - g[j]) times a factor in
        [1/2, 3/2], so explicit steps stay monotone for cfl <= 2/3."""
        diff = np.diff(g)
        s = np.zeros_like(g)
        a, b = diff[1:], diff[:-1]
        s[1:-1] = np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)
        face = g[1:] - 0.5 * s[1:]  # faces j+1/2, j = 0..n-2
        d = np.zeros_like(g)
        d[:-1] = face - (g[:-1] - 0.5 * s[:-1])
        d[-1] = 0.0
        return self.cbar * d / self.grid.dz

    def apply(self, g: np.ndarray, zero_order: bool = True) -> np.ndarray:
        out = self.transport(g) + self.K * self.integral(g)
        if zero_order:
            out = out + self.cbar * g
        return out

    def leak(self, g: np.ndarray) -> np.ndarray:
        k = max(2, self.grid.n // 32)
        return self.K * self.below * float(np.ptp(g[:k]))


def _mass_below(ratio, v0: float, x: float) -> float:
    from scipy import integrate

    if v0 <= 0:
        return 0.0
    if v0 >= 1:
        return 1.0
    return integrate.quad(lambda v: ratio.density(v, x), 0.0, v0, limit=100)[0]


def _values(grid: PdeGrid, g) -> np.ndarray:
    if isinstance(g, GridFunction):
        return g.values
    if callable(g):
        return np.asarray(g(grid.x), dtype=float) * np.ones(grid.n)
    return np.asarray(g, dtype=float)


def apply_generator(model: ValidatedModel, g, grid: PdeGrid | None = None, zero_order: bool = True) -> GridFunction:
    """``Abar g`` at the grid nodes; ``zero_order=False`` drops ``cbar g`` (the part generating X)."""
    if isinstance(g, GridFunction):
        grid = g.grid
    if grid is None:
        raise ValueError("a grid is required for callable input")
    op = _Operator(model, grid)
    vals = _values(grid, g)
    return GridFunction(grid, op.apply(vals, zero_order), 0.0, model.label, op.leak(vals))


def apply_A(model: ValidatedModel, fbar, grid: PdeGrid) -> GridFunction:
    """``A fbar(x) = x * Abar(fbar / x)(x)``."""
    x = grid.x
    out = apply_generator(model, _values(grid, fbar) / x, grid)
    return GridFunction(grid, x * out.values, 0.0, model.label, x * out.leak)


def max_dt(model: ValidatedModel, grid: PdeGrid) -> float:
    return grid.cfl * grid.dz / model.cbar_sup


def _support_top(grid: PdeGrid, vals: np.ndarray, f) -> float:
    if isinstance(f, GridFunction) and f.support_top is not None:
        return f.support_top
    sup = getattr(f, "support", None)
    if sup is not None and math.isfinite(sup[1]):
        return sup[1]
    nz = np.flatnonzero(vals != 0)
    return float(grid.x[nz[-1]]) if nz.size else grid.x_min


def evolve_backward(model: ValidatedModel, f, t: float, grid: PdeGrid, dt: float | None = None) -> GridFunction:
    """``Tbar_t f`` by Heun steps of size at most ``cfl dz / cbar_sup``.

    ``f`` is a callable or a GridFunction.  The right edge is never
    consulted when the support of f, pushed by the flow for time t, stays
    inside the grid; otherwise DomainTooSmall is raised."""
    if t < 0:
        raise ValueError("t must be non-negative")
    vals = _values(grid, f).copy()
    top = _support_top(grid, vals, f)
    if top * math.exp(model.cbar_sup * t) >= grid.x_max:
        raise DomainTooSmall(f"support reaches {top:.4g}*exp({model.cbar_sup}*{t}) >= x_max={grid.x_max:.4g}")
    limit = max_dt(model, grid)
    if dt is None:
        steps = max(1, int(math.ceil(t / limit - 1e-12)))
    else:
        if dt > limit * (1 + 1e-12):
            raise CflViolation(f"dt={dt} exceeds the stable step {limit:.4g}")
        steps = max(1, int(math.ceil(t / dt - 1e-12)))
    h = t / steps if t > 0 else 0.0
    op = _Operator(model, grid)
    leak = np.zeros(grid.n)
    g = vals
    for _ in range(steps if t > 0 else 0):
        k1 = op.apply(g)
        g1 = g + h * k1
        k2 = op.apply(g1)
        leak += h * 0.5 * (op.leak(g) + op.leak(g1))
        g = g + 0.5 * h * (k1 + k2)
    label = getattr(f, "label", "") or model.label
    # jumps only move mass down, so the support edge is pushed by the flow alone
    return GridFunction(grid, g, t, label, leak, top * math.exp(model.cbar_sup * t))


def semigroup(model: ValidatedModel, F, x, t: float, grid: PdeGrid) -> np.ndarray | float:
    """``T_t F(x) = x * Tbar_t(F / x)(x)``, interpolated at ``x``."""
    fb = _FOverX(F)
    g = evolve_backward(model, fb, t, grid)
    xs = np.asarray(x, dtype=float)
    out = xs * g(xs)
    return float(out) if out.ndim == 0 else out


class _FOverX:
    def __init__(self, F):
        self.F = F
        self.support = getattr(F, "support", None)

    def __call__(self, x):
        return np.asarray(self.F(x), dtype=float) / x


def write_solution(path, g: GridFunction, header: list[str] = ()) -> None:
    leak = g.leak if g.leak is not None else np.zeros(g.grid.n)
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "g_t", "boundary_leak_estimate"])
        for x, v, lk in zip(g.grid.x, g.values, leak):
            w.writerow([repr(float(x)), repr(float(v)), repr(float(lk))])
