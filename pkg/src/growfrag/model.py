"""Growth-fragmentation problem definitions.

A model is described by a growth rate ``c``, a total fragmentation rate ``K``
and the law ``Q_x`` of the size-biased daughter-to-parent mass ratio ``V``.
The jump kernel of the tagged-fragment process is then

    kbar(x, y) = K(x) * q_x(y / x) / x,      0 < y < x,

and the fragmentation kernel of the equation is ``k(x, y) = (x / y) kbar(x, y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate


class ModelError(Exception):
    """Base class for model-level failures."""


class Diverged(ModelError):
    pass


@dataclass(frozen=True)
class Violation:
    code: str  # CBoundViolated | KUnbounded | RatioDensityNotNormalized | BadAnchor
    detail: str
    where: float | None = None


class ValidationError(ModelError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(f"{v.code}: {v.detail}" for v in violations))


# -- growth -----------------------------------------------------------------


@dataclass(frozen=True)
class LinearGrowth:
    a: float

    def c(self, x):
        return self.a * np.asarray(x, dtype=float) if np.ndim(x) else self.a * x

    @property
    def cbar_sup(self) -> float:
        return self.a


@dataclass(frozen=True)
class GeneralGrowth:
    """Arbitrary positive growth rate with a declared bound on ``c(x)/x``."""

    rate: Callable[[float], float]
    cbar_sup: float
    name: str = "general"

    def c(self, x):
        return self.rate(x)


@dataclass(frozen=True)
class PowerGrowth(GeneralGrowth):
    """``c(x) = coef * x**power``; only ``power == 1`` satisfies the linear bound."""

    coef: float = 1.0
    power: float = 1.0

    @classmethod
    def make(cls, coef: float, power: float, cbar_sup: float) -> "PowerGrowth":
        return cls(rate=lambda x: coef * np.power(x, power), cbar_sup=cbar_sup,
                   name=f"power({coef},{power})", coef=coef, power=power)


# -- fragmentation rates -----------------------------------------------------


@dataclass(frozen=True)
class ConstantRate:
    b: float

    def __call__(self, x):
        return self.b * np.ones_like(x, dtype=float) if np.ndim(x) else float(self.b)

    @property
    def Ksup(self) -> float:
        return self.b

    def asymptotics(self) -> tuple[float, float, float, float]:
        """(beta0, gamma0, beta_inf, gamma_inf) with K ~ beta x^gamma at 0 and infinity."""
        return self.b, 0.0, self.b, 0.0


@dataclass(frozen=True)
class SaturatingRate:
    """``K(x) = b x^g / (1 + x^g)``."""

    b: float
    gamma0: float

    def __call__(self, x):
        xg = np.power(x, self.gamma0)
        return self.b * xg / (1.0 + xg)

    @property
    def Ksup(self) -> float:
        return self.b

    def asymptotics(self) -> tuple[float, float, float, float]:
        return self.b, self.gamma0, self.b, 0.0


# -- ratio laws --------------------------------------------------------------


@dataclass(frozen=True)
class PowerBetaRatio:
    """Size-biased ratio with density ``beta v^(beta-1)`` on (0, 1)."""

    beta: float

    def density(self, v, x=None):
        v = np.asarray(v, dtype=float)
        return np.where((v > 0) & (v < 1), self.beta * np.power(v, self.beta - 1.0), 0.0)

    def moment(self, s: float, x=None) -> float:
        if s <= -self.beta:
            raise Diverged(f"M(s) = beta/(s+beta) diverges for s={s} <= -beta={-self.beta}")
        return self.beta / (s + self.beta)

    def quantile(self, u):
        return np.power(u, 1.0 / self.beta)


@dataclass(frozen=True)
class UniformBinaryRatio(PowerBetaRatio):
    """Binary division at a uniform point; the tagged fragment has ratio density 2v."""

    beta: float = 2.0


@dataclass(frozen=True)
class CustomRatio:
    """User-supplied ratio density ``q(v, x)``.  Must have full support in (0, 1)
    so that the tagged-fragment process stays irreducible."""

    q: Callable[[float, float], float]
    name: str = "custom"

    def density(self, v, x=1.0):
        return self.q(v, x)

    def moment(self, s: float, x: float = 1.0) -> float:
        with np.errstate(all="ignore"):
            val, err = integrate.quad(lambda v: v ** s * self.q(v, x), 0.0, 1.0, limit=200,
                                      full_output=0)
        if not np.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
            raise Diverged(f"quadrature for M_x({s}) did not converge (value {val}, err {err})")
        return val


@dataclass(frozen=True)
class FragmentationSpec:
    rate: ConstantRate | SaturatingRate
    ratio: PowerBetaRatio | CustomRatio

    @property
    def Ksup(self) -> float:
        return self.rate.Ksup


@dataclass(frozen=True)
class ModelSpec:
    growth: LinearGrowth | GeneralGrowth
    frag: FragmentationSpec
    x0: float = 1.0
    label: str = ""


@dataclass(frozen=True)
class ValidatedModel:
    """A model that passed ``validate``.  Immutable and safe to share."""

    spec: ModelSpec
    grid: np.ndarray = field(repr=False, compare=False)

    @property
    def label(self) -> str:
        return self.spec.label

    @property
    def x0(self) -> float:
        return self.spec.x0

    @property
    def growth(self):
        return self.spec.growth

    @property
    def frag(self) -> FragmentationSpec:
        return self.spec.frag

    @property
    def is_linear(self) -> bool:
        return isinstance(self.spec.growth, LinearGrowth)

    @property
    def cbar_sup(self) -> float:
        return float(self.spec.growth.cbar_sup)

    @property
    def Ksup(self) -> float:
        return float(self.spec.frag.Ksup)

    def c(self, x):
        return self.spec.growth.c(x)

    def cbar(self, x):
        """``c(x)/x``."""
        return self.spec.growth.c(x) / np.asarray(x, dtype=float)

    def K(self, x):
        return self.spec.frag.rate(x)

    def with_x0(self, x0: float) -> "ValidatedModel":
        return validate(ModelSpec(self.spec.growth, self.spec.frag, x0, self.spec.label))


def default_grid(n: int = 256, lo: float = 1e-4, hi: float = 1e4) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def _spec_of(model) -> ModelSpec:
    return model.spec if isinstance(model, ValidatedModel) else model


def check(spec: ModelSpec, grid: np.ndarray | None = None) -> list[Violation]:
    """All violated checks of ``spec`` on the validation grid (empty if valid)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    out: list[Violation] = []
    if not spec.x0 > 0:
        out.append(Violation("BadAnchor", f"x0={spec.x0} must be positive", spec.x0))

    with np.errstate(all="ignore"):
        c = np.asarray(spec.growth.c(grid), dtype=float) * np.ones_like(grid)
        cb = c / grid
    bad = np.flatnonzero(~(c > 0))
    if bad.size:
        x = grid[bad[0]]
        out.append(Violation("CBoundViolated", f"c(x)={c[bad[0]]} is not positive at x={x:.6g}", x))
    bound = float(spec.growth.cbar_sup)
    over = np.flatnonzero(~(cb <= bound * (1 + 1e-12)))
    if over.size:
        i = over[np.argmax(np.nan_to_num(cb[over], nan=np.inf))]
        out.append(Violation("CBoundViolated",
                             f"c(x)/x={cb[i]:.6g} exceeds cbar_sup={bound:.6g} at x={grid[i]:.6g}",
                             grid[i]))

    K = np.asarray(spec.frag.rate(grid), dtype=float) * np.ones_like(grid)
    Ksup = float(spec.frag.Ksup)
    if not (np.isfinite(Ksup) and Ksup >= 0):
        out.append(Violation("KUnbounded", f"Ksup={Ksup} is not a finite bound"))
    else:
        over = np.flatnonzero(~((K <= Ksup * (1 + 1e-12)) & (K >= 0)))
        if over.size:
            i = over[0]
            out.append(Violation("KUnbounded", f"K(x)={K[i]:.6g} not in [0, Ksup={Ksup:.6g}] "
                                 f"at x={grid[i]:.6g}", grid[i]))

    ratio = spec.frag.ratio
    probe = grid[:: max(1, grid.size // 8)] if isinstance(ratio, CustomRatio) else grid[:1]
    for x in probe:
        try:
            total = ratio.moment(0.0, x)
        except Diverged as exc:
            total, msg = math.nan, str(exc)
        else:
            msg = f"integral of ratio density is {total:.12g}"
        if not abs(total - 1.0) < 1e-8:
            out.append(Violation("RatioDensityNotNormalized", f"{msg} at x={x:.6g}", x))
            break
    return out


def validate(spec: ModelSpec, grid: np.ndarray | None = None) -> ValidatedModel:
    violations = check(spec, grid)
    if violations:
        raise ValidationError(violations)
    return ValidatedModel(spec, default_grid() if grid is None else np.asarray(grid, dtype=float))


def moment_ratio(model, x: float, s: float) -> float:
    """``M_x(s) = int_0^1 v^s q_x(v) dv``."""
    return _spec_of(model).frag.ratio.moment(s, x)


def moment_sup(model, s: float, grid: np.ndarray | None = None) -> float:
    """``M(s) = sup_x M_x(s)`` over the grid (exact for x-independent laws)."""
    spec = _spec_of(model)
    ratio = spec.frag.ratio
    if isinstance(ratio, PowerBetaRatio):
        return ratio.moment(s)
    grid = default_grid(64) if grid is None else grid
    return max(ratio.moment(s, x) for x in grid)


def kernel_density(model, x: float, y: float) -> float:
    """``kbar(x, y) = K(x) q_x(y/x) / x`` for ``0 < y < x``; zero otherwise."""
    if not 0 < y < x:
        return 0.0
    spec = _spec_of(model)
    return float(spec.frag.rate(x) * spec.frag.ratio.density(y / x, x) / x)


def fragmentation_kernel(model, x: float, y: float) -> float:
    """``k(x, y) = (x/y) kbar(x, y)``, the kernel appearing in the equation."""
    return 0.0 if not 0 < y < x else (x / y) * kernel_density(model, x, y)


# -- config files ------------------------------------------------------------


def _parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
        return raw[1:-1]
    try:
        return float(raw)
    except ValueError:
        return raw


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip()] = _parse_value(value)
    return entries


def spec_from_dict(cfg: dict) -> ModelSpec:
    def need(key):
        if key not in cfg:
            raise ModelError(f"missing config key '{key}'")
        return cfg[key]

    kind = need("growth.kind")
    if kind == "linear":
        growth = LinearGrowth(float(need("growth.a")))
    elif kind == "power":
        growth = PowerGrowth.make(float(cfg.get("growth.coef", 1.0)), float(need("growth.power")),
                                  float(need("growth.cbar_sup")))
    else:
        raise ModelError(f"unknown growth.kind '{kind}'")

    rkind = need("frag.rate.kind")
    if rkind == "constant":
        rate = ConstantRate(float(need("frag.rate.b")))
    elif rkind == "saturating":
        rate = SaturatingRate(float(need("frag.rate.b")), float(need("frag.rate.gamma0")))
    else:
        raise ModelError(f"unknown frag.rate.kind '{rkind}'")

    qkind = need("frag.ratio.kind")
    if qkind == "uniform_binary":
        ratio = UniformBinaryRatio()
    elif qkind == "power_beta":
        ratio = PowerBetaRatio(float(need("frag.ratio.beta")))
    else:
        raise ModelError(f"unknown frag.ratio.kind '{qkind}'")

    return ModelSpec(growth, FragmentationSpec(rate, ratio), float(cfg.get("x0", 1.0)),
                     str(cfg.get("label", "")))


SHIPPED = Path(__file__).parent / "configs"


def resolve_config(name: str | Path) -> Path:
    """A path on disk, or the name of a shipped config (``levy_142.cfg``)."""
    p = Path(name)
    if p.exists():
        return p
    for cand in (SHIPPED / p.name, SHIPPED / f"{p.name}.cfg"):
        if cand.exists():
            return cand
    raise FileNotFoundError(name)


def load_spec(path: str | Path) -> ModelSpec:
    return spec_from_dict(read_config(resolve_config(path)))


def load_model(path: str | Path) -> ValidatedModel:
    return validate(load_spec(path))


def levy_model(a: float, lam: float, beta: float, x0: float = 1.0, label: str = "") -> ValidatedModel:
    """Linear growth, constant rate ``lam``, ratio density ``beta v^(beta-1)``."""
    return validate(ModelSpec(LinearGrowth(a), FragmentationSpec(ConstantRate(lam), PowerBetaRatio(beta)),
                              x0, label or f"levy(a={a},lambda={lam},beta={beta})"))


def uniform_binary_model(a: float, b: float, gamma0: float, x0: float = 1.0,
                         label: str = "") -> ValidatedModel:
    return validate(ModelSpec(LinearGrowth(a),
                              FragmentationSpec(SaturatingRate(b, gamma0), UniformBinaryRatio()),
                              x0, label or f"uniform-binary(a={a},b={b},gamma0={gamma0})"))
