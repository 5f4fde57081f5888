"""Test functions on (0, inf) and the BUMP_SPEC parser."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np


def _bump01(s):
    # exp(1 - 1/(1 - s^2)) on |s| < 1, 0 elsewhere; peak value 1 at s = 0
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


@dataclass(frozen=True)
class Bump:
    """``exp(1 - 1/(1 - r^2))`` with ``r = log(x/center)/width``; zero for ``|r| >= 1``."""

    center: float = 1.0
    width: float = 0.5

    def __post_init__(self):
        if not (self.center > 0 and self.width > 0):
            raise ValueError("bump needs center > 0 and width > 0")

    @property
    def support(self) -> tuple[float, float]:
        return self.center * math.exp(-self.width), self.center * math.exp(self.width)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            r = np.log(x / self.center) / self.width
        out = _bump01(r)
        return float(out) if out.ndim == 0 else out

    def spec(self) -> str:
        return f"bump:center,{self.center!r};width,{self.width!r}"


def _smoothstep(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g0 = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        g1 = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return g0 / (g0 + g1)


@dataclass(frozen=True)
class Plateau:
    """Smoothed indicator of ``[lo, hi]``: equals 1 there, 0 beyond a log-ramp of length ``ramp``."""

    lo: float
    hi: float
    ramp: float = 0.1

    def __post_init__(self):
        if not (0 < self.lo < self.hi and self.ramp > 0):
            raise ValueError("plateau needs 0 < lo < hi and ramp > 0")

    @property
    def support(self) -> tuple[float, float]:
        return self.lo * math.exp(-self.ramp), self.hi * math.exp(self.ramp)

    def __call__(self, x):
        u = np.log(np.asarray(x, dtype=float))
        up = _smoothstep((u - math.log(self.lo)) / self.ramp + 1.0)
        down = _smoothstep((math.log(self.hi) - u) / self.ramp + 1.0)
        out = up * down
        return float(out) if out.ndim == 0 else out


class Identity:
    support = (0.0, math.inf)

    def __call__(self, x):
        return x if np.ndim(x) == 0 else np.asarray(x, dtype=float)


class Scaled:
    def __init__(self, f, c: float):
        self.f, self.c = f, c
        self.support = getattr(f, "support", (0.0, math.inf))

    def __call__(self, x):
        return self.c * self.f(x)


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_function(spec: str):
    """Parse ``bump:center,C;width,W``, ``bump:C;W``, ``plateau:LO;HI[;RAMP]`` or ``id``."""
    s = spec.strip()
    if s in ("id", "identity"):
        return Identity()
    kind, _, body = s.partition(":")
    parts = [p.strip() for p in body.split(";") if p.strip()]
    if kind == "bump":
        vals = {}
        for i, p in enumerate(parts):
            if "," in p:
                k, v = (t.strip() for t in p.split(",", 1))
            else:
                k, v = ("center", "width")[i] if i < 2 else "?", p
            if k not in ("center", "width") or not re.fullmatch(_NUM, v):
                raise ValueError(f"bad bump field {p!r} in {spec!r}")
            vals[k] = float(v)
        return Bump(**vals)
    if kind == "plateau" and 2 <= len(parts) <= 3 and all(re.fullmatch(_NUM, p) for p in parts):
        return Plateau(*map(float, parts))
    raise ValueError(f"cannot parse function spec {spec!r}")
