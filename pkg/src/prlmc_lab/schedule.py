"""Step-size sequences, accumulated times and schedule hypotheses.

Steps are indexed from 1: ``gamma(s, 1)`` is the first step. The polynomial
family is ``gamma_n = c * (n + offset) ** -alpha``; the integer offset lets a
schedule with a large constant ``c`` still start below a first-step cap
without changing its asymptotics or its omega statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

CONSTANT = "Constant"
POLYNOMIAL = "Polynomial"


@dataclass(frozen=True)
class StepSchedule:
    """A non-increasing positive step sequence."""

    kind: str
    eta: float = 0.0
    c: float = 0.0
    alpha: float = 1.0
    offset: int = 0

    def __post_init__(self):
        if self.kind == CONSTANT:
            if not (self.eta > 0 and math.isfinite(self.eta)):
                raise ValueError("constant step must be positive and finite")
        elif self.kind == POLYNOMIAL:
            if not (self.c > 0 and math.isfinite(self.c)):
                raise ValueError("polynomial scale c must be positive and finite")
            if not (0 < self.alpha <= 1):
                raise ValueError("polynomial exponent alpha must lie in (0, 1]")
            if int(self.offset) != self.offset or self.offset < 0:
                raise ValueError("offset must be a nonnegative integer")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @property
    def is_constant(self) -> bool:
        return self.kind == CONSTANT

    def to_dict(self) -> dict:
        if self.kind == CONSTANT:
            return {"kind": CONSTANT, "eta": self.eta}
        return {"kind": POLYNOMIAL, "c": self.c, "alpha": self.alpha, "offset": self.offset}


def constant(eta: float) -> StepSchedule:
    return StepSchedule(CONSTANT, eta=float(eta))


def polynomial(c: float, alpha: float = 1.0, offset: int = 0) -> StepSchedule:
    return StepSchedule(POLYNOMIAL, c=float(c), alpha=float(alpha), offset=int(offset))


def from_dict(cfg: dict) -> StepSchedule:
    kind = cfg.get("kind")
    if kind == CONSTANT:
        return constant(cfg["eta"])
    if kind == POLYNOMIAL:
        return polynomial(cfg["c"], cfg.get("alpha", 1.0), cfg.get("offset", 0))
    raise ValueError(f"unknown schedule kind {kind!r}")


def gamma(s: StepSchedule, n: int) -> float:
    """The n-th step size, n >= 1."""
    if n < 1:
        raise ValueError("step index starts at 1")
    if s.kind == CONSTANT:
        return s.eta
    return s.c * float(n + s.offset) ** (-s.alpha)


def gammas(s: StepSchedule, n: int) -> np.ndarray:
    """Vector ``[gamma_1, ..., gamma_n]``."""
    if s.kind == CONSTANT:
        return np.full(n, s.eta)
    idx = np.arange(1, n + 1, dtype=float) + s.offset
    return s.c * idx ** (-s.alpha)


def time(s: StepSchedule, n: int) -> float:
    """Accumulated time ``t_n = gamma_1 + ... + gamma_n``; ``t_0 = 0``."""
    if n < 0:
        raise ValueError("step count must be nonnegative")
    if n == 0:
        return 0.0
    if s.kind == CONSTANT:
        return n * s.eta
    return math.fsum(gammas(s, n))


def times(s: StepSchedule, n: int) -> np.ndarray:
    """Vector ``[t_0, t_1, ..., t_n]`` by running sum."""
    return np.concatenate(([0.0], np.cumsum(gammas(s, n))))


def omega(s: StepSchedule) -> float:
    """Analytic limsup of ``(gamma_n - gamma_{n+1}) / gamma_{n+1}**2``."""
    if s.kind == CONSTANT or s.alpha < 1:
        return 0.0
    return 1.0 / s.c


def omega_ratios(s: StepSchedule, n: int) -> np.ndarray:
    """The ratios ``(gamma_k - gamma_{k+1}) / gamma_{k+1}**2`` for k = 1..n."""
    g = gammas(s, n + 1)
    return (g[:-1] - g[1:]) / g[1:] ** 2


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def validate(s: StepSchedule, m: float, upper: float) -> list[Violation]:
    """Check ``2 omega < m`` and ``gamma_1 <= upper``; return what fails."""
    out = []
    w = omega(s)
    if 2.0 * w >= m:
        out.append(Violation("omega", f"2*omega = {2.0 * w!r} is not below m = {m!r}"))
    g1 = gamma(s, 1)
    if g1 > upper:
        out.append(Violation("first_step", f"gamma_1 = {g1!r} exceeds cap {upper!r}"))
    return out


def admissible_offset(c: float, alpha: float, upper: float) -> int:
    """Smallest integer n0 >= 0 with ``c * (1 + n0) ** -alpha <= upper``."""
    root = (c / upper) ** (1.0 / alpha)
    if not math.isfinite(root) or root > 2.0**52:
        raise ValueError("offset too large to represent; raise upper or alpha")
    n0 = max(0, math.ceil(root) - 1)
    # guard against rounding at the boundary
    while n0 > 0 and c * float(n0) ** (-alpha) <= upper:
        n0 -= 1
    while c * float(1 + n0) ** (-alpha) > upper:
        n0 += 1
    return n0


def with_admissible_offset(s: StepSchedule, upper: float) -> StepSchedule:
    if s.kind == CONSTANT:
        return s
    return replace(s, offset=admissible_offset(s.c, s.alpha, upper))
