"""First event times of Poisson processes with closed-form rate bounds.

Every bound family is mapped onto one canonical parameterisation

    M(t) = min(c, (a + b t)^+)   for 0 <= t <= h

so the integrated rate and its inverse are written once, as jitted scalar
functions, and shared with the sampler kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from numba import njit

INF = math.inf


class Never:
    """Sentinel: the bound has too little total mass for the requested event."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NEVER"


NEVER = Never()


@dataclass(frozen=True)
class HorizonExhausted:
    """No event on ``[0, t_max]``; the caller must re-bound from ``t_max``."""

    t_max: float


class HorizonError(ValueError):
    """A horizon-limited bound was queried beyond its horizon."""


class RateBound:
    """Base class for computational bounds along one linear segment."""

    def params(self) -> tuple[float, float, float, float]:
        """Canonical ``(a, b, c, h)`` with ``M(t) = min(c, (a+bt)^+)`` on ``[0, h]``."""
        raise NotImplementedError


def _check_finite(**kw):
    for k, v in kw.items():
        if not math.isfinite(v):
            raise ValueError(f"{k} must be finite, got {v}")


@dataclass(frozen=True)
class Constant(RateBound):
    c: float

    def __post_init__(self):
        _check_finite(c=self.c)
        if self.c < 0:
            raise ValueError("constant bound must be nonnegative")

    def params(self):
        return (self.c, 0.0, INF, INF)


@dataclass(frozen=True)
class AffinePlus(RateBound):
    a: float
    b: float

    def __post_init__(self):
        _check_finite(a=self.a, b=self.b)

    def params(self):
        return (self.a, self.b, INF, INF)


@dataclass(frozen=True)
class MinConstAffine(RateBound):
    c: float
    a: float
    b: float

    def __post_init__(self):
        _check_finite(c=self.c, a=self.a, b=self.b)
        if self.c < 0:
            raise ValueError("cap must be nonnegative")

    def params(self):
        return (self.a, self.b, self.c, INF)


@dataclass(frozen=True)
class HorizonConst(RateBound):
    c: float
    t_max: float

    def __post_init__(self):
        _check_finite(c=self.c, t_max=self.t_max)
        if self.c < 0:
            raise ValueError("constant bound must be nonnegative")
        if self.t_max <= 0:
            raise ValueError("horizon must be positive")

    def params(self):
        return (self.c, 0.0, INF, self.t_max)


# ---------------------------------------------------------------------------
# jitted scalar core
#
# The rate is split into at most three pieces on [0, inf): each piece k is
# (start, end, r0, slope) with rate r0 + slope * (s - start) on [start, end).


@njit(cache=True)
def _piece(a, b, c, k):
    if b > 0.0:
        s0 = max(0.0, -a / b)
        s1 = max(s0, (c - a) / b)
        if k == 0:
            return 0.0, s0, 0.0, 0.0
        if k == 1:
            return s0, s1, max(a, 0.0) if s0 == 0.0 else 0.0, b
        return s1, INF, c, 0.0
    if b < 0.0:
        s1 = max(0.0, (c - a) / b)
        s0 = max(s1, a / -b)
        if k == 0:
            return 0.0, s1, c, 0.0
        if k == 1:
            return s1, s0, min(a, c) if s1 == 0.0 else c, b
        return s0, INF, 0.0, 0.0
    r = min(c, max(a, 0.0))
    if k == 0:
        return 0.0, INF, r, 0.0
    return INF, INF, 0.0, 0.0


@njit(cache=True)
def rate_at(a, b, c, t):
    return min(c, max(a + b * t, 0.0))


@njit(cache=True)
def integrated(a, b, c, t):
    total = 0.0
    for k in range(3):
        start, end, r0, slope = _piece(a, b, c, k)
        if start >= t:
            break
        s = min(end, t) - start
        if s > 0.0 and (r0 > 0.0 or slope > 0.0):
            # grouped so tiny slopes do not underflow
            total += s * (r0 + slope * s * 0.5)
    return total


@njit(cache=True)
def event_time(a, b, c, h, y):
    """Return ``inf(H >= y)`` or ``inf`` when no event occurs on ``[0, h]``."""
    rem = y
    for k in range(3):
        start, end, r0, slope = _piece(a, b, c, k)
        if start >= h:
            return INF
        if end <= start:
            continue
        if slope == 0.0:
            if r0 <= 0.0:
                continue
            mass = r0 * (end - start)
            if rem <= mass:
                t = start + rem / r0
                return t if t <= h else INF
            rem -= mass
            continue
        length = end - start
        if length == INF:
            mass = INF
        else:
            mass = length * (r0 + slope * length * 0.5)
        if rem <= mass:
            disc = r0 * r0 + 2.0 * slope * rem
            if disc < 0.0:
                disc = 0.0
            # stable root of r0 s + slope s^2 / 2 = rem
            denom = r0 + math.sqrt(disc)
            if denom == 0.0:
                return INF
            s = 2.0 * rem / denom
            t = start + min(s, length)
            return t if t <= h else INF
        rem -= mass
    return INF


# ---------------------------------------------------------------------------
# public API


def bound_value(bound: RateBound, t: float) -> float:
    a, b, c, h = bound.params()
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t > h:
        raise HorizonError(f"t={t} beyond horizon {h}")
    return rate_at(a, b, c, t)


def integrated_rate(bound: RateBound, t: float) -> float:
    """Exact value of the integral of the bound over ``[0, t]``."""
    a, b, c, h = bound.params()
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t > h:
        raise HorizonError(f"t={t} beyond horizon {h}")
    return integrated(a, b, c, t)


def first_event_time(bound: RateBound, u: float):
    """Invert the integrated rate at ``-log u``.

    Returns a float time, ``NEVER`` when the total mass is too small, or
    ``HorizonExhausted`` for horizon-limited bounds.
    """
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie in the open interval (0, 1)")
    a, b, c, h = bound.params()
    t = event_time(a, b, c, h, -math.log(u))
    if t == INF:
        return HorizonExhausted(h) if h < INF else NEVER
    return t
