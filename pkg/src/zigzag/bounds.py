"""Bound builders for the sampler kernels.

A bound builder has the signature ``fn(data, xi, theta, a, b, c) -> h``: it
fills the per-coordinate arrays so that ``min(c_i, (a_i + b_i t)^+)``
dominates the switching rate of coordinate ``i`` along ``xi + theta t`` for
``t`` in ``[0, h]``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .core import PhaseState

INF = math.inf


@njit(cache=True)
def constant_bound(data, xi, theta, a, b, c):
    cs = data[0]
    for i in range(xi.size):
        a[i] = cs[i]
        b[i] = 0.0
        c[i] = INF
    return INF


@njit(cache=True)
def lp_dist(x, y, p):
    """``|x - y|_p`` without a temporary array."""
    acc = 0.0
    for k in range(x.size):
        t = abs(x[k] - y[k])
        if p == INF:
            acc = max(acc, t)
        elif p == 1.0:
            acc += t
        elif p == 2.0:
            acc += t * t
        else:
            acc += t**p
    if p == INF or p == 1.0:
        return acc
    if p == 2.0:
        return math.sqrt(acc)
    return acc ** (1.0 / p)


@njit(cache=True)
def lipschitz_cv_bound(data, xi, theta, a, b, c):
    """Control-variate bound from per-datum Lipschitz constants, any ``p >= 1``.

    ``a_i = (theta_i g*_i)^+ + C_i |xi - xi*|_p`` and ``b_i = C_i d^(1/p)``.
    """
    xi_star, g_star, C, p = data
    d = xi.size
    dist = lp_dist(xi, xi_star, p)
    growth = 1.0 if p == INF else d ** (1.0 / p)
    for i in range(d):
        a[i] = max(theta[i] * g_star[i], 0.0) + C[i] * dist
        b[i] = C[i] * growth
        c[i] = INF
    return INF


# Branch-free copies for the common norms.  numba compiles the general
# version noticeably slower per call, and the bound runs once per proposal.


@njit(cache=True)
def lipschitz_cv_bound_l2(data, xi, theta, a, b, c):
    xi_star, g_star, C, p = data
    d = xi.size
    acc = 0.0
    for k in range(d):
        t = xi[k] - xi_star[k]
        acc += t * t
    dist = math.sqrt(acc)
    growth = math.sqrt(d)
    for i in range(d):
        a[i] = max(theta[i] * g_star[i], 0.0) + C[i] * dist
        b[i] = C[i] * growth
        c[i] = INF
    return INF


@njit(cache=True)
def lipschitz_cv_bound_linf(data, xi, theta, a, b, c):
    xi_star, g_star, C, p = data
    d = xi.size
    dist = 0.0
    for k in range(d):
        dist = max(dist, abs(xi[k] - xi_star[k]))
    for i in range(d):
        a[i] = max(theta[i] * g_star[i], 0.0) + C[i] * dist
        b[i] = C[i]
        c[i] = INF
    return INF


def lipschitz_bound_fn(p: float):
    """The fastest builder valid for the norm exponent ``p``."""
    if p == 2.0:
        return lipschitz_cv_bound_l2
    if p == INF:
        return lipschitz_cv_bound_linf
    if p < 1:
        raise ValueError("p must be at least 1")
    return lipschitz_cv_bound


def factory_bound(data, xi, theta, a, b, c):
    """Adapter for user factories ``state -> sequence of RateBound`` (Python only)."""
    (factory,) = data
    bounds = factory(PhaseState(xi.copy(), theta.astype(np.int8)))
    h = INF
    for i, bd in enumerate(bounds):
        ai, bi, ci, hi = bd.params()
        a[i], b[i], c[i] = ai, bi, ci
        h = min(h, hi)
    return h
