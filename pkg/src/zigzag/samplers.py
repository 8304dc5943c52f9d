"""Zig-Zag samplers driven by Poisson thinning.

Two resumable kernels do the work: ``_thinning_kernel`` covers plain
Zig-Zag with per-segment bounds, sub-sampling and control variates;
``_hessian_kernel`` carries affine bounds across proposals using a matrix
that dominates the Hessian.  Each kernel stops whenever its uniform buffer
or output chunk runs out, so a Python driver can refill and resume without
changing the random stream.  For models without jitted callbacks the same
kernel source runs through ``py_func``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numba import njit
from scipy import optimize

from . import bounds as _bounds
from .core import ModelEvaluationError, PhaseState, RefreshRates, Skeleton, TargetModel
from .poisson import event_time, rate_at

INF = math.inf

DONE, NEED_U, NEED_OUT, VIOLATION, NEVER, BAD_MODEL = range(6)

# fst: clock, time of last recorded point, violating rate, violating bound
# ist: next uniform, proposals, switches, work units, next output slot, violating coordinate
_CLOCK, _LAST = 0, 1
_UPOS, _PROPS, _SWITCHES, _WORK, _OUTPOS, _VIOL_I = range(6)

ACCEPT_SLACK = 1e-9


class BoundViolation(RuntimeError):
    """A thinning ratio exceeded one: the supplied bound is invalid."""

    def __init__(self, time, position, velocity, coordinate, rate, bound):
        self.time, self.position, self.velocity = time, position, velocity
        self.coordinate, self.rate, self.bound = coordinate, rate, bound
        super().__init__(
            f"rate {rate!r} exceeds bound {bound!r} for coordinate {coordinate} "
            f"at t={time!r}, xi={position.tolist()}, theta={velocity.tolist()}"
        )


class ConfigurationError(ValueError):
    """The model lacks the metadata a sampler needs."""


class NoEventError(RuntimeError):
    """No further switching event can occur and the stop rule needs one."""


# ---------------------------------------------------------------------------
# stop rules and results


@dataclass(frozen=True)
class MaxTime:
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")


@dataclass(frozen=True)
class MaxProposals:
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")


@dataclass(frozen=True)
class MaxEpochs:
    E: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")


StopRule = Union[MaxTime, MaxProposals, MaxEpochs]


def _limits(stop: StopRule, n_data: int) -> np.ndarray:
    lim = np.array([INF, INF, INF])
    if isinstance(stop, MaxTime):
        lim[0] = stop.T
    elif isinstance(stop, MaxProposals):
        lim[1] = stop.N
    elif isinstance(stop, MaxEpochs):
        lim[2] = stop.E * n_data
    else:
        raise TypeError(f"unknown stop rule {stop!r}")
    return lim


@dataclass
class ReferencePoint:
    xi_star: np.ndarray
    grad_at_star: np.ndarray
    converged: bool = True
    iterations: int = 0

    @classmethod
    def at(cls, model: TargetModel, xi) -> "ReferencePoint":
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return cls(xi, model.grad(xi))


@dataclass
class RunReport:
    skeleton: Skeleton
    proposals: int
    accepted_switches: int
    per_datum_evals: int
    n_data: int
    wall_time: float
    setup_evals: int = 0
    method: str = ""
    work: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def epochs(self) -> float:
        return self.per_datum_evals / self.n_data


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _record(fst, ist, xi, theta, out_t, out_x, out_v, out_w):
    k = ist[_OUTPOS]
    out_t[k] = fst[_CLOCK]
    for i in range(xi.size):
        out_x[k, i] = xi[i]
        out_v[k, i] = theta[i]
    out_w[k] = ist[_WORK]
    ist[_OUTPOS] = k + 1
    fst[_LAST] = fst[_CLOCK]


@njit(cache=True)
def _advance(fst, xi, theta, step):
    for i in range(xi.size):
        xi[i] += theta[i] * step
    fst[_CLOCK] += step


@njit(cache=True)
def _finish(fst, ist, xi, theta, out_t, out_x, out_v, out_w):
    """Record the final state after a stop rule fired."""
    if fst[_LAST] != fst[_CLOCK]:
        if ist[_OUTPOS] >= out_t.size:
            return NEED_OUT
        _record(fst, ist, xi, theta, out_t, out_x, out_v, out_w)
    return DONE


@njit(cache=True)
def _thinning_kernel(grad_fn, datum_fn, mdata, bound_fn, bdata, mode, n_data,
                     ref_xi, ref_grad, ref_cache, gamma, xi, theta, fst, ist, lim,
                     u, out_t, out_x, out_v, out_w, record_all):
    # mode 0: full derivative (n_data units); 1: one sub-sampled term;
    # 2: control-variate term centred at ref_xi
    d = xi.size
    a = np.empty(d)
    b = np.empty(d)
    c = np.empty(d)
    need = 2 * d + 2
    cached = ref_cache.shape[1] > 0
    while True:
        # calls taking many arrays are costly, so the stop test stays inline
        if ist[_PROPS] >= lim[1] or ist[_WORK] >= lim[2] or fst[_CLOCK] >= lim[0]:
            return _finish(fst, ist, xi, theta, out_t, out_x, out_v, out_w)
        if ist[_UPOS] + need > u.size:
            return NEED_U
        if ist[_OUTPOS] >= out_t.size:
            return NEED_OUT
        clock = fst[_CLOCK]
        h = bound_fn(bdata, xi, theta, a, b, c)
        tau = INF
        i0 = -1
        refresh = False
        for i in range(d):
            y = -math.log(1.0 - u[ist[_UPOS]])
            ist[_UPOS] += 1
            t = event_time(a[i], b[i], c[i], h, y)
            if t < tau:
                tau, i0, refresh = t, i, False
            if gamma[i] > 0.0:
                y = -math.log(1.0 - u[ist[_UPOS]])
                ist[_UPOS] += 1
                t = y / gamma[i]
                if t <= h and t < tau:
                    tau, i0, refresh = t, i, True
        if i0 < 0:
            if h == INF:
                if lim[0] == INF:
                    return NEVER
                _advance(fst, xi, theta, lim[0] - clock)
                fst[_CLOCK] = lim[0]
            elif clock + h >= lim[0]:
                _advance(fst, xi, theta, lim[0] - clock)
                fst[_CLOCK] = lim[0]
            else:
                _advance(fst, xi, theta, h)
            continue
        if clock + tau >= lim[0]:
            _advance(fst, xi, theta, lim[0] - clock)
            fst[_CLOCK] = lim[0]
            continue
        for i in range(d):
            xi[i] += theta[i] * tau
        fst[_CLOCK] = clock + tau
        ist[_PROPS] += 1
        flipped = refresh
        if not refresh:
            if mode == 0:
                g = grad_fn(mdata, xi, i0)
                ist[_WORK] += n_data
            else:
                j = int(u[ist[_UPOS]] * n_data)
                ist[_UPOS] += 1
                if j >= n_data:
                    j = n_data - 1
                g = datum_fn(mdata, xi, i0, j)
                if mode == 2:
                    if cached:
                        g += ref_grad[i0] - ref_cache[i0, j]
                        ist[_WORK] += 1
                    else:
                        g += ref_grad[i0] - datum_fn(mdata, ref_xi, i0, j)
                        ist[_WORK] += 2
                else:
                    ist[_WORK] += 1
            if not math.isfinite(g):
                ist[_VIOL_I] = i0
                return BAD_MODEL
            m = max(theta[i0] * g, 0.0)
            bound = rate_at(a[i0], b[i0], c[i0], tau)
            if m > bound * (1.0 + ACCEPT_SLACK):
                ist[_VIOL_I] = i0
                fst[2] = m
                fst[3] = bound
                return VIOLATION
            r = u[ist[_UPOS]]
            ist[_UPOS] += 1
            flipped = r * bound < m
        if flipped:
            theta[i0] = -theta[i0]
            ist[_SWITCHES] += 1
        if flipped or record_all:
            k = ist[_OUTPOS]
            out_t[k] = fst[_CLOCK]
            for i in range(d):
                out_x[k, i] = xi[i]
                out_v[k, i] = theta[i]
            out_w[k] = ist[_WORK]
            ist[_OUTPOS] = k + 1
            fst[_LAST] = fst[_CLOCK]


@njit(cache=True)
def _hessian_kernel(grad_fn, mdata, n_data, a, b, xi, theta, fst, ist, lim,
                    u, out_t, out_x, out_v, out_w, record_all):
    d = xi.size
    while True:
        # calls taking many arrays are costly, so the stop test stays inline
        if ist[_PROPS] >= lim[1] or ist[_WORK] >= lim[2] or fst[_CLOCK] >= lim[0]:
            return _finish(fst, ist, xi, theta, out_t, out_x, out_v, out_w)
        if ist[_UPOS] + d + 1 > u.size:
            return NEED_U
        if ist[_OUTPOS] >= out_t.size:
            return NEED_OUT
        clock = fst[_CLOCK]
        tau = INF
        i0 = -1
        for i in range(d):
            y = -math.log(1.0 - u[ist[_UPOS]])
            ist[_UPOS] += 1
            t = event_time(a[i], b[i], INF, INF, y)
            if t < tau:
                tau, i0 = t, i
        if i0 < 0 or clock + tau >= lim[0]:
            if lim[0] == INF:
                return NEVER
            step = lim[0] - clock
            _advance(fst, xi, theta, step)
            fst[_CLOCK] = lim[0]
            continue
        for i in range(d):
            xi[i] += theta[i] * tau
        fst[_CLOCK] = clock + tau
        ist[_PROPS] += 1
        for i in range(d):
            a[i] += b[i] * tau
        g = grad_fn(mdata, xi, i0)
        ist[_WORK] += n_data
        if not math.isfinite(g):
            ist[_VIOL_I] = i0
            return BAD_MODEL
        m = max(theta[i0] * g, 0.0)
        bound = max(a[i0], 0.0)
        if m > bound * (1.0 + ACCEPT_SLACK):
            ist[_VIOL_I] = i0
            fst[2] = m
            fst[3] = bound
            return VIOLATION
        r = u[ist[_UPOS]]
        ist[_UPOS] += 1
        flipped = r * bound < m
        if flipped:
            theta[i0] = -theta[i0]
            ist[_SWITCHES] += 1
        # exact value for the current velocity; the other a_i stay valid
        a[i0] = theta[i0] * g
        if flipped or record_all:
            k = ist[_OUTPOS]
            out_t[k] = fst[_CLOCK]
            for i in range(d):
                out_x[k, i] = xi[i]
                out_v[k, i] = theta[i]
            out_w[k] = ist[_WORK]
            ist[_OUTPOS] = k + 1
            fst[_LAST] = fst[_CLOCK]


# ---------------------------------------------------------------------------
# driver


def make_rng(seed: int, chain: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, chain)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


def _is_jitted(fn) -> bool:
    return hasattr(fn, "py_func")


class _Driver:
    """Owns the mutable kernel state, buffers and output chunks of one run."""

    def __init__(self, init: PhaseState, seed: int, chain: int, ublock: int, chunk: int):
        self.d = init.dim
        self.xi = init.position.astype(np.float64).copy()
        self.theta = init.velocity.astype(np.float64).copy()
        self.fst = np.zeros(4)
        self.ist = np.zeros(6, dtype=np.int64)
        self.rng = make_rng(seed, chain)
        # short runs should not pay for a full buffer; the stream does not
        # depend on how it is split into blocks
        self.ublock = min(ublock, 1 << 10)
        self.ublock_max = ublock
        self.u = self.rng.random(self.ublock)
        self.chunk = min(chunk, 1 << 8)
        self.done: list[tuple] = []
        self._alloc()
        _record(self.fst, self.ist, self.xi, self.theta, *self.out)

    def _alloc(self):
        n = self.chunk
        self.out = (np.empty(n), np.empty((n, self.d)), np.empty((n, self.d), dtype=np.int8),
                    np.empty(n, dtype=np.int64))
        self.chunk = min(self.chunk * 2, 1 << 20)

    def _flush(self):
        k = self.ist[_OUTPOS]
        self.done.append(tuple(arr[:k].copy() for arr in self.out))

    def run(self, step: Callable) -> None:
        while True:
            status = step(self.u, *self.out)
            if status == DONE:
                self._flush()
                return
            if status == NEED_U:
                rest = self.u[self.ist[_UPOS]:]
                self.ublock = min(self.ublock * 4, self.ublock_max)
                self.u = np.concatenate([rest, self.rng.random(self.ublock)])
                self.ist[_UPOS] = 0
            elif status == NEED_OUT:
                self._flush()
                self._alloc()
                self.ist[_OUTPOS] = 0
            elif status == VIOLATION:
                i = int(self.ist[_VIOL_I])
                raise BoundViolation(self.fst[_CLOCK], self.xi.copy(), self.theta.astype(np.int8),
                                     i, self.fst[2], self.fst[3])
            elif status == BAD_MODEL:
                raise ModelEvaluationError(
                    f"non-finite derivative {int(self.ist[_VIOL_I])} at t={self.fst[_CLOCK]}, xi={self.xi.tolist()}")
            elif status == NEVER:
                raise NoEventError(f"no switching event can occur from xi={self.xi.tolist()}")
            else:  # pragma: no cover
                raise RuntimeError(f"unknown kernel status {status}")

    def report(self, model: TargetModel, method: str, wall: float, setup: int) -> RunReport:
        t, x, v, w = (np.concatenate(parts) for parts in zip(*self.done))
        work = int(self.ist[_WORK])
        model.counter.add(work + setup)
        return RunReport(
            skeleton=Skeleton(t, x, v),
            proposals=int(self.ist[_PROPS]),
            accepted_switches=int(self.ist[_SWITCHES]),
            per_datum_evals=work,
            n_data=model.n_data,
            wall_time=wall,
            setup_evals=setup,
            method=method,
            work=w,
        )


def _check_init(model: TargetModel, init: PhaseState) -> None:
    if init.dim != model.dim:
        raise ValueError(f"initial state has dimension {init.dim}, model has {model.dim}")


def _resolve_bounds(bounds, default):
    if bounds is None:
        if default is None:
            return None
        return default
    if isinstance(bounds, tuple):
        return bounds
    if callable(bounds):
        return _bounds.factory_bound, (bounds,)
    raise TypeError("bounds must be None, a (fn, data) pair or a state -> RateBound factory")


def _run_thinning(model, bound_pair, init, stop, gamma, seed, chain, mode, record, method,
                  ref=None, ref_cache=None, setup=0, ublock=1 << 18, chunk=1 << 14):
    _check_init(model, init)
    d = model.dim
    kern = model.kernel()
    bound_fn, bdata = bound_pair
    jit = kern.jitted and _is_jitted(bound_fn)
    run = _thinning_kernel if jit else _thinning_kernel.py_func
    g = (gamma or RefreshRates()).as_array(d)
    ref_xi = np.zeros(d) if ref is None else np.asarray(ref.xi_star, dtype=float)
    ref_grad = np.zeros(d) if ref is None else np.asarray(ref.grad_at_star, dtype=float)
    if ref_cache is None:
        ref_cache = np.empty((d, 0))
    lim = _limits(stop, model.n_data)
    drv = _Driver(init, seed, chain, ublock, chunk)
    record_all = record == "all"

    def step(u, ot, ox, ov, ow):
        return run(kern.grad_i, kern.datum_i, kern.data, bound_fn, bdata, mode, model.n_data,
                   ref_xi, ref_grad, ref_cache, g, drv.xi, drv.theta, drv.fst, drv.ist, lim,
                   u, ot, ox, ov, ow, record_all)

    t0 = time.perf_counter()
    drv.run(step)
    return drv.report(model, method, time.perf_counter() - t0, setup)


# ---------------------------------------------------------------------------
# public samplers


def simulate_zz(model: TargetModel, init: PhaseState, stop: StopRule, bounds=None,
                gamma: Optional[RefreshRates] = None, seed: int = 0, chain: int = 0,
                record: str = "all") -> RunReport:
    """Zig-Zag sampling with full-gradient switching rates.

    ``bounds`` is either a factory mapping a ``PhaseState`` to one
    ``RateBound`` per coordinate, a jitted ``(fn, data)`` pair from
    :mod:`zigzag.bounds`, or None for the model's default.  Bounds must
    include any refreshment rate only through ``gamma``, which is simulated
    as an independent superposed clock.

    ``record="all"`` keeps every proposal as a skeleton point;
    ``"switches"`` keeps switch points only.
    """
    pair = _resolve_bounds(bounds, model.zz_bounds())
    if pair is None:
        raise ConfigurationError("model has no default Zig-Zag bounds; pass `bounds`")
    return _run_thinning(model, pair, init, stop, gamma, seed, chain, 0, record, "zz")


def simulate_zz_hessian(model: TargetModel, init: PhaseState, stop: StopRule, seed: int = 0,
                        chain: int = 0, record: str = "all") -> RunReport:
    """Zig-Zag with affine bounds derived from a dominating Hessian matrix Q."""
    if model.hessian_dominator is None:
        raise ConfigurationError("model provides no Hessian dominator")
    _check_init(model, init)
    Q = np.atleast_2d(np.asarray(model.hessian_dominator, dtype=float))
    d = model.dim
    b = math.sqrt(d) * np.linalg.norm(Q, axis=0)
    kern = model.kernel()
    run = _hessian_kernel if kern.jitted else _hessian_kernel.py_func
    a = np.array([init.velocity[i] * model._grad_i(init.position, i) for i in range(d)], dtype=float)
    if not np.all(np.isfinite(a)):
        raise ModelEvaluationError("non-finite gradient at the initial state")
    setup = d * model.n_data
    lim = _limits(stop, model.n_data)
    drv = _Driver(init, seed, chain, 1 << 18, 1 << 14)
    record_all = record == "all"

    def step(u, ot, ox, ov, ow):
        return run(kern.grad_i, kern.data, model.n_data, a, b, drv.xi, drv.theta, drv.fst, drv.ist,
                   lim, u, ot, ox, ov, ow, record_all)

    t0 = time.perf_counter()
    drv.run(step)
    return drv.report(model, "zz-hessian", time.perf_counter() - t0, setup)


def simulate_zz_ss(model: TargetModel, init: PhaseState, stop: StopRule, bounds=None,
                   gamma: Optional[RefreshRates] = None, seed: int = 0, chain: int = 0,
                   record: str = "all") -> RunReport:
    """Zig-Zag with sub-sampling: one uniformly drawn datum per proposal."""
    pair = _resolve_bounds(bounds, model.ss_bounds())
    if pair is None:
        raise ConfigurationError("sub-sampling needs per-datum global bounds")
    return _run_thinning(model, pair, init, stop, gamma, seed, chain, 1, record, "zz-ss")


def simulate_zz_cv(model: TargetModel, ref: ReferencePoint, init: Optional[PhaseState] = None,
                   stop: StopRule = MaxEpochs(1.0), bounds=None,
                   gamma: Optional[RefreshRates] = None, seed: int = 0, chain: int = 0,
                   record: str = "all", cache_limit: float = 1e8) -> RunReport:
    """Zig-Zag with sub-sampling and control variates centred at ``ref``.

    Starts at the reference point (all velocities +1) unless ``init`` is given.
    Per-datum derivatives at the reference are cached when ``d * n`` does not
    exceed ``cache_limit``; that one pass is reported as ``setup_evals``.
    Without the cache each proposal costs two units.
    """
    pair = _resolve_bounds(bounds, model.cv_bounds(ref))
    if pair is None:
        raise ConfigurationError("control variates need per-datum Lipschitz constants")
    if init is None:
        init = PhaseState(ref.xi_star, np.ones(model.dim, dtype=np.int8))
    setup = 0
    cache = None
    if model.dim * model.n_data <= cache_limit:
        cache = np.ascontiguousarray(model._datum_grads(np.asarray(ref.xi_star, float),
                                                        np.arange(model.n_data)).T)
        setup = model.n_data
    return _run_thinning(model, pair, init, stop, gamma, seed, chain, 2, record, "zz-cv",
                         ref=ref, ref_cache=cache, setup=setup)


def find_reference(model: TargetModel, init=None, tol: Optional[float] = None,
                   subsample: Optional[Union[int, float]] = None, seed: int = 0,
                   max_iter: int = 500) -> ReferencePoint:
    """Approximate posterior mode for control variates.

    ``subsample`` (a count, or a fraction of ``n_data``) minimises the
    sub-sampled objective ``mean_{j in S} psi^j`` instead of psi, giving a
    deliberately sub-optimal reference.  The returned gradient is always the
    full-data derivative at the reference.  ``tol`` bounds the Euclidean norm
    of the objective's gradient; it defaults to ``1e-8 * n_data``.
    """
    n = model.n_data
    x0 = np.zeros(model.dim) if init is None else np.atleast_1d(np.asarray(init, dtype=float))
    if tol is None:
        tol = 1e-8 * max(n, 1)
    if subsample is None:
        idx = np.arange(n)
    else:
        m = int(round(subsample * n)) if isinstance(subsample, float) and subsample < 1 else int(subsample)
        m = min(max(m, 1), n)
        idx = np.sort(make_rng(seed, 1 << 20).choice(n, size=m, replace=False))

    def f(x):
        return float(np.mean(model.datum_psi(x, idx)))

    def jac(x):
        return np.mean(model.datum_grads(x, idx), axis=0)

    res = optimize.minimize(f, x0, jac=jac, method="BFGS",
                            options={"gtol": tol / math.sqrt(model.dim), "maxiter": max_iter})
    xs = np.atleast_1d(res.x)
    ok = bool(np.linalg.norm(jac(xs)) <= tol)
    ref = ReferencePoint.at(model, xs)
    ref.converged = ok
    ref.iterations = int(res.nit)
    return ref
