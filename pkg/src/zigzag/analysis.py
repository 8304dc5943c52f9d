"""Estimators over skeletons and the discrete-time baselines MALA and SGLD."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

from .core import ModelEvaluationError, Skeleton, TargetModel, positions_at
from .samplers import make_rng


class DegenerateSeriesError(ValueError):
    """The series has zero variance, so its effective sample size is undefined."""


@dataclass
class SampleSet:
    """Positions read off a trajectory on an equally spaced time grid."""

    times: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def coord(self, i: int) -> np.ndarray:
        return self.positions[:, i]


@dataclass
class MetricRecord:
    name: str
    value: float
    stderr: float = 0.0
    epochs: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be nonnegative")


def _window(skeleton: Skeleton, burn_in: float) -> float:
    if len(skeleton) == 0:
        raise ValueError("empty skeleton")
    if not 0.0 <= burn_in < 1.0:
        raise ValueError("burn_in must lie in [0, 1)")
    t_first = float(skeleton.times[0])
    return t_first + burn_in * (skeleton.final_time - t_first)


def sample_trajectory(skeleton: Skeleton, m: int, burn_in: float = 0.0) -> SampleSet:
    """Evaluate the trajectory at ``t_i = t0 + i (T - t0) / m`` for ``i = 1..m``.

    ``t0`` is the end of the discarded ``burn_in`` fraction.  Samples are read
    off the continuous path, so switch points never enter as samples.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    t0 = _window(skeleton, burn_in)
    T = skeleton.final_time
    if not T > t0:
        raise ValueError("skeleton spans zero time")
    ts = t0 + np.arange(1, m + 1) * ((T - t0) / m)
    ts[-1] = T
    return SampleSet(ts, positions_at(skeleton, ts))


def _segment_integrals(x, v, dt, p):
    if p == 1:
        return x * dt + 0.5 * v * dt**2
    if p == 2:
        return x * x * dt + x * v * dt**2 + dt**3 / 3.0
    raise ValueError("only powers 1 and 2 are supported; use sample_trajectory")


def _clip(skeleton: Skeleton, i: int, t_start: float, t_end: float):
    """Segment start positions, velocities and durations restricted to ``[t_start, t_end]``."""
    t = skeleton.times
    x = skeleton.positions[:, i]
    v = skeleton.velocities[:, i].astype(float)
    lo = np.maximum(t[:-1], t_start)
    hi = np.minimum(t[1:], t_end)
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    xs = x[:-1][keep] + v[:-1][keep] * (lo - t[:-1][keep])
    return xs, v[:-1][keep], hi - lo


def integrate_moment(skeleton: Skeleton, i: int, p: int, burn_in: float = 0.0) -> float:
    """Time average of ``xi_i^p`` along the trajectory after the burn-in fraction."""
    if p not in (1, 2):
        raise ValueError("only powers 1 and 2 are supported; use sample_trajectory")
    if len(skeleton) < 2:
        raise ValueError("need at least one segment")
    t0 = _window(skeleton, burn_in)
    T = skeleton.final_time
    xs, vs, dt = _clip(skeleton, i, t0, T)
    return float(np.sum(_segment_integrals(xs, vs, dt, p)) / (T - t0))


def integrated_batch_means(skeleton: Skeleton, i: int, p: int, n_batches: int,
                           burn_in: float = 0.0) -> np.ndarray:
    """Time averages of ``xi_i^p`` over ``n_batches`` equal windows."""
    if len(skeleton) < 2:
        raise ValueError("need at least one segment")
    t0 = _window(skeleton, burn_in)
    T = skeleton.final_time
    edges = np.linspace(t0, T, n_batches + 1)
    out = np.empty(n_batches)
    for b in range(n_batches):
        xs, vs, dt = _clip(skeleton, i, edges[b], edges[b + 1])
        out[b] = np.sum(_segment_integrals(xs, vs, dt, p)) / (edges[b + 1] - edges[b])
    return out


def _series(x, coord: int) -> np.ndarray:
    if isinstance(x, SampleSet):
        x = x.coord(coord)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a scalar series")
    return x


def ess(samples: Union[SampleSet, np.ndarray], coord: int = 0) -> float:
    """Batch-means effective sample size with ``floor(sqrt(m))`` batches, capped at ``m``."""
    x = _series(samples, coord)
    m = x.size
    if m < 100:
        raise ValueError("need at least 100 samples")
    var = x.var(ddof=1)
    if not var > 0:
        raise DegenerateSeriesError("constant series")
    nb = int(math.isqrt(m))
    bs = m // nb
    means = x[: nb * bs].reshape(nb, bs).mean(axis=1)
    bvar = means.var(ddof=1)
    if not bvar > 0:
        return float(m)
    return float(min(m, m * var / (bs * bvar)))


def trajectory_ess(skeleton: Skeleton, coord: int = 0, burn_in: float = 0.1, m_max: int = 10**6,
                   ratio: float = 4.0) -> tuple[float, int]:
    """ESS of a trajectory with a grid size the batch-means estimate can resolve.

    Batch means only resolve an ESS well above the number of batches
    ``sqrt(m)``; with too fine a grid every batch is as variable as a single
    sample and the estimate collapses to ``sqrt(m)``.  Starting from
    ``m_max`` the grid is shrunk until ``ESS >= ratio * sqrt(m)`` (or
    ``m`` reaches 100).  Returns ``(ess, m)``.
    """
    m = int(m_max)
    while True:
        e = ess(sample_trajectory(skeleton, m, burn_in), coord)
        if e >= ratio * math.sqrt(m) or m <= 100:
            return e, m
        m = max(100, min(m // 2, int((e / ratio) ** 2)))


def mc_stderr(samples: Union[SampleSet, np.ndarray], coord: int = 0) -> float:
    """Monte Carlo standard error of the sample mean, using the batch-means ESS."""
    x = _series(samples, coord)
    return float(math.sqrt(x.var(ddof=1) / ess(x)))


def quantiles(samples: SampleSet, q, coord: int = 0) -> np.ndarray:
    return np.quantile(samples.coord(coord), q)


def switch_positions(skeleton: Skeleton) -> np.ndarray:
    """Positions at accepted switches (rejected proposals are excluded)."""
    return skeleton.positions[skeleton.switch_mask()]


def mean_abs_time_average(skeleton: Skeleton, i: int = 0, burn_in: float = 0.0) -> float:
    """Exact time average of ``|xi_i|``, splitting segments at zero crossings."""
    t0 = _window(skeleton, burn_in)
    xs, vs, dt = _clip(skeleton, i, t0, skeleton.final_time)
    xe = xs + vs * dt
    same = xs * xe >= 0
    area = np.where(same, 0.5 * (np.abs(xs) + np.abs(xe)) * dt, 0.5 * (xs**2 + xe**2))
    return float(area.sum() / (skeleton.final_time - t0))


# ---------------------------------------------------------------------------
# discrete-time baselines


@dataclass
class ChainResult:
    """Output of a discrete-time sampler.

    ``chain`` holds the retained iterates, ``epochs`` the total work in
    full-data gradient units including burn-in.
    """

    chain: np.ndarray
    epochs: float
    step: float
    acceptance: float = 1.0
    flagged: int = 0
    diverged: bool = False


def mala(model: TargetModel, step: float, iters: int, init, seed: int = 0, burn_in: int = 0,
         tune: bool = True, target: float = 0.574, chain: int = 0) -> ChainResult:
    """Metropolis-adjusted Langevin with optional step tuning during burn-in.

    Every iteration evaluates psi and its gradient at the proposal and is
    charged ``n_data`` units.  Proposals with non-finite density are rejected
    and counted in ``flagged``.
    """
    if step <= 0 or iters < 1 or burn_in < 0:
        raise ValueError("need step > 0, iters >= 1 and burn_in >= 0")
    rng = make_rng(seed, chain)
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = x.size
    px, gx = model._psi(x), model._grad(x)
    if not (np.isfinite(px) and np.all(np.isfinite(gx))):
        raise ModelEvaluationError("non-finite density at the initial point")
    log_h = math.log(step)
    total = burn_in + iters
    out = np.empty((iters, d))
    accepted = flagged = 0
    for k in range(total):
        h = math.exp(log_h)
        y = x - 0.5 * h * gx + math.sqrt(h) * rng.standard_normal(d)
        with np.errstate(all="ignore"):
            py, gy = model._psi(y), model._grad(y)
            fwd = np.sum((y - x + 0.5 * h * gx) ** 2)
            bwd = np.sum((x - y + 0.5 * h * gy) ** 2)
            log_a = px - py + (fwd - bwd) / (2 * h)
        u = rng.random()
        if not (np.isfinite(log_a) and np.all(np.isfinite(gy))):
            flagged += 1
            ok = False
        else:
            ok = math.log(u) < log_a if u > 0 else True
        if ok:
            x, px, gx = y, py, gy
        if k < burn_in:
            if tune:
                a = min(1.0, math.exp(min(log_a, 0.0))) if np.isfinite(log_a) else 0.0
                log_h += (a - target) / (k + 1) ** 0.6
        else:
            accepted += ok
            out[k - burn_in] = x
    model.counter.add(total * model.n_data)
    return ChainResult(out, float(total), math.exp(log_h), accepted / iters, flagged)


DIVERGENCE_NORM = 1e10


@njit(cache=True)
def _sgld_block(datum_fn, mdata, n, xi, h, idx, z, out):
    """Run ``len(z)`` SGLD steps; returns the index of a divergent step or -1."""
    d = xi.size
    B, k = idx.shape
    g = np.empty(d)
    sh = math.sqrt(h)
    for t in range(B):
        for i in range(d):
            acc = 0.0
            for r in range(k):
                acc += datum_fn(mdata, xi, i, idx[t, r])
            g[i] = acc / k
        norm = 0.0
        for i in range(d):
            xi[i] += -0.5 * h * g[i] + sh * z[t, i]
            norm += xi[i] * xi[i]
            out[t, i] = xi[i]
        if not math.isfinite(norm) or norm > 1e20:
            return t
    return -1


def sgld(model: TargetModel, step: float, batch_size: int, iters: int, init, seed: int = 0,
         chain: int = 0, block: int = 4096) -> ChainResult:
    """Stochastic-gradient Langevin dynamics with a fixed step and no correction.

    The drift uses the mean of ``batch_size`` per-datum gradients drawn with
    replacement, an unbiased estimate of the full gradient.  A run whose norm
    exceeds ``1e10`` or turns non-finite stops early with ``diverged=True``.
    """
    if step <= 0 or iters < 1 or batch_size < 1:
        raise ValueError("need step > 0, iters >= 1 and batch_size >= 1")
    rng = make_rng(seed, chain)
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d, n = x.size, model.n_data
    kern = model.kernel()
    out = np.empty((iters, d))
    done = 0
    diverged = False
    while done < iters:
        B = min(block, iters - done)
        idx = rng.integers(0, n, size=(B, batch_size))
        z = rng.standard_normal((B, d))
        if kern.jitted:
            bad = _sgld_block(kern.datum_i, kern.data, n, x, step, idx, z, out[done:done + B])
        else:
            bad = _sgld_block_py(model, x, step, idx, z, out[done:done + B])
        if bad >= 0:
            done += bad + 1
            diverged = True
            break
        done += B
    model.counter.add(done * batch_size)
    return ChainResult(out[:done], done * batch_size / n, step, diverged=diverged)


def _sgld_block_py(model, xi, h, idx, z, out):
    for t in range(len(z)):
        with np.errstate(all="ignore"):
            g = model._datum_grads(xi, idx[t]).mean(axis=0)
            xi += -0.5 * h * g + math.sqrt(h) * z[t]
        out[t] = xi
        if not np.all(np.isfinite(xi)) or np.linalg.norm(xi) > DIVERGENCE_NORM:
            return t
    return -1


# ---------------------------------------------------------------------------
# metric serialisation


def fmt(x) -> str:
    """Round-trip float formatting with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


METRIC_COLUMNS = ("experiment", "method", "n", "seed", "metric", "value")


def metrics_csv(rows: Sequence[dict]) -> str:
    """Long-form CSV with one ``(experiment, method, n, seed, metric, value)`` row each."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["experiment"], r["method"], r["n"], r["seed"], r["metric"], fmt(r["value"])])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, MetricRecord):
        return _jsonable(asdict(obj))
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # 17 significant digits, emitted as a bare JSON number
        return _Raw(fmt(v)) if math.isfinite(v) else None
    return obj


class _Raw(float):
    def __new__(cls, text):
        obj = super().__new__(cls, float(text))
        obj.text = text
        return obj

    def __repr__(self):
        return self.text


def metrics_json(obj) -> str:
    """JSON text with floats printed at 17 significant digits and sorted keys."""
    return _dump(_jsonable(obj), 0) + "\n"


def _dump(obj, depth: int) -> str:
    pad = " " * (depth + 1)
    end = " " * depth
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dump(obj[k], depth + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_dump(v, depth + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, depth + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, _Raw):
        return obj.text
    return json.dumps(obj)
