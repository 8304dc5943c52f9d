"""Phase-space types, skeletons and the target-model interface."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np


class ModelEvaluationError(ArithmeticError):
    """A model returned a non-finite derivative."""


def _as_velocity(theta) -> np.ndarray:
    v = np.asarray(theta, dtype=np.int8)
    if v.ndim != 1 or not np.all(np.abs(v) == 1):
        raise ValueError("velocity entries must be exactly -1 or +1")
    return v


def _as_position(xi) -> np.ndarray:
    x = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("position must be a finite vector")
    return x


@dataclass(frozen=True)
class PhaseState:
    """A point ``(xi, theta)`` of the Zig-Zag state space."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_position(self.position))
        object.__setattr__(self, "velocity", _as_velocity(self.velocity))
        if self.position.shape != self.velocity.shape:
            raise ValueError("position and velocity dimensions differ")

    @property
    def dim(self) -> int:
        return self.position.size


def flip(velocity, i: int) -> np.ndarray:
    """Return a copy of ``velocity`` with component ``i`` negated."""
    v = _as_velocity(velocity).copy()
    if not 0 <= i < v.size:
        raise IndexError(f"coordinate {i} out of range for dimension {v.size}")
    v[i] = -v[i]
    return v


class SkeletonPoint(NamedTuple):
    time: float
    position: np.ndarray
    velocity: np.ndarray


@dataclass
class Skeleton:
    """Skeleton points of a piecewise-linear trajectory, stored column-wise.

    ``times`` has shape ``(K,)``, ``positions`` ``(K, d)`` and ``velocities``
    ``(K, d)`` with entries in ``{-1, +1}``.  Point ``k`` carries the velocity
    used on ``[times[k], times[k+1])``.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(self.times.size, -1)
        self.velocities = np.asarray(self.velocities, dtype=np.int8).reshape(self.times.size, -1)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, k: int) -> SkeletonPoint:
        return SkeletonPoint(float(self.times[k]), self.positions[k], self.velocities[k])

    @property
    def points(self) -> list[SkeletonPoint]:
        return [self[k] for k in range(len(self))]

    def switch_mask(self) -> np.ndarray:
        """True where the velocity differs from the previous point."""
        mask = np.zeros(len(self), dtype=bool)
        mask[1:] = np.any(self.velocities[1:] != self.velocities[:-1], axis=1)
        return mask

    def pruned(self) -> "Skeleton":
        """Drop proposal points at which no component switched.

        The first and last points are always kept, so the trajectory is unchanged.
        """
        keep = self.switch_mask()
        keep[0] = keep[-1] = True
        return Skeleton(self.times[keep], self.positions[keep], self.velocities[keep])

    @classmethod
    def from_points(cls, points: Sequence) -> "Skeleton":
        times = [p[0] for p in points]
        pos = [np.atleast_1d(p[1]) for p in points]
        vel = [np.atleast_1d(p[2]) for p in points]
        return cls(np.array(times), np.array(pos), np.array(vel))


def position_at(skeleton: Skeleton, t) -> PhaseState:
    """State of the trajectory at time ``t``."""
    if not skeleton.times[0] <= t <= skeleton.final_time:
        raise ValueError(f"t={t} outside simulated horizon [{skeleton.times[0]}, {skeleton.final_time}]")
    k = int(np.searchsorted(skeleton.times, t, side="right")) - 1
    xi = skeleton.positions[k] + skeleton.velocities[k] * (t - skeleton.times[k])
    return PhaseState(xi, skeleton.velocities[k])


def positions_at(skeleton: Skeleton, ts: np.ndarray) -> np.ndarray:
    """Vectorised ``position_at`` returning positions only, shape ``(len(ts), d)``."""
    ts = np.asarray(ts, dtype=np.float64)
    if ts.size and (ts.min() < skeleton.times[0] or ts.max() > skeleton.final_time):
        raise ValueError("times outside simulated horizon")
    k = np.searchsorted(skeleton.times, ts, side="right") - 1
    dt = (ts - skeleton.times[k])[:, None]
    return skeleton.positions[k] + skeleton.velocities[k] * dt


def validate_skeleton(skeleton: Skeleton, rtol: float = 1e-9) -> tuple[bool, list[str]]:
    """Check times, linear flow and single-component switches.

    Returns ``(ok, diagnostics)``; never raises on malformed skeletons.
    """
    msgs: list[str] = []
    t, x, v = skeleton.times, skeleton.positions, skeleton.velocities
    if len(skeleton) == 0:
        return False, ["empty skeleton"]
    if t[0] != 0.0:
        msgs.append(f"first time is {t[0]}, expected 0")
    if not np.all(np.abs(v) == 1):
        msgs.append("velocity entries outside {-1, +1}")
    dt = np.diff(t)
    for k in np.flatnonzero(dt <= 0) + 1:
        msgs.append(f"non-increasing time at {k}")
    pred = x[:-1] + v[:-1] * dt[:, None]
    scale = 1.0 + np.abs(x[:-1]) + np.abs(dt)[:, None]
    bad = np.any(np.abs(x[1:] - pred) > rtol * scale, axis=1)
    for k in np.flatnonzero(bad) + 1:
        msgs.append(f"flow violation at {k}")
    nflip = np.sum(v[1:] != v[:-1], axis=1)
    for k in np.flatnonzero(nflip > 1) + 1:
        msgs.append(f"{nflip[k - 1]} components flipped at {k}")
    return not msgs, msgs


# ---------------------------------------------------------------------------
# target models


@dataclass
class EvalCounter:
    """Per-datum gradient evaluations; one epoch is ``n_data`` units."""

    count: int = 0

    def add(self, k: int) -> None:
        self.count += int(k)


class ModelKernel(NamedTuple):
    """Scalar callbacks used by the sampler kernels.

    ``grad_i(data, xi, i)`` is the full derivative of psi and
    ``datum_i(data, xi, i, j)`` the per-datum term whose mean over ``j`` is
    ``grad_i``.  ``jitted`` says whether both are numba dispatchers.
    """

    data: object
    grad_i: Callable
    datum_i: Callable
    jitted: bool


def _py_grad_i(model, xi, i):
    return model._grad_i(xi, i)


def _py_datum_i(model, xi, i, j):
    return model._datum_i(xi, i, j)


class TargetModel:
    """Negative log density psi known up to an additive constant.

    Subclasses implement ``_datum_psi`` and ``_datum_grads`` (vectorised over
    data indices) and may override ``_grad`` / ``_grad_i`` / ``_datum_i`` with
    cheaper closed forms.  Public methods charge the evaluation counter:
    a full derivative costs ``n_data`` units, one per-datum term costs one.

    For ``n_data == 1`` the single "datum" term is psi itself.
    """

    dim: int = 1
    n_data: int = 1
    global_bounds: Optional[np.ndarray] = None
    hessian_dominator: Optional[np.ndarray] = None
    lipschitz: Optional[tuple[np.ndarray, float]] = None

    def __init__(self):
        self.counter = EvalCounter()

    # -- subclass hooks -------------------------------------------------
    def _datum_psi(self, xi, idx) -> np.ndarray:
        raise NotImplementedError

    def _datum_grads(self, xi, idx) -> np.ndarray:
        raise NotImplementedError

    def _psi(self, xi) -> float:
        return float(np.mean(self._datum_psi(xi, np.arange(self.n_data))))

    def _grad(self, xi) -> np.ndarray:
        return np.mean(self._datum_grads(xi, np.arange(self.n_data)), axis=0)

    def _grad_i(self, xi, i) -> float:
        return float(self._grad(xi)[i])

    def _datum_i(self, xi, i, j) -> float:
        return float(self._datum_grads(xi, np.array([j]))[0, i])

    def hessian(self, xi) -> Optional[np.ndarray]:
        return None

    # -- counted interface ----------------------------------------------
    def psi(self, xi) -> float:
        self.counter.add(self.n_data)
        return self._psi(np.asarray(xi, dtype=float))

    def grad(self, xi) -> np.ndarray:
        self.counter.add(self.n_data)
        g = self._grad(np.asarray(xi, dtype=float))
        if not np.all(np.isfinite(g)):
            raise ModelEvaluationError(f"non-finite gradient at {xi}")
        return g

    def grad_psi_i(self, xi, i: int) -> float:
        self.counter.add(self.n_data)
        g = self._grad_i(np.asarray(xi, dtype=float), i)
        if not math.isfinite(g):
            raise ModelEvaluationError(f"non-finite derivative {i} at {xi}")
        return g

    def estimator(self, xi, i: int, j: int) -> float:
        self.counter.add(1)
        return self._datum_i(np.asarray(xi, dtype=float), i, j)

    def datum_grads(self, xi, idx=None) -> np.ndarray:
        idx = np.arange(self.n_data) if idx is None else np.asarray(idx)
        self.counter.add(idx.size)
        return self._datum_grads(np.asarray(xi, dtype=float), idx)

    def datum_psi(self, xi, idx=None) -> np.ndarray:
        idx = np.arange(self.n_data) if idx is None else np.asarray(idx)
        self.counter.add(idx.size)
        return self._datum_psi(np.asarray(xi, dtype=float), idx)

    # -- sampler hooks --------------------------------------------------
    def kernel(self) -> ModelKernel:
        """Callbacks for the sampler kernels; pure Python unless overridden."""
        return ModelKernel(self, _py_grad_i, _py_datum_i, False)

    def zz_bounds(self):
        """``(bound_fn, data)`` valid for the full-gradient rate, or None."""
        from . import bounds

        if self.global_bounds is not None:
            return bounds.constant_bound, (np.asarray(self.global_bounds, dtype=float),)
        return None

    def ss_bounds(self):
        """``(bound_fn, data)`` dominating every per-datum rate, or None."""
        from . import bounds

        if self.global_bounds is not None:
            return bounds.constant_bound, (np.asarray(self.global_bounds, dtype=float),)
        return None

    def cv_bounds(self, ref):
        """``(bound_fn, data)`` for control-variate estimators centred at ``ref``."""
        from . import bounds

        if self.lipschitz is None:
            return None
        C, p = self.lipschitz
        return bounds.lipschitz_bound_fn(float(p)), (
            np.asarray(ref.xi_star, dtype=float),
            np.asarray(ref.grad_at_star, dtype=float),
            np.asarray(C, dtype=float),
            float(p),
        )

    def fresh(self) -> "TargetModel":
        """Shallow copy sharing the data but owning a new counter."""
        other = copy.copy(self)
        other.counter = EvalCounter()
        return other


# ---------------------------------------------------------------------------
# switching rates


@dataclass(frozen=True)
class RefreshRates:
    """Excess switching rates ``gamma_i(xi, theta)``.

    ``constant`` holds per-coordinate constants; ``fn`` optionally supplies a
    general rate, which must satisfy ``fn(xi, theta, i) == fn(xi, flip(theta, i), i)``.
    """

    constant: Optional[np.ndarray] = None
    fn: Optional[Callable] = field(default=None, compare=False)

    def value(self, xi, theta, i: int) -> float:
        g = 0.0 if self.constant is None else float(np.asarray(self.constant)[i])
        if self.fn is not None:
            g += float(self.fn(xi, theta, i))
        return g

    def as_array(self, d: int) -> np.ndarray:
        if self.fn is not None:
            raise NotImplementedError("samplers support constant refreshment only")
        if self.constant is None:
            return np.zeros(d)
        g = np.broadcast_to(np.asarray(self.constant, dtype=float), (d,)).copy()
        if np.any(g < 0):
            raise ValueError("refreshment rates must be nonnegative")
        return g


ZERO_REFRESH = RefreshRates()


def canonical_rate(model: TargetModel, state: PhaseState, i: int, gamma: RefreshRates = ZERO_REFRESH) -> float:
    """``(theta_i d_i psi(xi))^+ + gamma_i(xi, theta)``."""
    g = model.grad_psi_i(state.position, i)
    return max(float(state.velocity[i]) * g, 0.0) + gamma.value(state.position, state.velocity, i)
