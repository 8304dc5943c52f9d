"""Target models: Gaussian, Cauchy and logistic posteriors.

Each model supplies jitted per-coordinate derivatives for the sampler
kernels and the bound metadata its samplers need.  For factorised
posteriors ``psi = mean_j psi^j`` with ``psi^j = -log prior - n log f(x^j)``.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from numba import njit

from .core import ModelKernel, TargetModel
from .samplers import make_rng

INF = math.inf


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# Gaussian mean with conjugate prior

# data tuple: (x, rho^2, 1/sigma^2, sum(x), min(x), max(x))


@njit(cache=True)
def _gauss_grad_i(data, xi, i):
    x, rho2, s2inv, sumx = data[0], data[1], data[2], data[3]
    return rho2 * xi[0] + s2inv * (x.size * xi[0] - sumx)


@njit(cache=True)
def _gauss_datum_i(data, xi, i, j):
    x, rho2, s2inv = data[0], data[1], data[2]
    return rho2 * xi[0] + x.size * s2inv * (xi[0] - x[j])


@njit(cache=True)
def _gauss_zz_bound(data, xi, theta, a, b, c):
    # the rate along the segment is exactly (theta psi'(xi) + Q t)^+
    x, rho2, s2inv = data[0], data[1], data[2]
    q = rho2 + x.size * s2inv
    a[0] = theta[0] * _gauss_grad_i(data, xi, 0)
    b[0] = q
    c[0] = INF
    return INF


@njit(cache=True)
def _gauss_ss_bound(data, xi, theta, a, b, c):
    # max over j of theta * dpsi^j is attained at an extreme observation
    x, rho2, s2inv, xmin, xmax = data[0], data[1], data[2], data[4], data[5]
    n = x.size
    q = rho2 + n * s2inv
    lo = xmin if theta[0] > 0 else -xmax
    a[0] = theta[0] * q * xi[0] - n * s2inv * lo
    b[0] = q
    c[0] = INF
    return INF


class GaussianMeanModel(TargetModel):
    """Unknown mean of i.i.d. ``N(xi, sigma^2)`` data under a ``N(0, 1/rho^2)`` prior."""

    def __init__(self, x, sigma: float = 1.0, rho: float = 1.0):
        super().__init__()
        self.x = np.ascontiguousarray(x, dtype=float)
        if self.x.ndim != 1 or self.x.size < 1:
            raise ValueError("x must be a nonempty vector")
        if sigma <= 0 or rho <= 0:
            raise ValueError("sigma and rho must be positive")
        self.sigma, self.rho = float(sigma), float(rho)
        self.dim = 1
        self.n_data = self.x.size
        self.precision = rho**2 + self.n_data / sigma**2
        self.hessian_dominator = np.array([[self.precision]])
        self.lipschitz = (np.array([self.precision]), 2.0)
        self._data = (self.x, rho**2, 1.0 / sigma**2, float(self.x.sum()),
                      float(self.x.min()), float(self.x.max()))

    @classmethod
    def standard_normal(cls, n: int = 100, seed: int = 0) -> "GaussianMeanModel":
        """A factorisation of ``N(0, 1)`` into ``n`` terms with centred data."""
        x = make_rng(seed, 7).standard_normal(n)
        x -= x.mean()
        return cls(x, sigma=math.sqrt(2.0 * n), rho=math.sqrt(0.5))

    @property
    def posterior_mean(self) -> float:
        return float(self.x.sum() / self.sigma**2 / self.precision)

    @property
    def posterior_var(self) -> float:
        return 1.0 / self.precision

    def _datum_psi(self, xi, idx):
        n = self.n_data
        return 0.5 * self.rho**2 * xi[0] ** 2 + n * (xi[0] - self.x[idx]) ** 2 / (2 * self.sigma**2)

    def _datum_grads(self, xi, idx):
        n = self.n_data
        g = self.rho**2 * xi[0] + n * (xi[0] - self.x[idx]) / self.sigma**2
        return g[:, None]

    def _grad(self, xi):
        return np.array([_gauss_grad_i(self._data, xi, 0)])

    def _grad_i(self, xi, i):
        return _gauss_grad_i(self._data, np.asarray(xi, dtype=float), i)

    def _datum_i(self, xi, i, j):
        return _gauss_datum_i(self._data, np.asarray(xi, dtype=float), i, j)

    def hessian(self, xi):
        return self.hessian_dominator.copy()

    def kernel(self):
        return ModelKernel(self._data, _gauss_grad_i, _gauss_datum_i, True)

    def zz_bounds(self):
        return _gauss_zz_bound, self._data

    def ss_bounds(self):
        return _gauss_ss_bound, self._data

    def subsampled(self, idx) -> "GaussianMeanModel":
        """Same posterior family built from ``x[idx]`` with the likelihood reweighted by ``n/m``."""
        idx = np.asarray(idx)
        return GaussianMeanModel(self.x[idx], self.sigma * math.sqrt(idx.size / self.n_data), self.rho)


# ---------------------------------------------------------------------------
# product Gaussian and Cauchy (non-factorised, n = 1)


@njit(cache=True)
def _prod_grad_i(data, xi, i):
    return data[0][i] * xi[i]


@njit(cache=True)
def _prod_datum_i(data, xi, i, j):
    return data[0][i] * xi[i]


@njit(cache=True)
def _prod_zz_bound(data, xi, theta, a, b, c):
    prec = data[0]
    for i in range(xi.size):
        a[i] = theta[i] * prec[i] * xi[i]
        b[i] = prec[i]
        c[i] = INF
    return INF


class ProductGaussianModel(TargetModel):
    """Independent centred Gaussian coordinates with standard deviations ``sigmas``."""

    def __init__(self, sigmas):
        super().__init__()
        s = np.atleast_1d(np.asarray(sigmas, dtype=float))
        if np.any(s <= 0):
            raise ValueError("sigmas must be positive")
        self.sigmas = s
        self.dim = s.size
        self.n_data = 1
        prec = 1.0 / s**2
        self.hessian_dominator = np.diag(prec)
        self.lipschitz = (prec.copy(), INF)
        self._data = (prec,)

    def _datum_psi(self, xi, idx):
        return np.full(len(idx), 0.5 * float(np.sum(xi**2 * self._data[0])))

    def _datum_grads(self, xi, idx):
        return np.tile(self._data[0] * xi, (len(idx), 1))

    def hessian(self, xi):
        return self.hessian_dominator.copy()

    def kernel(self):
        return ModelKernel(self._data, _prod_grad_i, _prod_datum_i, True)

    def zz_bounds(self):
        return _prod_zz_bound, self._data


@njit(cache=True)
def _cauchy_grad_i(data, xi, i):
    return 2.0 * xi[0] / (1.0 + xi[0] * xi[0])


@njit(cache=True)
def _cauchy_datum_i(data, xi, i, j):
    return 2.0 * xi[0] / (1.0 + xi[0] * xi[0])


class CauchyModel(TargetModel):
    """Standard Cauchy: ``psi = log(1 + xi^2)``, derivative bounded by one."""

    def __init__(self):
        super().__init__()
        self.dim = 1
        self.n_data = 1
        self.global_bounds = np.array([1.0])
        self._data = (0.0,)

    def _datum_psi(self, xi, idx):
        return np.full(len(idx), math.log1p(xi[0] ** 2))

    def _datum_grads(self, xi, idx):
        return np.full((len(idx), 1), 2 * xi[0] / (1 + xi[0] ** 2))

    def hessian(self, xi):
        return np.array([[2 * (1 - xi[0] ** 2) / (1 + xi[0] ** 2) ** 2]])

    def kernel(self):
        return ModelKernel(self._data, _cauchy_grad_i, _cauchy_datum_i, True)


# ---------------------------------------------------------------------------
# logistic regression, flat prior

# data tuple: (X (n, d), y (n,))


@njit(cache=True)
def _logit_grad_i(data, xi, i):
    X, y = data[0], data[1]
    n, d = X.shape
    acc = 0.0
    for j in range(n):
        z = 0.0
        for k in range(d):
            z += X[j, k] * xi[k]
        acc += X[j, i] * (_sigmoid(z) - y[j])
    return acc


@njit(cache=True)
def _logit_datum_i(data, xi, i, j):
    X, y = data[0], data[1]
    n, d = X.shape
    z = 0.0
    for k in range(d):
        z += X[j, k] * xi[k]
    return n * X[j, i] * (_sigmoid(z) - y[j])


class LogisticModel(TargetModel):
    """Bernoulli-logit regression with ``P(y=1) = sigmoid(<xi, x>)`` and a flat prior."""

    def __init__(self, X, y):
        super().__init__()
        X = np.ascontiguousarray(X, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (n, d) and y (n,)")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        self.X, self.y = X, y
        self.n_data, self.dim = X.shape
        n = self.n_data
        absX = np.abs(X)
        self.global_bounds = n * absX.max(axis=0)
        self.full_bounds = absX.sum(axis=0)
        self.hessian_dominator = 0.25 * X.T @ X
        row_norms = np.linalg.norm(X, axis=1)
        self.lipschitz = (0.25 * n * np.max(absX * row_norms[:, None], axis=0), 2.0)
        self._data = (X, y)

    def _z(self, xi, idx):
        return self.X[idx] @ xi

    def _datum_psi(self, xi, idx):
        z = self._z(xi, idx)
        return self.n_data * (np.logaddexp(0.0, z) - self.y[idx] * z)

    def _datum_grads(self, xi, idx):
        r = sigmoid(self._z(xi, idx)) - self.y[idx]
        return self.n_data * self.X[idx] * r[:, None]

    def _psi(self, xi):
        z = self.X @ xi
        return float(np.sum(np.logaddexp(0.0, z) - self.y * z))

    def _grad(self, xi):
        return self.X.T @ (sigmoid(self.X @ xi) - self.y)

    def _grad_i(self, xi, i):
        return _logit_grad_i(self._data, np.asarray(xi, dtype=float), i)

    def _datum_i(self, xi, i, j):
        return _logit_datum_i(self._data, np.asarray(xi, dtype=float), i, j)

    def hessian(self, xi):
        s = sigmoid(self.X @ xi)
        w = s * (1 - s)
        return (self.X * w[:, None]).T @ self.X

    def kernel(self):
        return ModelKernel(self._data, _logit_grad_i, _logit_datum_i, True)

    def zz_bounds(self):
        from .bounds import constant_bound

        return constant_bound, (self.full_bounds,)


# ---------------------------------------------------------------------------
# non-identifiable logistic regression: P(y=1) = sigmoid((xi1 + xi2^2) x)

# data tuple: (x, y, L, U, K, X1, X2, horizon_scale) where [L, U] brackets
# sum_j x_j (sigmoid - y_j), K = max(|1+2L|, |1+2U|), X1 = max|x|, X2 = max x^2


@njit(cache=True)
def _nonid_g(data, s):
    x, y = data[0], data[1]
    acc = 0.0
    for j in range(x.size):
        acc += x[j] * (_sigmoid(s * x[j]) - y[j])
    return acc


@njit(cache=True)
def _nonid_grad_i(data, xi, i):
    g = _nonid_g(data, xi[0] + xi[1] * xi[1])
    if i == 0:
        return xi[0] + g
    return xi[1] * (1.0 + 2.0 * g)


@njit(cache=True)
def _nonid_datum_i(data, xi, i, j):
    x, y = data[0], data[1]
    s = xi[0] + xi[1] * xi[1]
    r = x.size * x[j] * (_sigmoid(s * x[j]) - y[j])
    if i == 0:
        return xi[0] + r
    return xi[1] * (1.0 + 2.0 * r)


@njit(cache=True)
def _nonid_zz_consts(data, xi, theta, h, out):
    L, U, K = data[2], data[3], data[4]
    g1 = U if theta[0] > 0 else -L
    out[0] = max(theta[0] * xi[0] + h + g1, 0.0)
    out[1] = (abs(xi[1]) + h) * K


@njit(cache=True)
def _nonid_zz_bound(data, xi, theta, a, b, c):
    scale = data[7]
    _nonid_zz_consts(data, xi, theta, 0.0, a)
    h = scale / max(a[0], a[1], 1e-12)
    for _ in range(64):
        _nonid_zz_consts(data, xi, theta, h, a)
        if h * max(a[0], a[1]) <= 2.0 * scale:
            break
        h *= 0.5
    for i in range(2):
        b[i] = 0.0
        c[i] = INF
    return h


@njit(cache=True)
def _nonid_ss_consts(data, xi, h, out):
    n, X1 = data[0].size, data[5]
    out[0] = abs(xi[0]) + h + n * X1
    out[1] = (abs(xi[1]) + h) * (1.0 + 2.0 * n * X1)


@njit(cache=True)
def _nonid_ss_bound(data, xi, theta, a, b, c):
    scale = data[7]
    _nonid_ss_consts(data, xi, 0.0, a)
    h = scale / max(a[0], a[1], 1e-12)
    for _ in range(64):
        _nonid_ss_consts(data, xi, h, a)
        if h * max(a[0], a[1]) <= 2.0 * scale:
            break
        h *= 0.5
    for i in range(2):
        b[i] = 0.0
        c[i] = INF
    return h


@njit(cache=True)
def _nonid_cv_consts(data, ref, xi, theta, h, out):
    n, X1, X2 = data[0].size, data[5], data[6]
    xs, gs = ref[0], ref[1]
    R = max(abs(xs[1]), abs(xi[1]) + h)
    d1 = abs(xi[0] - xs[0]) + h
    d2 = abs(xi[1] - xs[1]) + h
    l11 = 1.0 + 0.25 * n * X2
    l12 = 0.5 * n * X2 * R
    l22 = 1.0 + 2.0 * n * X1 + n * X2 * R * R
    out[0] = max(theta[0] * gs[0], 0.0) + l11 * d1 + l12 * d2
    out[1] = max(theta[1] * gs[1], 0.0) + l12 * d1 + l22 * d2


@njit(cache=True)
def _nonid_cv_bound(bdata, xi, theta, a, b, c):
    data, ref = bdata[0], bdata[1]
    scale = data[7]
    _nonid_cv_consts(data, ref, xi, theta, 0.0, a)
    h = scale / max(a[0], a[1], 1e-12)
    for _ in range(64):
        _nonid_cv_consts(data, ref, xi, theta, h, a)
        if h * max(a[0], a[1]) <= 2.0 * scale:
            break
        h *= 0.5
    for i in range(2):
        b[i] = 0.0
        c[i] = INF
    return h


class NonIdentifiableLogisticModel(TargetModel):
    """Logistic model in ``xi1 + xi2^2`` with a standard normal prior.

    The Hessian is unbounded, so the samplers use horizon-limited constant
    bounds built from monotone envelopes of the derivatives on ``[0, h]``.
    The horizon is halved from ``horizon_scale / M(0)`` until the expected
    number of proposals ``h * M(h)`` is at most ``2 * horizon_scale``.
    """

    def __init__(self, x, y, horizon_scale: float = 1.0):
        super().__init__()
        x = np.ascontiguousarray(x, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
        if x.ndim != 1 or y.shape != x.shape:
            raise ValueError("x and y must be vectors of equal length")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        self.x, self.y = x, y
        self.dim = 2
        self.n_data = x.size
        lo, hi = -x * y, x * (1 - y)
        L = float(np.minimum(lo, hi).sum())
        U = float(np.maximum(lo, hi).sum())
        K = max(abs(1 + 2 * L), abs(1 + 2 * U))
        self._data = (x, y, L, U, K, float(np.abs(x).max()), float((x**2).max()), float(horizon_scale))

    def _s(self, xi):
        return xi[0] + xi[1] ** 2

    def _datum_psi(self, xi, idx):
        z = self._s(xi) * self.x[idx]
        return 0.5 * (xi[0] ** 2 + xi[1] ** 2) + self.n_data * (np.logaddexp(0.0, z) - self.y[idx] * z)

    def _datum_grads(self, xi, idx):
        z = self._s(xi) * self.x[idx]
        r = self.n_data * self.x[idx] * (sigmoid(z) - self.y[idx])
        return np.column_stack([xi[0] + r, xi[1] * (1 + 2 * r)])

    def _psi(self, xi):
        z = self._s(xi) * self.x
        return float(0.5 * (xi[0] ** 2 + xi[1] ** 2) + np.sum(np.logaddexp(0.0, z) - self.y * z))

    def _grad(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.array([_nonid_grad_i(self._data, xi, 0), _nonid_grad_i(self._data, xi, 1)])

    def _grad_i(self, xi, i):
        return _nonid_grad_i(self._data, np.asarray(xi, dtype=float), i)

    def _datum_i(self, xi, i, j):
        return _nonid_datum_i(self._data, np.asarray(xi, dtype=float), i, j)

    def hessian(self, xi):
        s = self._s(xi)
        p = sigmoid(s * self.x)
        g = float(np.sum(self.x * (p - self.y)))
        w = float(np.sum(self.x**2 * p * (1 - p)))
        return np.array([
            [1 + w, 2 * xi[1] * w],
            [2 * xi[1] * w, 1 + 2 * g + 4 * xi[1] ** 2 * w],
        ])

    def kernel(self):
        return ModelKernel(self._data, _nonid_grad_i, _nonid_datum_i, True)

    def zz_bounds(self):
        return _nonid_zz_bound, self._data

    def ss_bounds(self):
        return _nonid_ss_bound, self._data

    def cv_bounds(self, ref):
        r = (np.asarray(ref.xi_star, dtype=float), np.asarray(ref.grad_at_star, dtype=float))
        return _nonid_cv_bound, (self._data, r)


# ---------------------------------------------------------------------------
# synthetic data and CSV interchange


def synth_gaussian(n: int, xi0: float = 1.0, sigma: float = 1.0, seed: int = 0, rho: float = 1.0) -> GaussianMeanModel:
    if n < 1:
        raise ValueError("n must be at least 1")
    x = xi0 + sigma * make_rng(seed, 11).standard_normal(n)
    return GaussianMeanModel(x, sigma=sigma, rho=rho)


def synth_logistic(n: int, d: int = 2, xi_true=(1.0, 2.0), seed: int = 0) -> LogisticModel:
    """Covariates ``N(0, 1)`` with an intercept column of ones."""
    if n < 1:
        raise ValueError("n must be at least 1")
    xi_true = np.broadcast_to(np.asarray(xi_true, dtype=float), (d,))
    rng = make_rng(seed, 12)
    X = np.ones((n, d))
    X[:, 1:] = rng.standard_normal((n, d - 1))
    y = (rng.random(n) < sigmoid(X @ xi_true)).astype(float)
    return LogisticModel(X, y)


def synth_nonident(n: int, xi_true=(-2.0, 1.0), seed: int = 0, horizon_scale: float = 1.0) -> NonIdentifiableLogisticModel:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed, 13)
    x = rng.standard_normal(n)
    s = xi_true[0] + xi_true[1] ** 2
    y = (rng.random(n) < sigmoid(s * x)).astype(float)
    return NonIdentifiableLogisticModel(x, y, horizon_scale=horizon_scale)


def dataset_columns(model: TargetModel) -> tuple[list[str], np.ndarray]:
    if isinstance(model, GaussianMeanModel):
        return ["x"], model.x[:, None]
    if isinstance(model, LogisticModel):
        names = [f"x_{i + 1}" for i in range(model.dim)] + ["y"]
        return names, np.column_stack([model.X, model.y])
    if isinstance(model, NonIdentifiableLogisticModel):
        return ["x", "y"], np.column_stack([model.x, model.y])
    raise TypeError(f"{type(model).__name__} has no tabular data")


def save_csv(model: TargetModel, path) -> None:
    """One row per observation: covariates, then the label if any."""
    names, rows = dataset_columns(model)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def load_csv(path, kind: str, **params) -> TargetModel:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if kind == "gaussian":
        return GaussianMeanModel(data[:, 0], **params)
    if kind == "logistic":
        return LogisticModel(data[:, :-1], data[:, -1])
    if kind == "nonident":
        return NonIdentifiableLogisticModel(data[:, 0], data[:, 1], **params)
    raise ValueError(f"unknown dataset kind {kind!r}")


MODEL_KINDS = ("gaussian", "logistic", "nonident")
