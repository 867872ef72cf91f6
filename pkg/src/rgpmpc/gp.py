"""Exact GP regression with an ARD squared-exponential kernel and constant prior mean.

All quantities are in normalized units.  Solves against the kernel matrix go
through a cached Cholesky factor; nothing here ever forms ``K^{-1}``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import chol
from .chol import CholFactor
from .errors import BudgetExhausted, DimensionMismatch, EmptySet, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparameters:
    """Prior-mean constant ``c``, ARD lengthscales, signal and noise variance."""

    c: float
    lengthscales: tuple
    sigma_f2: float
    sigma_n2: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not ls or min(ls) <= 0:
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if not self.sigma_f2 > 0:
            raise ValueError(f"sigma_f2 must be positive, got {self.sigma_f2}")
        if self.sigma_n2 < 0:
            raise ValueError(f"sigma_n2 must be non-negative, got {self.sigma_n2}")

    @property
    def n_w(self) -> int:
        return len(self.lengthscales)

    @property
    def inv_ls2(self) -> np.ndarray:
        """Diagonal of the ARD precision matrix (``1 / l_i^2``)."""
        return 1.0 / np.square(np.asarray(self.lengthscales))


@dataclass(frozen=True)
class TrainingSet:
    """Ordered regressor/output pairs; row ``i`` of ``regressors`` pairs with ``outputs[i]``."""

    regressors: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.regressors, dtype=float)
        z = np.asarray(self.outputs, dtype=float).reshape(-1)
        if w.ndim == 1:
            w = w.reshape(len(z), -1) if len(z) else w.reshape(0, max(w.size, 0))
        if w.shape[0] != z.shape[0]:
            raise DimensionMismatch(f"{w.shape[0]} regressors but {z.shape[0]} outputs")
        w.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "regressors", w)
        object.__setattr__(self, "outputs", z)

    @classmethod
    def empty(cls, n_w: int) -> "TrainingSet":
        return cls(np.zeros((0, n_w)), np.zeros(0))

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def n_w(self) -> int:
        return self.regressors.shape[1]

    def appended(self, w, z: float) -> "TrainingSet":
        w = np.asarray(w, dtype=float).reshape(1, -1)
        return TrainingSet(np.vstack([self.regressors, w]), np.append(self.outputs, z))

    def without(self, index: int) -> "TrainingSet":
        return TrainingSet(np.delete(self.regressors, index, axis=0), np.delete(self.outputs, index))

    def union(self, other: "TrainingSet") -> "TrainingSet":
        return TrainingSet(np.vstack([self.regressors, other.regressors]),
                           np.concatenate([self.outputs, other.outputs]))

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx, dtype=int)
        return TrainingSet(self.regressors[idx], self.outputs[idx])


def kernel(w_i, w_j, theta: Hyperparameters, same_index: bool = False) -> float:
    """Covariance between two regressors; noise is added only when ``same_index``."""
    w_i = np.asarray(w_i, dtype=float).reshape(-1)
    w_j = np.asarray(w_j, dtype=float).reshape(-1)
    if w_i.shape[0] != theta.n_w or w_j.shape[0] != theta.n_w:
        raise DimensionMismatch(f"regressors of length {w_i.shape[0]}/{w_j.shape[0]}, "
                                f"kernel has {theta.n_w} lengthscales")
    d = w_i - w_j
    val = theta.sigma_f2 * math.exp(-0.5 * float(np.sum(d * d * theta.inv_ls2)))
    return val + (theta.sigma_n2 if same_index else 0.0)


def cross_cov(a: np.ndarray, b: np.ndarray, theta: Hyperparameters) -> np.ndarray:
    """Noise-free covariance matrix between the rows of ``a`` and ``b``."""
    s = np.sqrt(theta.inv_ls2)
    a = np.asarray(a, dtype=float) * s
    b = np.asarray(b, dtype=float) * s
    d2 = (np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T)
    return theta.sigma_f2 * np.exp(-0.5 * np.maximum(d2, 0.0))


def kernel_matrix(w: np.ndarray, theta: Hyperparameters) -> np.ndarray:
    k = cross_cov(w, w, theta)
    k[np.diag_indices_from(k)] = theta.sigma_f2 + theta.sigma_n2
    return k


@dataclass(frozen=True)
class GpModel:
    """A fitted GP: training data, hyperparameters, Cholesky factor of K and weights."""

    data: TrainingSet
    theta: Hyperparameters
    factor: CholFactor
    alpha: np.ndarray
    _scaled: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.factor.n != len(self.data):
            raise DimensionMismatch("factor size does not match training set")
        if self._scaled is None:
            object.__setattr__(self, "_scaled",
                               self.data.regressors * np.sqrt(self.theta.inv_ls2))

    @property
    def n(self) -> int:
        return len(self.data)

    def kvec(self, w: np.ndarray) -> np.ndarray:
        """Noise-free covariances between ``w`` and every training regressor."""
        ws = np.asarray(w, dtype=float) * np.sqrt(self.theta.inv_ls2)
        d = self._scaled - ws
        return self.theta.sigma_f2 * np.exp(-0.5 * np.einsum("ij,ij->i", d, d))

    def mean(self, w) -> float:
        w = _check_query(w, self.theta)
        if self.n == 0:
            return self.theta.c
        return self.theta.c + float(self.kvec(w) @ self.alpha)

    def posterior(self, w) -> tuple[float, float]:
        return posterior(self, w)

    def mean_gradient(self, w) -> np.ndarray:
        return posterior_mean_gradient(self, w)

    def mean_and_gradient(self, w) -> tuple[float, np.ndarray]:
        """Posterior mean and its gradient with one kernel-vector evaluation."""
        w = _check_query(w, self.theta)
        if self.n == 0:
            return self.theta.c, np.zeros(self.theta.n_w)
        k = self.kvec(w)
        ka = k * self.alpha
        diff = self.data.regressors - w
        grad = (ka @ diff) * self.theta.inv_ls2
        return self.theta.c + float(np.sum(ka)), grad


def _check_query(w, theta: Hyperparameters) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != theta.n_w:
        raise DimensionMismatch(f"query has length {w.shape[0]}, expected {theta.n_w}")
    return w


def assemble(data: TrainingSet, theta: Hyperparameters, factor: CholFactor) -> GpModel:
    """Build a model from an existing factor of ``K``; only ``alpha`` is solved for."""
    alpha = chol.solve(factor, data.outputs - theta.c)
    return GpModel(data, theta, factor, alpha)


def fit(data: TrainingSet, theta: Hyperparameters) -> GpModel:
    """Factorize the kernel matrix of ``data`` and solve for the weight vector.

    An empty training set gives the prior.
    """
    if data.n_w != theta.n_w:
        raise DimensionMismatch(f"data has {data.n_w} regressors, theta has {theta.n_w}")
    if len(data) == 0:
        return GpModel(data, theta, CholFactor.empty(), np.zeros(0))
    factor = chol.factorize(kernel_matrix(data.regressors, theta), jitter=1e-10 * theta.sigma_f2)
    return assemble(data, theta, factor)


def posterior(model: GpModel, w) -> tuple[float, float]:
    """Posterior mean and (clamped) variance of the latent function at ``w``."""
    w = _check_query(w, model.theta)
    if model.n == 0:
        return model.theta.c, model.theta.sigma_f2
    k = model.kvec(w)
    mean = model.theta.c + float(k @ model.alpha)
    v = chol.half_solve(model.factor, k)
    var = model.theta.sigma_f2 - float(v @ v)
    return mean, max(var, 0.0)


def posterior_unclamped_variance(model: GpModel, w) -> float:
    """Variance computed as ``k(w,w) - k^T beta`` with ``beta`` from a full solve."""
    w = _check_query(w, model.theta)
    if model.n == 0:
        return model.theta.sigma_f2
    k = model.kvec(w)
    beta = chol.solve(model.factor, k)
    return model.theta.sigma_f2 - float(k @ beta)


def posterior_mean_gradient(model: GpModel, w) -> np.ndarray:
    """Gradient of the posterior mean with respect to the regressor."""
    return model.mean_and_gradient(w)[1]


def log_marginal_likelihood(data: TrainingSet, theta: Hyperparameters) -> float:
    """Log evidence of ``data`` with the prior mean subtracted from the outputs."""
    if len(data) == 0:
        raise EmptySet("log marginal likelihood needs at least one point")
    model = fit(data, theta)
    resid = data.outputs - theta.c
    n = len(data)
    return float(-0.5 * resid @ model.alpha - 0.5 * model.factor.logdet() - 0.5 * n * LOG_2PI)


def _pack(theta: Hyperparameters) -> np.ndarray:
    return np.concatenate([[theta.c], np.log(theta.lengthscales), [math.log(theta.sigma_f2)]])


def _unpack(x: np.ndarray, sigma_n2: float) -> Hyperparameters:
    return Hyperparameters(float(x[0]), tuple(np.exp(x[1:-1])), float(math.exp(x[-1])), sigma_n2)


def optimize_hyperparameters(data: TrainingSet, theta0: Hyperparameters, budget: int = 2000,
                             n_starts: int = 8, seed: int = 0,
                             spread: float = 1.0) -> Hyperparameters:
    """Maximize the log marginal likelihood over ``c``, lengthscales and ``sigma_f2``.

    The noise variance stays at ``theta0.sigma_n2``.  Nelder-Mead runs from
    ``theta0`` and ``n_starts - 1`` random restarts in log-parameter space; the
    total function-evaluation budget is split evenly between starts.  A
    ``BudgetExhausted`` warning is issued if any start ran out of evaluations.
    The result never scores below ``theta0``.
    """
    if budget <= 0:
        return theta0
    if len(data) < 5:
        raise EmptySet("hyperparameter optimization needs at least 5 points")
    sn2 = theta0.sigma_n2

    def negll(x):
        if np.any(np.abs(x[1:]) > 12):
            return 1e10
        try:
            return -log_marginal_likelihood(data, _unpack(x, sn2))
        except (NotPositiveDefinite, ValueError, FloatingPointError):
            return 1e10

    rng = np.random.default_rng(seed)
    x0 = _pack(theta0)
    best_x, best_f = x0, negll(x0)
    per_start = max(budget // n_starts, 1)
    exhausted = False
    for i in range(n_starts):
        start = x0 if i == 0 else x0 + rng.normal(0.0, spread, size=x0.shape)
        res = minimize(negll, start, method="Nelder-Mead",
                       options={"maxfev": per_start, "xatol": 1e-6, "fatol": 1e-9})
        if res.nfev >= per_start and not res.success:
            exhausted = True
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
    if exhausted:
        warnings.warn(f"hyperparameter search hit its budget of {budget} evaluations",
                      BudgetExhausted, stacklevel=2)
    return _unpack(best_x, sn2) if best_x is not x0 else theta0


def with_theta(theta: Hyperparameters, **changes) -> Hyperparameters:
    return replace(theta, **changes)
