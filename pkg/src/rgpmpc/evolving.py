"""Online training-set management for the recursive GP.

New points are appended to the end of the Cholesky factor and evictions
remove position 0, so the training set behaves as a FIFO queue.  Every
operation returns a new :class:`~rgpmpc.gp.GpModel`; the source model is never
modified, which lets the value gate discard a candidate at no cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import chol, gp
from .errors import EmptySet, NotPositiveDefinite
from .gp import GpModel

DUPLICATE_TOL = 1e-9


@dataclass(frozen=True)
class EvolvingConfig:
    e_bar: float = 0.0
    sigma2_bar: float = 0.0
    capacity_m: float = math.inf

    def __post_init__(self):
        if self.e_bar < 0 or self.sigma2_bar < 0:
            raise ValueError("thresholds must be non-negative")
        if self.capacity_m < 1:
            raise ValueError("capacity must be at least 1")


@dataclass(frozen=True)
class Screening:
    """Outcome of the candidate test for one incoming point."""

    flag: bool
    error: float
    variance: float


@dataclass(frozen=True)
class UpdateEvent:
    """One row of the update log streamed to the harness."""

    k: int
    candidate: bool
    accepted: bool
    abs_error: float
    variance: float
    n_points: int
    note: str = ""


def is_candidate(model: GpModel, w, y_next: float, cfg: EvolvingConfig) -> Screening:
    """Flag a point whose prediction error or posterior variance exceeds its threshold."""
    mean, var = gp.posterior(model, w)
    err = float(y_next - mean)
    return Screening(abs(err) > cfg.e_bar or var > cfg.sigma2_bar, err, var)


def _appended_factor(model: GpModel, w: np.ndarray):
    theta = model.theta
    if model.n:
        nearest = np.min(np.linalg.norm(model.data.regressors - w, axis=1))
        if nearest < DUPLICATE_TOL:
            raise NotPositiveDefinite(f"regressor duplicates a training point (distance {nearest:.2e})")
    col = model.kvec(w) if model.n else np.zeros(0)
    return chol.append(model.factor, col, theta.sigma_f2 + theta.sigma_n2,
                       jitter=1e-10 * theta.sigma_f2)


def with_point(model: GpModel, w, y_next: float) -> GpModel:
    """Candidate model with ``(w, y_next)`` appended.

    Raises ``NotPositiveDefinite`` for a near-duplicate regressor or a failed
    factor update; the caller is expected to skip the point.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    return gp.assemble(model.data.appended(w, y_next), model.theta, _appended_factor(model, w))


def evict_oldest(model: GpModel) -> GpModel:
    """Model without its earliest-inserted point."""
    if model.n == 0:
        raise EmptySet("cannot evict from an empty training set")
    return gp.assemble(model.data.without(0), model.theta, chol.remove(model.factor, 0))


def grow(model: GpModel, w, y_next: float, cfg: EvolvingConfig) -> GpModel:
    """Insert, evict the oldest point if over capacity, then solve for the weights."""
    w = np.asarray(w, dtype=float).reshape(-1)
    factor = _appended_factor(model, w)
    data = model.data.appended(w, y_next)
    if data.outputs.shape[0] > cfg.capacity_m:
        factor = chol.remove(factor, 0)
        data = data.without(0)
    return gp.assemble(data, model.theta, factor)


def propose(model: GpModel, w, y_next: float, cfg: EvolvingConfig) -> GpModel | None:
    """Candidate model for the incoming point, or ``None`` if it is not a candidate."""
    if not is_candidate(model, w, y_next, cfg).flag:
        return None
    return grow(model, w, y_next, cfg)
