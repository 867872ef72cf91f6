"""NARX state bookkeeping and the GP one-step prediction model.

A NARX state holds ``m_y + 1`` outputs (newest first) followed by ``m_u`` past
inputs.  The GP regressor for step ``k`` is the state with the current input
appended.  Everything the controller touches is in normalized units; use
:class:`Scaling` at the plant boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import GpModel


@dataclass(frozen=True)
class Scaling:
    """Affine maps of outputs and inputs onto ``[0, 1]`` over a reference range."""

    y_lo: float
    y_span: float
    u_lo: float
    u_span: float

    def __post_init__(self):
        if self.y_span <= 0 or self.u_span <= 0:
            raise ValueError("scaling spans must be positive")

    @classmethod
    def from_data(cls, y, u) -> "Scaling":
        y, u = np.asarray(y, dtype=float), np.asarray(u, dtype=float)
        return cls(float(y.min()), float(np.ptp(y)), float(u.min()), float(np.ptp(u)))

    def y(self, y):
        return (np.asarray(y, dtype=float) - self.y_lo) / self.y_span

    def u(self, u):
        return (np.asarray(u, dtype=float) - self.u_lo) / self.u_span

    def y_inv(self, yn):
        return np.asarray(yn, dtype=float) * self.y_span + self.y_lo

    def u_inv(self, un):
        return np.asarray(un, dtype=float) * self.u_span + self.u_lo

    def dy(self, dy):
        """Scale an output difference (no offset)."""
        return np.asarray(dy, dtype=float) / self.y_span

    def state(self, x, layout: "NarxLayout"):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.y(x[:layout.n_y]), self.u(x[layout.n_y:])])

    def state_inv(self, xn, layout: "NarxLayout"):
        xn = np.asarray(xn, dtype=float)
        return np.concatenate([self.y_inv(xn[:layout.n_y]), self.u_inv(xn[layout.n_y:])])


@dataclass(frozen=True)
class NarxLayout:
    m_y: int = 2
    m_u: int = 0

    @property
    def n_y(self) -> int:
        return self.m_y + 1

    @property
    def n_x(self) -> int:
        return self.m_y + self.m_u + 1

    @property
    def n_w(self) -> int:
        return self.n_x + 1

    def initial(self, y: float, u: float = 0.0) -> np.ndarray:
        """State of a system resting at output ``y`` under input ``u``."""
        return np.concatenate([np.full(self.n_y, float(y)), np.full(self.m_u, float(u))])

    def shift(self, x: np.ndarray, y_next: float, u: float) -> np.ndarray:
        """Next state given the new output and the input just applied."""
        out = np.empty(self.n_x)
        out[0] = y_next
        out[1:self.n_y] = x[:self.m_y]
        if self.m_u:
            out[self.n_y] = u
            out[self.n_y + 1:] = x[self.n_y:self.n_x - 1]
        return out

    def shift_matrices(self):
        """``(S, d_y, d_u)`` with ``shift(x, y, u) = S x + d_y y + d_u u``."""
        n = self.n_x
        s = np.zeros((n, n))
        for i in range(1, self.n_y):
            s[i, i - 1] = 1.0
        for i in range(self.n_y + 1, n):
            s[i, i - 1] = 1.0
        d_y = np.zeros(n)
        d_y[0] = 1.0
        d_u = np.zeros(n)
        if self.m_u:
            d_u[self.n_y] = 1.0
        return s, d_y, d_u


DEFAULT_LAYOUT = NarxLayout(2, 0)


def output_of(x) -> float:
    """Current output ``y_k = c^T x`` with ``c = e_1``."""
    return float(np.asarray(x)[0])


def regressor_of(x, u, scaling: Scaling | None = None,
                 layout: NarxLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Regressor ``[x; u]``; with ``scaling`` the inputs are taken in original units."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if scaling is not None:
        x = scaling.state(x, layout)
        u = scaling.u(u)
    return np.append(x, float(u))


def predict_step(model: GpModel, x, u, layout: NarxLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """One step of the nominal model: posterior-mean head, shifted history."""
    x = np.asarray(x, dtype=float)
    return layout.shift(x, model.mean(np.append(x, u)), u)


def rollout(model: GpModel, x0, u_seq, layout: NarxLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """States ``x_0 .. x_N`` under the input sequence, one row per step."""
    u_seq = np.atleast_1d(np.asarray(u_seq, dtype=float))
    xs = np.empty((len(u_seq) + 1, layout.n_x))
    xs[0] = x0
    for i, u in enumerate(u_seq):
        xs[i + 1] = predict_step(model, xs[i], u, layout)
    return xs


def rollout_sensitivity(model: GpModel, x0, u_seq, layout: NarxLayout = DEFAULT_LAYOUT):
    """Rollout plus ``dx_i/du`` as an ``(N+1, n_x, N)`` array (forward mode)."""
    u_seq = np.atleast_1d(np.asarray(u_seq, dtype=float))
    n = len(u_seq)
    s, d_y, d_u = layout.shift_matrices()
    xs = np.empty((n + 1, layout.n_x))
    jac = np.zeros((n + 1, layout.n_x, n))
    xs[0] = x0
    for i in range(n):
        m, g = model.mean_and_gradient(np.append(xs[i], u_seq[i]))
        xs[i + 1] = s @ xs[i] + d_y * m + d_u * u_seq[i]
        dm = g[:layout.n_x] @ jac[i]
        dm[i] += g[layout.n_x]
        jac[i + 1] = s @ jac[i] + np.outer(d_y, dm)
        jac[i + 1][:, i] += d_u
    return xs, jac
