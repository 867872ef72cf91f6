"""Terminal controller and cost from the linearized GP model.

The pair ``(k, P)`` comes from the log-det maximization

    max  log det G
    s.t. [[G, (A G + b s^T)^T], [A G + b s^T, G]] >= 0
         [[G, G q_i], [q_i^T G, r_i^2]] >= 0      (state half-spaces)
         [[G, s v_l], [v_l s^T, t_l^2]] >= 0      (input half-spaces)

with ``P = G^{-1}`` and ``k = P s``.  The problem is tiny (a handful of 3x3
blocks), so it is solved here with a plain barrier interior-point method.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov

from .errors import Infeasible
from .gp import GpModel
from .narx import DEFAULT_LAYOUT, NarxLayout, Scaling


@dataclass(frozen=True)
class LinearModel:
    a_matrix: np.ndarray
    b_vector: np.ndarray

    @property
    def n_x(self) -> int:
        return self.a_matrix.shape[0]


@dataclass(frozen=True)
class TerminalPair:
    k_vector: np.ndarray
    p_matrix: np.ndarray
    g_matrix: np.ndarray | None = None
    s_vector: np.ndarray | None = None

    def control(self, x_dev: np.ndarray) -> float:
        """Terminal feedback ``k^T (x - x_ref)`` (add ``u_ref`` for the input)."""
        return float(self.k_vector @ x_dev)

    def cost(self, x_dev: np.ndarray) -> float:
        return float(x_dev @ self.p_matrix @ x_dev)

    def scaled(self, factor: float) -> "TerminalPair":
        return TerminalPair(self.k_vector, factor * self.p_matrix, self.g_matrix, self.s_vector)


def companion(first_row, b1: float, layout: NarxLayout = DEFAULT_LAYOUT) -> LinearModel:
    """Linear NARX model with the given output row; all other rows are pure shifts."""
    s, d_y, d_u = layout.shift_matrices()
    a = s.copy()
    a[0, :] = np.asarray(first_row, dtype=float)
    b = d_u.copy()
    b[0] = b1
    return LinearModel(a, b)


def linearize(model: GpModel, w_ref, scaling: Scaling | None = None,
              layout: NarxLayout = DEFAULT_LAYOUT) -> LinearModel:
    """Jacobian of the nominal model at ``w_ref``.

    ``w_ref`` and the result are in the model's normalized units unless
    ``scaling`` is given, in which case ``w_ref`` is in original units and the
    input column is converted back to original units as well.
    """
    w_ref = np.asarray(w_ref, dtype=float)
    if scaling is not None:
        w_ref = np.append(scaling.state(w_ref[:-1], layout), scaling.u(w_ref[-1]))
    g = model.mean_gradient(w_ref)
    row, b1 = g[:layout.n_x].copy(), float(g[layout.n_x])
    if scaling is not None:
        # output rows map y->y (spans cancel); input column picks up y_span/u_span
        b1 *= scaling.y_span / scaling.u_span
        row[layout.n_y:] *= scaling.y_span / scaling.u_span
    return companion(row, b1, layout)


def box_halfspaces(lo, hi, ref):
    """Rows ``(q, r)`` with ``q^T (x - ref) <= r`` for a box; infinite sides are skipped."""
    lo, hi, ref = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (lo, hi, ref))
    qs, rs = [], []
    for i in range(len(ref)):
        e = np.zeros(len(ref))
        e[i] = 1.0
        if np.isfinite(hi[i]):
            qs.append(e)
            rs.append(hi[i] - ref[i])
        if np.isfinite(lo[i]):
            qs.append(-e)
            rs.append(ref[i] - lo[i])
    if any(r <= 0 for r in rs):
        raise Infeasible("reference lies on or outside the constraint box")
    return np.array(qs), np.array(rs)


class _Sdp:
    """Affine LMI data for the terminal problem in the packed variable ``z = (vech G, s)``."""

    def __init__(self, a, b, qs, rs, vs, ts):
        self.a, self.b = a, b
        self.n = a.shape[0]
        self.iu = np.triu_indices(self.n)
        self.nz = len(self.iu[0]) + self.n
        self.qs, self.rs, self.vs, self.ts = qs, rs, vs, ts
        zero = np.zeros(self.nz)
        self.g0 = self.unpack_g(zero)
        self.gb = [self.unpack_g(e) - self.g0 for e in np.eye(self.nz)]
        self.f0 = self.lmis(zero)
        basis = [self.lmis(e) for e in np.eye(self.nz)]
        self.fb = [np.array([basis[i][j] - self.f0[j] for i in range(self.nz)])
                   for j in range(len(self.f0))]
        self.gb = np.array(self.gb)

    def unpack_g(self, z):
        g = np.zeros((self.n, self.n))
        g[self.iu] = z[:len(self.iu[0])]
        return g + np.triu(g, 1).T

    def unpack(self, z):
        return self.unpack_g(z), z[len(self.iu[0]):]

    def pack(self, g, s):
        return np.concatenate([g[self.iu], s])

    def lmis(self, z):
        g, s = self.unpack(z)
        m = self.a @ g + np.outer(self.b, s)
        out = [np.block([[g, m.T], [m, g]])]
        for q, r in zip(self.qs, self.rs):
            gq = (g @ q)[:, None]
            out.append(np.block([[g, gq], [gq.T, np.array([[r * r]])]]))
        for v, t in zip(self.vs, self.ts):
            sv = (s * v)[:, None]
            out.append(np.block([[g, sv], [sv.T, np.array([[t * t]])]]))
        return out

    def eval(self, z):
        mats = [f0 + np.tensordot(z, fb, axes=1) for f0, fb in zip(self.f0, self.fb)]
        g = self.g0 + np.tensordot(z, self.gb, axes=1)
        return g, mats


def _logdet_pd(m) -> float | None:
    """``log det m`` via Cholesky, or ``None`` when ``m`` is not positive definite."""
    try:
        return 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(m)))))
    except np.linalg.LinAlgError:
        return None


def _feasible_start(sdp: _Sdp):
    a, b = sdp.a, sdp.b
    n = sdp.n
    try:
        x = solve_discrete_are(a, b[:, None], np.eye(n), np.eye(1))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise Infeasible(f"(A, b) is not stabilizable: {exc}") from None
    k = -np.linalg.solve(np.eye(1) + b[None, :] @ x @ b[:, None], b[None, :] @ x @ a).ravel()
    acl = a + np.outer(b, k)
    if np.max(np.abs(np.linalg.eigvals(acl))) >= 1:
        raise Infeasible("no stabilizing feedback found")
    g = solve_discrete_lyapunov(acl, np.eye(n))
    caps = [r * r / (q @ g @ q) for q, r in zip(sdp.qs, sdp.rs)]
    kgk = k @ g @ k
    caps += [t * t / (v * v * kgk) for v, t in zip(sdp.vs, sdp.ts) if kgk > 0]
    c = 0.5 * min(caps) if caps else 1.0
    return sdp.pack(c * g, c * (g @ k))


def _solve_barrier(sdp: _Sdp, z, tol=1e-11, mu=8.0, max_newton=100):
    m_total = sum(f.shape[0] for f in sdp.f0)
    t = 1.0
    while True:
        for _ in range(max_newton):
            g, mats = sdp.eval(z)
            gi = np.linalg.inv(g) @ sdp.gb
            grad = -t * np.einsum("iaa->i", gi)
            hess = t * np.einsum("iab,jba->ij", gi, gi)
            for f, fb in zip(mats, sdp.fb):
                fi = np.linalg.inv(f) @ fb
                grad -= np.einsum("iaa->i", fi)
                hess += np.einsum("iab,jba->ij", fi, fi)
            step = -np.linalg.solve(hess, grad)
            dec2 = -grad @ step
            if dec2 / 2 < 1e-12:
                break
            phi0 = _barrier_value(sdp, z, t)
            h = 1.0
            while h > 1e-10:
                zn = z + h * step
                if _barrier_value(sdp, zn, t) <= phi0 - 0.25 * h * dec2:
                    break
                h *= 0.5
            else:
                break  # no progress left at this precision
            z = zn
        if m_total / t < tol:
            return z
        t *= mu


def _barrier_value(sdp: _Sdp, z, t):
    g, mats = sdp.eval(z)
    ld = _logdet_pd(g)
    if ld is None:
        return np.inf
    val = -t * ld
    for f in mats:
        ld = _logdet_pd(f)
        if ld is None:
            return np.inf
        val -= ld
    return val


def design_terminal(lin: LinearModel, x_box, u_box, x_ref, u_ref: float,
                    p_scale: float = 1.0) -> TerminalPair:
    """Terminal gain and cost matrix for the linear model around ``(x_ref, u_ref)``.

    ``x_box`` and ``u_box`` are ``(lo, hi)`` pairs in the same units as ``lin``.
    ``p_scale`` multiplies the returned ``P`` (1 reproduces the SDP optimum).
    """
    qs, rs = box_halfspaces(x_box[0], x_box[1], x_ref)
    uq, ut = box_halfspaces([u_box[0]], [u_box[1]], [u_ref])
    sdp = _Sdp(np.asarray(lin.a_matrix, float), np.asarray(lin.b_vector, float),
               qs, rs, uq[:, 0], ut)
    z = _solve_barrier(sdp, _feasible_start(sdp))
    g, s = sdp.unpack(z)
    p = np.linalg.inv(g)
    p = 0.5 * (p + p.T)
    return TerminalPair(p @ s, p_scale * p, g, s)


def lmi_min_eigs(lin: LinearModel, pair: TerminalPair, x_box, u_box, x_ref, u_ref) -> dict:
    """Smallest eigenvalue of every LMI block at the pair's ``(G, s)``."""
    qs, rs = box_halfspaces(x_box[0], x_box[1], x_ref)
    uq, ut = box_halfspaces([u_box[0]], [u_box[1]], [u_ref])
    sdp = _Sdp(lin.a_matrix, lin.b_vector, qs, rs, uq[:, 0], ut)
    mats = sdp.lmis(sdp.pack(pair.g_matrix, pair.s_vector))
    return {
        "lyapunov": float(np.min(np.linalg.eigvalsh(mats[0]))),
        "state": [float(np.min(np.linalg.eigvalsh(m))) for m in mats[1:1 + len(rs)]],
        "input": [float(np.min(np.linalg.eigvalsh(m))) for m in mats[1 + len(rs):]],
    }


def log_det(pair: TerminalPair) -> float:
    return float(np.linalg.slogdet(pair.g_matrix)[1])
