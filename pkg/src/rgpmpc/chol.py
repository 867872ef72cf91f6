"""Dense Cholesky factors with recursive row/column insertion and removal.

Factors are upper triangular, ``A = R.T @ R``.  Insertion and removal use the
block formulas of Osborne (2010): the leading block is reused, the new row is
obtained from triangular solves and only the trailing block is refactorized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

PIVOT_FLOOR = 1e-12
JITTER_REL = 1e-10


@dataclass(frozen=True)
class CholFactor:
    """Upper-triangular Cholesky factor ``r`` of an ``n x n`` SPD matrix."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise DimensionMismatch(f"factor must be square, got shape {r.shape}")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @classmethod
    def empty(cls) -> "CholFactor":
        return cls(np.zeros((0, 0)))

    def matrix(self) -> np.ndarray:
        """Reconstruct ``R.T @ R``."""
        return self.r.T @ self.r

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.r))))


def _chol_upper(a: np.ndarray, jitter: float | None = None) -> np.ndarray:
    """Upper Cholesky of ``a``; retries once with diagonal jitter."""
    if a.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        r = cholesky(a, lower=False, check_finite=False)
        if np.min(np.diag(r)) >= PIVOT_FLOOR:
            return r
    except np.linalg.LinAlgError:
        pass
    if jitter is None:
        jitter = JITTER_REL * max(float(np.max(np.abs(np.diag(a)))), 1.0)
    try:
        r = cholesky(a + jitter * np.eye(a.shape[0]), lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.min(np.diag(r)) < PIVOT_FLOOR:
        raise NotPositiveDefinite("pivot below floor after jitter")
    return r


def factorize(a, jitter: float | None = None) -> CholFactor:
    """Cholesky factor of a symmetric positive-definite matrix.

    ``jitter`` is added to the diagonal only when a pivot falls below
    ``PIVOT_FLOOR``; by default it is ``1e-10`` times the largest diagonal entry.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    return CholFactor(_chol_upper(a, jitter))


def solve(factor: CholFactor, b) -> np.ndarray:
    """Solve ``(R.T R) x = b`` by two triangular solves."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor is {factor.n}x{factor.n}")
    if factor.n == 0:
        return b.copy()
    y = solve_triangular(factor.r, b, trans="T", lower=False, check_finite=False)
    return solve_triangular(factor.r, y, lower=False, check_finite=False)


def half_solve(factor: CholFactor, b) -> np.ndarray:
    """Solve ``R.T y = b``; ``y @ y`` equals ``b.T A^{-1} b``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor is {factor.n}x{factor.n}")
    if factor.n == 0:
        return b.copy()
    return solve_triangular(factor.r, b, trans="T", lower=False, check_finite=False)


def insert(factor: CholFactor, new_col, new_diag: float, position: int,
           jitter: float | None = None) -> CholFactor:
    """Factor of the matrix with a row/column inserted at ``position``.

    ``new_col`` holds the off-diagonal entries of the new column against the
    existing ``n`` rows (in their current order); ``new_diag`` is its diagonal.
    """
    n = factor.n
    new_col = np.asarray(new_col, dtype=float).reshape(-1)
    if new_col.shape[0] != n:
        raise DimensionMismatch(f"new_col has length {new_col.shape[0]}, expected {n}")
    if not 0 <= position <= n:
        raise IndexError(f"position {position} out of range 0..{n}")
    p = position
    r = factor.r
    r11 = r[:p, :p]
    r13 = r[:p, p:]
    r33 = r[p:, p:]
    k12 = new_col[:p]
    k23 = new_col[p:]

    s12 = solve_triangular(r11, k12, trans="T", lower=False, check_finite=False) if p else k12
    piv = new_diag - s12 @ s12
    if piv < PIVOT_FLOOR:
        if jitter is None:
            jitter = JITTER_REL * max(abs(new_diag), 1.0)
        piv += jitter
        if piv < PIVOT_FLOOR:
            raise NotPositiveDefinite(f"new pivot {piv:.3e} is not positive")
    s22 = np.sqrt(piv)
    s23 = (k23 - s12 @ r13) / s22
    if n - p:
        s33 = _chol_upper(r33.T @ r33 - np.outer(s23, s23), jitter)
    else:
        s33 = r33

    # every block is written once; skipping a zero fill matters for large n
    out = np.empty((n + 1, n + 1))
    out[:p, :p] = r11
    out[:p, p] = s12
    out[:p, p + 1:] = r13
    out[p, :p] = 0.0
    out[p, p] = s22
    out[p, p + 1:] = s23
    out[p + 1:, :p + 1] = 0.0
    out[p + 1:, p + 1:] = s33
    return CholFactor(out)


def append(factor: CholFactor, new_col, new_diag: float, jitter: float | None = None) -> CholFactor:
    return insert(factor, new_col, new_diag, factor.n, jitter)


def remove(factor: CholFactor, position: int) -> CholFactor:
    """Factor of the matrix with row/column ``position`` deleted."""
    n = factor.n
    if n < 1 or not 0 <= position < n:
        raise IndexError(f"position {position} out of range for factor of size {n}")
    p = position
    r = factor.r
    out = np.zeros((n - 1, n - 1))
    out[:p, :p] = r[:p, :p]
    out[:p, p:] = r[:p, p + 1:]
    r23 = r[p, p + 1:]
    r33 = r[p + 1:, p + 1:]
    if n - p - 1:
        out[p:, p:] = _chol_upper(np.outer(r23, r23) + r33.T @ r33)
    return CholFactor(out)
