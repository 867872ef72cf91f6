"""CSTR ground truth: ODE right-hand side, Euler plant, noise and data generation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConstraintViolation
from .gp import TrainingSet
from .narx import DEFAULT_LAYOUT, NarxLayout, Scaling


@dataclass(frozen=True)
class CstrParams:
    q0: float = 10.0          # l/min
    V: float = 150.0          # l
    k0: float = 6e10          # 1/min
    E_over_R: float = 9750.0  # K
    dHr: float = -10000.0     # J/mol, negative = exothermic
    UA: float = 70000.0       # J/(min K)
    rho: float = 1100.0       # g/l
    Cp: float = 0.3           # J/(g K)
    tau: float = 1.5          # min
    CAf: float = 1.0          # mol/l
    Tf: float = 370.0         # K

    def __post_init__(self):
        for name in ("q0", "V", "k0", "E_over_R", "UA", "rho", "Cp", "tau", "CAf", "Tf"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CstrState:
    CA: float
    T: float
    Tc: float

    def as_array(self) -> np.ndarray:
        return np.array([self.CA, self.T, self.Tc])


@dataclass(frozen=True)
class NoiseSpec:
    sigma_n2: float = 0.003 ** 2
    bound_sigmas: float = 4.0

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_n2)

    @property
    def bound(self) -> float:
        return self.bound_sigmas * self.sigma


def derivatives(s: CstrState, Tr: float, p: CstrParams = CstrParams()) -> tuple[float, float, float]:
    """Right-hand sides ``(dCA/dt, dT/dt, dTc/dt)``."""
    rate = p.k0 * math.exp(-p.E_over_R / s.T) * s.CA
    dil = p.q0 / p.V
    d_ca = dil * (p.CAf - s.CA) - rate
    d_t = (dil * (p.Tf - s.T) - p.dHr / (p.rho * p.Cp) * rate
           + p.UA / (p.V * p.rho * p.Cp) * (s.Tc - s.T))
    d_tc = (Tr - s.Tc) / p.tau
    return d_ca, d_t, d_tc


def step(s: CstrState, Tr: float, Ts: float = 0.5, p: CstrParams = CstrParams()) -> CstrState:
    """Forward-Euler update over one sampling period."""
    if Ts < 0:
        raise ValueError("Ts must be non-negative")
    d = derivatives(s, Tr, p)
    return CstrState(s.CA + Ts * d[0], s.T + Ts * d[1], s.Tc + Ts * d[2])


def _jacobian(s: CstrState, p: CstrParams) -> np.ndarray:
    e = math.exp(-p.E_over_R / s.T)
    dil = p.q0 / p.V
    drate_dca = p.k0 * e
    drate_dt = p.k0 * e * s.CA * p.E_over_R / s.T ** 2
    c = p.dHr / (p.rho * p.Cp)
    ua = p.UA / (p.V * p.rho * p.Cp)
    return np.array([
        [-dil - drate_dca, -drate_dt, 0.0],
        [-c * drate_dca, -dil - c * drate_dt - ua, ua],
        [0.0, 0.0, -1.0 / p.tau],
    ])


def equilibrium(Tr: float, p: CstrParams = CstrParams(), guess: CstrState | None = None,
                tol: float = 1e-10, max_iter: int = 200) -> CstrState:
    """Steady state under constant input, by damped Newton iteration on the RHS."""
    x = np.array([0.5, Tr, Tr]) if guess is None else guess.as_array()
    for _ in range(max_iter):
        s = CstrState(*x)
        f = np.array(derivatives(s, Tr, p))
        if np.max(np.abs(f)) < tol:
            return s
        dx = np.linalg.solve(_jacobian(s, p), -f)
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * dx
            if 0 <= xn[0] <= p.CAf and xn[1] > 0:
                fn = np.array(derivatives(CstrState(*xn), Tr, p))
                if np.max(np.abs(fn)) < np.max(np.abs(f)):
                    break
            lam *= 0.5
        x = xn
    s = CstrState(*x)
    if np.max(np.abs(derivatives(s, Tr, p))) > 1e3 * tol:
        raise RuntimeError(f"equilibrium iteration did not converge for Tr={Tr}")
    return s


def input_for_output(y: float, p: CstrParams = CstrParams(), lo: float = 300.0,
                     hi: float = 400.0) -> float:
    """Constant input whose equilibrium concentration equals ``y``."""
    return brentq(lambda tr: equilibrium(tr, p).CA - y, lo, hi, xtol=1e-12)


def truncated_noise(rng: np.random.Generator, noise: NoiseSpec, size=None):
    """Gaussian draws resampled until they fall within the bound."""
    if noise.sigma_n2 == 0:
        return np.zeros(size) if size is not None else 0.0
    n = 1 if size is None else int(np.prod(size))
    out = rng.normal(0.0, noise.sigma, n)
    bad = np.abs(out) > noise.bound
    while bad.any():
        out[bad] = rng.normal(0.0, noise.sigma, int(bad.sum()))
        bad = np.abs(out) > noise.bound
    return float(out[0]) if size is None else out.reshape(size)


def measure(s: CstrState, noise: NoiseSpec, rng: np.random.Generator) -> float:
    """Noisy concentration measurement."""
    return s.CA + truncated_noise(rng, noise)


@dataclass(frozen=True)
class ChirpSpec:
    """Input ``u_c + A sin(2 pi (f0 + (f1 - f0) t / (2T)) t)`` run once per centre."""

    centers: tuple = (347.5, 356.0)
    amplitude: float = 9.0
    f0: float = 0.01
    f1: float = 0.2
    period: float = 400.0

    def signal(self, t: np.ndarray, center: float) -> np.ndarray:
        f = self.f0 + (self.f1 - self.f0) * t / (2.0 * self.period)
        return center + self.amplitude * np.sin(2.0 * np.pi * f * t)


@dataclass
class Trajectory:
    """Simulated plant log with one row per sample."""

    t: np.ndarray
    u: np.ndarray
    ca: np.ndarray
    y: np.ndarray
    T: np.ndarray
    Tc: np.ndarray

    def columns(self) -> dict:
        return {"t": self.t, "u": self.u, "CA_true": self.ca, "y_meas": self.y,
                "T": self.T, "Tc": self.Tc}


@dataclass
class RawData:
    """Regressor/output pairs in original units plus the trajectory that produced them."""

    data: TrainingSet
    trajectory: Trajectory
    layout: NarxLayout = field(default=DEFAULT_LAYOUT)


def simulate_inputs(u: np.ndarray, s0: CstrState, Ts: float, p: CstrParams,
                    noise: NoiseSpec, rng: np.random.Generator) -> Trajectory:
    n = len(u)
    ca, T, Tc, y = (np.empty(n) for _ in range(4))
    s = s0
    for k in range(n):
        ca[k], T[k], Tc[k] = s.CA, s.T, s.Tc
        y[k] = measure(s, noise, rng)
        s = step(s, u[k], Ts, p)
    return Trajectory(np.arange(n) * Ts, np.asarray(u, dtype=float), ca, y, T, Tc)


def narx_pairs(y: np.ndarray, u: np.ndarray, layout: NarxLayout = DEFAULT_LAYOUT) -> TrainingSet:
    """Pairs ``(w_k, y_{k+1})`` for every ``k`` with a full history."""
    start = max(layout.m_y, layout.m_u)
    rows, outs = [], []
    for k in range(start, len(y) - 1):
        ys = y[k - layout.m_y:k + 1][::-1]
        us = u[k - layout.m_u:k][::-1] if layout.m_u else []
        rows.append(np.concatenate([ys, us, [u[k]]]))
        outs.append(y[k + 1])
    return TrainingSet(np.array(rows).reshape(len(rows), layout.n_w), np.array(outs))


def generate_raw(excitation: ChirpSpec = ChirpSpec(), duration: float | None = None,
                 p: CstrParams = CstrParams(), noise: NoiseSpec = NoiseSpec(), seed: int = 0,
                 Ts: float = 0.5, u_box: tuple = (335.0, 372.0),
                 layout: NarxLayout = DEFAULT_LAYOUT) -> RawData:
    """Chirp-excited runs around each centre, concatenated into one pair set.

    Each pass starts from the equilibrium of its centre input and lasts
    ``duration`` minutes (default: the chirp period).
    """
    duration = excitation.period if duration is None else duration
    n = int(math.floor(duration / Ts + 1e-9))
    t = np.arange(n) * Ts
    rng = np.random.default_rng(seed)
    sets, trajs = [], []
    for center in excitation.centers:
        u = excitation.signal(t, center)
        if u.min() < u_box[0] - 1e-9 or u.max() > u_box[1] + 1e-9:
            raise ConstraintViolation(f"chirp around {center} leaves the input box {u_box}")
        traj = simulate_inputs(u, equilibrium(center, p), Ts, p, noise, rng)
        trajs.append(traj)
        sets.append(narx_pairs(traj.y, traj.u, layout))
    data = sets[0]
    for extra in sets[1:]:
        data = data.union(extra)
    offset = 0.0
    parts = []
    for tr in trajs:
        parts.append(Trajectory(tr.t + offset, tr.u, tr.ca, tr.y, tr.T, tr.Tc))
        offset += n * Ts
    joined = Trajectory(*(np.concatenate([getattr(tr, f) for tr in parts])
                          for f in ("t", "u", "ca", "y", "T", "Tc")))
    return RawData(data, joined, layout)


def extract_local(raw: TrainingSet, center_y: float, radius: float, w_bar: float,
                  scaling: Scaling | None = None, layout: NarxLayout = DEFAULT_LAYOUT) -> TrainingSet:
    """Points whose output lies within ``radius`` of ``center_y``, thinned in order.

    After the radius filter, every later point closer than ``w_bar`` (Euclidean,
    in normalized regressor units when ``scaling`` is given) to a kept point is
    dropped.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    idx = np.flatnonzero(np.abs(raw.outputs - center_y) <= radius)
    w = raw.regressors[idx]
    if scaling is not None:
        w = np.array([np.append(scaling.state(r[:-1], layout), scaling.u(r[-1])) for r in w])
    kept = []
    alive = np.ones(len(idx), dtype=bool)
    for i in range(len(idx)):
        if not alive[i]:
            continue
        kept.append(idx[i])
        if np.isfinite(w_bar):
            d = np.linalg.norm(w[i + 1:] - w[i], axis=1)
            alive[i + 1:] &= d >= w_bar
        else:
            break
    return raw.subset(kept)


def tune_thinning(raw: TrainingSet, center_y: float, radius: float, target: int,
                  scaling: Scaling | None = None, layout: NarxLayout = DEFAULT_LAYOUT) -> float:
    """Smallest-error thinning threshold giving about ``target`` points (bisection)."""
    lo, hi = 0.0, 1.0
    while len(extract_local(raw, center_y, radius, hi, scaling, layout)) > target:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if len(extract_local(raw, center_y, radius, mid, scaling, layout)) > target:
            lo = mid
        else:
            hi = mid
    return hi
