"""Finite-horizon optimal control over a NARX predictor and the learning closed loop.

All quantities handled here (states, inputs, references, boxes, costs) are in
the normalized units of the prediction model.  The plant boundary converts to
and from physical units through a :class:`~rgpmpc.narx.Scaling`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import evolving, narx, plant
from .errors import Infeasible, NotPositiveDefinite
from .evolving import EvolvingConfig
from .gp import GpModel
from .narx import DEFAULT_LAYOUT, NarxLayout, Scaling

VIOLATION_TOL = 1e-9


@dataclass(frozen=True)
class OcpSpec:
    """Weights, reference, terminal ingredients and constraints of the OCP."""

    x_ref: np.ndarray
    u_ref: float
    p_matrix: np.ndarray
    k_vector: np.ndarray
    horizon_n: int = 5
    q_weight: np.ndarray = field(default_factory=lambda: np.diag([100.0, 0.0, 0.0]))
    r_weight: float = 5.0
    lam: float = 1.0
    u_box: tuple = (0.0, 1.0)
    y_box: tuple = (-math.inf, math.inf)
    y_soft: tuple | None = None
    barrier_gain: float = 1e3
    hard: bool = True
    penalty: float = 1e6
    max_iter: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "x_ref", np.asarray(self.x_ref, dtype=float))
        object.__setattr__(self, "q_weight", np.asarray(self.q_weight, dtype=float))
        object.__setattr__(self, "p_matrix", np.asarray(self.p_matrix, dtype=float))
        object.__setattr__(self, "k_vector", np.asarray(self.k_vector, dtype=float))
        if self.lam < 1:
            raise ValueError("terminal weight must be at least 1")
        if self.horizon_n < 1:
            raise ValueError("horizon must be at least one step")
        if np.min(np.linalg.eigvalsh(self.q_weight)) < -1e-12:
            raise ValueError("state weight must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.p_matrix)) <= 0:
            raise ValueError("terminal matrix must be positive definite")
        if self.r_weight < 0 or self.u_box[0] >= self.u_box[1]:
            raise ValueError("invalid input weight or box")

    def with_reference(self, x_ref, u_ref: float) -> "OcpSpec":
        return replace(self, x_ref=np.asarray(x_ref, dtype=float), u_ref=float(u_ref))

    def terminal_input(self, x_n) -> float:
        u = float(self.k_vector @ (np.asarray(x_n) - self.x_ref)) + self.u_ref
        return float(np.clip(u, *self.u_box))


@dataclass(frozen=True)
class OcpSolution:
    u_seq: np.ndarray
    x_seq: np.ndarray
    value: float
    status: str
    violation: float = 0.0


def _hinge(y: float, box) -> float:
    lo, hi = box
    return max(lo - y, 0.0) + max(y - hi, 0.0)


def _dhinge(y: float, box) -> float:
    lo, hi = box
    return -1.0 if y < lo else (1.0 if y > hi else 0.0)


def stage_cost(x, u: float, spec: OcpSpec) -> float:
    """Quadratic tracking cost plus the quadratic-hinge barrier outside the soft set."""
    d = np.asarray(x, dtype=float) - spec.x_ref
    val = float(d @ spec.q_weight @ d) + spec.r_weight * (u - spec.u_ref) ** 2
    if spec.y_soft is not None:
        val += spec.barrier_gain * _hinge(narx.output_of(x), spec.y_soft) ** 2
    return val


def terminal_cost(x_n, spec: OcpSpec) -> float:
    d = np.asarray(x_n, dtype=float) - spec.x_ref
    return spec.lam * float(d @ spec.p_matrix @ d)


def constraint_violation(xs: np.ndarray, spec: OcpSpec) -> float:
    """Total amount by which predicted outputs ``x_1 .. x_N`` leave the hard box."""
    return float(sum(_hinge(x[0], spec.y_box) for x in xs[1:]))


def cost_of_rollout(xs: np.ndarray, u_seq, spec: OcpSpec) -> float:
    val = sum(stage_cost(xs[i], u, spec) for i, u in enumerate(u_seq))
    val += terminal_cost(xs[-1], spec)
    if spec.hard:
        val += spec.penalty * constraint_violation(xs, spec)
    return float(val)


def _cost_gradient(xs, jac, u_seq, spec: OcpSpec) -> np.ndarray:
    grad = np.zeros(len(u_seq))
    for i, u in enumerate(u_seq):
        d = xs[i] - spec.x_ref
        grad += 2.0 * (spec.q_weight @ d) @ jac[i]
        grad[i] += 2.0 * spec.r_weight * (u - spec.u_ref)
        if spec.y_soft is not None:
            h = _hinge(xs[i][0], spec.y_soft)
            if h:
                grad += 2.0 * spec.barrier_gain * h * _dhinge(xs[i][0], spec.y_soft) * jac[i][0]
    d = xs[-1] - spec.x_ref
    grad += 2.0 * spec.lam * (spec.p_matrix @ d) @ jac[-1]
    if spec.hard:
        for i in range(1, len(xs)):
            s = _dhinge(xs[i][0], spec.y_box)
            if s:
                grad += spec.penalty * s * jac[i][0]
    return grad


class PlantPredictor:
    """Exact plant model used as predictor, starting from the true physical state."""

    def __init__(self, state: plant.CstrState, scaling: Scaling, params: plant.CstrParams = plant.CstrParams(),
                 Ts: float = 0.5, layout: NarxLayout = DEFAULT_LAYOUT, fd_step: float = 1e-6):
        self.state, self.scaling, self.params = state, scaling, params
        self.Ts, self.layout, self.fd_step = Ts, layout, fd_step

    def rollout(self, x0, u_seq) -> np.ndarray:
        u_seq = np.atleast_1d(np.asarray(u_seq, dtype=float))
        xs = np.empty((len(u_seq) + 1, self.layout.n_x))
        xs[0] = x0
        s = self.state
        for i, u in enumerate(u_seq):
            s = plant.step(s, float(self.scaling.u_inv(u)), self.Ts, self.params)
            xs[i + 1] = self.layout.shift(xs[i], float(self.scaling.y(s.CA)), u)
        return xs

    def rollout_sensitivity(self, x0, u_seq):
        u_seq = np.asarray(u_seq, dtype=float)
        xs = self.rollout(x0, u_seq)
        jac = np.zeros(xs.shape + (len(u_seq),))
        for j in range(len(u_seq)):
            e = np.zeros(len(u_seq))
            e[j] = self.fd_step
            jac[:, :, j] = (self.rollout(x0, u_seq + e) - self.rollout(x0, u_seq - e)) / (2 * self.fd_step)
        return xs, jac


def _rollout(predictor, x0, u_seq):
    if isinstance(predictor, GpModel):
        return narx.rollout(predictor, x0, u_seq)
    return predictor.rollout(x0, u_seq)


def _rollout_sensitivity(predictor, x0, u_seq):
    if isinstance(predictor, GpModel):
        return narx.rollout_sensitivity(predictor, x0, u_seq)
    return predictor.rollout_sensitivity(x0, u_seq)


def total_cost(predictor, x0, u_seq, spec: OcpSpec) -> float:
    """Value of the OCP objective for a given input sequence."""
    u_seq = np.asarray(u_seq, dtype=float)
    if len(u_seq) != spec.horizon_n:
        raise ValueError(f"input sequence has length {len(u_seq)}, expected {spec.horizon_n}")
    return cost_of_rollout(_rollout(predictor, x0, u_seq), u_seq, spec)


def _solution(predictor, x0, u_seq, spec: OcpSpec, status: str) -> OcpSolution:
    xs = _rollout(predictor, x0, u_seq)
    viol = constraint_violation(xs, spec)
    if spec.hard and viol > VIOLATION_TOL:
        status = "infeasible"
    return OcpSolution(u_seq, xs, cost_of_rollout(xs, u_seq, spec), status, viol)


def solve_ocp(predictor, x0, spec: OcpSpec, warm_start=None, strict: bool = False) -> OcpSolution:
    """Minimize the OCP cost over the input sequence with box bounds.

    Starts from the warm start (if any) and from the constant reference input
    and keeps the best local solution.  The returned value never exceeds the
    warm start's own cost.  With ``strict`` a solution that still violates the
    hard output box raises ``Infeasible``.
    """
    x0 = np.asarray(x0, dtype=float)
    lo, hi = spec.u_box
    starts = [np.full(spec.horizon_n, float(np.clip(spec.u_ref, lo, hi)))]
    if warm_start is not None:
        starts.insert(0, np.clip(np.asarray(warm_start, dtype=float), lo, hi))

    def fun(u):
        xs, jac = _rollout_sensitivity(predictor, x0, u)
        return cost_of_rollout(xs, u, spec), _cost_gradient(xs, jac, u, spec)

    best = None
    for u0 in starts:
        res = minimize(fun, u0, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * spec.horizon_n,
                       options={"maxiter": spec.max_iter, "ftol": spec.tol, "gtol": 1e-10})
        u = np.clip(res.x, lo, hi)
        cand = _solution(predictor, x0, u, spec, "converged" if res.success else "max_iter")
        if best is None or cand.value < best.value:
            best = cand
    if warm_start is not None:
        warm = _solution(predictor, x0, starts[0], spec, best.status)
        if warm.value < best.value:
            best = warm
    if strict and best.status == "infeasible":
        raise Infeasible(f"no input sequence keeps the predicted outputs in the box (violation {best.violation:.3g})")
    return best


def shifted_warm_start(prev: OcpSolution, spec: OcpSpec) -> np.ndarray:
    """Previous sequence shifted by one with the terminal law appended."""
    return np.append(prev.u_seq[1:], spec.terminal_input(prev.x_seq[-1]))


def control_step(predictor, x0, spec: OcpSpec, prev: OcpSolution | None = None,
                 strict: bool = False) -> tuple[float, OcpSolution]:
    """Receding-horizon law: solve from the shifted previous solution, apply the first input."""
    warm = shifted_warm_start(prev, spec) if prev is not None else None
    sol = solve_ocp(predictor, x0, spec, warm, strict)
    return float(sol.u_seq[0]), sol


@dataclass(frozen=True)
class GateResult:
    accept: bool
    value_current: float
    value_candidate: float
    candidate_solution: OcpSolution


def value_gate(model: GpModel, candidate: GpModel, x0, spec: OcpSpec,
               current: OcpSolution | None = None) -> GateResult:
    """Accept the candidate model iff it does not raise the optimal value at ``x0``.

    ``current`` is the solution already computed under ``model`` at ``x0``; it
    is re-solved when omitted.  The candidate problem is warm-started from it.
    """
    if current is None:
        current = solve_ocp(model, x0, spec)
    cand = solve_ocp(candidate, x0, spec, current.u_seq)
    return GateResult(cand.value <= current.value, current.value, cand.value, cand)


@dataclass
class LoopConfig:
    """Everything one closed-loop run needs.

    ``spec`` carries the target reference; before ``ref_switch_step`` the loop
    regulates to the initial operating point instead.  The plant starts from
    ``initial_state`` if given, else from the equilibrium under ``u0``.
    ``outliers`` maps step indices to additive measurement spikes in physical
    output units.
    """

    spec: OcpSpec
    scaling: Scaling
    y0: float
    u0: float
    controller: str = "rgp"
    evolving: EvolvingConfig = field(default_factory=EvolvingConfig)
    gate: bool = True
    n_steps: int = 60
    ref_switch_step: int = 10
    Ts: float = 0.5
    noise: plant.NoiseSpec = field(default_factory=plant.NoiseSpec)
    seed: int = 0
    outliers: dict = field(default_factory=dict)
    params: plant.CstrParams = field(default_factory=plant.CstrParams)
    nominal: bool = False
    initial_state: plant.CstrState | None = None
    layout: NarxLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        if self.controller not in ("rgp", "bgp", "ompc"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.controller == "ompc" and self.nominal:
            raise ValueError("the exact-model controller needs the physical plant")


LOG_COLUMNS = ("k", "t", "u", "y", "CA_true", "V_N_star", "e_p", "sigma2_plus", "n_points",
               "candidate_flag", "gate_decision", "solver_status", "stage_cost")


@dataclass
class LoopResult:
    rows: list
    aborted: bool
    violated: bool
    model: GpModel | None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def total_cost(self) -> float:
        return float(sum(r["stage_cost"] for r in self.rows))


def run_closed_loop(cfg: LoopConfig, model: GpModel | None = None) -> LoopResult:
    """One closed-loop run of the learning controller.

    Per step: solve the OCP, apply the first input, measure, screen the new
    pair, build the candidate model, gate it on the optimal value at the old
    state, then commit or discard.  ``bgp`` skips learning; ``ompc`` predicts
    with the exact plant from its true state.  With ``nominal`` the plant is
    the initial GP model itself, so the prediction error is zero without noise.
    """
    lay, sc = cfg.layout, cfg.scaling
    rng = np.random.default_rng(cfg.seed)
    if cfg.controller != "ompc" and model is None:
        raise ValueError("GP controllers need an initial model")
    truth = model
    x0_ref = lay.initial(float(sc.y(cfg.y0)), float(sc.u(cfg.u0)))
    start_spec = cfg.spec.with_reference(x0_ref, float(sc.u(cfg.u0)))
    if cfg.nominal:
        true_x = x0_ref.copy()
        ca = cfg.y0
    else:
        state = cfg.initial_state or plant.equilibrium(cfg.u0, cfg.params)
        ca = state.CA
    y_meas = ca + plant.truncated_noise(rng, cfg.noise)
    x = lay.initial(float(sc.y(y_meas)), float(sc.u(cfg.u0)))
    x_true = lay.initial(float(sc.y(ca)), float(sc.u(cfg.u0)))
    rows, prev, aborted, violated = [], None, False, False
    for k in range(cfg.n_steps):
        spec = start_spec if k < cfg.ref_switch_step else cfg.spec
        if k == cfg.ref_switch_step:
            prev = None
        predictor = model if cfg.controller != "ompc" else PlantPredictor(state, sc, cfg.params, cfg.Ts, lay)
        try:
            u, sol = control_step(predictor, x, spec, prev, strict=spec.hard)
        except Infeasible:
            aborted = True
            rows.append(_row(k, cfg, math.nan, y_meas, ca, math.nan, "infeasible", model, math.nan))
            break
        u_phys = float(sc.u_inv(u))
        row = _row(k, cfg, u_phys, y_meas, ca, sol.value, sol.status, model, stage_cost(x_true, u, spec))
        if cfg.nominal:
            ca = float(sc.y_inv(truth.mean(np.append(true_x, u))))
            true_x = lay.shift(true_x, float(sc.y(ca)), u)
        else:
            state = plant.step(state, u_phys, cfg.Ts, cfg.params)
            ca = state.CA
        y_meas = ca + plant.truncated_noise(rng, cfg.noise) + cfg.outliers.get(k + 1, 0.0)
        y_n = float(sc.y(y_meas))
        if not (cfg.spec.y_box[0] - VIOLATION_TOL <= y_n <= cfg.spec.y_box[1] + VIOLATION_TOL) and not cfg.outliers.get(k + 1):
            violated = True
        if cfg.controller != "ompc":
            w = np.append(x, u)
            scr = evolving.is_candidate(model, w, y_n, cfg.evolving)
            row.update(e_p=scr.error * sc.y_span, sigma2_plus=scr.variance * sc.y_span ** 2,
                       candidate_flag=int(scr.flag))
            if cfg.controller == "rgp" and scr.flag:
                try:
                    cand = evolving.grow(model, w, y_n, cfg.evolving)
                except NotPositiveDefinite:
                    row["gate_decision"] = "skipped"
                else:
                    accept = value_gate(model, cand, x, spec, sol).accept if cfg.gate else True
                    row["gate_decision"] = "accept" if accept else "reject"
                    if accept:
                        model = cand
        rows.append(row)
        x = lay.shift(x, y_n, u)
        x_true = lay.shift(x_true, float(sc.y(ca)), u)
        prev = sol
    return LoopResult(rows, aborted, violated, model)


def _row(k, cfg: LoopConfig, u, y, ca, value, status, model, stage) -> dict:
    return {"k": k, "t": k * cfg.Ts, "u": u, "y": float(y), "CA_true": float(ca), "V_N_star": value,
            "e_p": math.nan, "sigma2_plus": math.nan,
            "n_points": model.n if model is not None else 0, "candidate_flag": 0,
            "gate_decision": "none", "solver_status": status, "stage_cost": stage}
