import dataclasses
import math

import numpy as np
import pytest

from rgpmpc import evolving, gp, mpc, narx
from rgpmpc.errors import Infeasible
from rgpmpc.evolving import EvolvingConfig
from rgpmpc.narx import DEFAULT_LAYOUT, Scaling
from rgpmpc.plant import NoiseSpec

Y_REF, U_REF = 0.4, 0.5
X_REF = np.full(3, Y_REF)
W_REF = np.append(X_REF, U_REF)


def linear_truth(w):
    w = np.atleast_2d(w)
    return Y_REF + 0.7 * (w[:, 0] - Y_REF) + 0.1 * (w[:, 1] - Y_REF) + 0.3 * (w[:, 3] - U_REF)


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(7)
    w = np.vstack([W_REF, np.column_stack([rng.uniform(0.2, 0.6, (40, 3)), rng.uniform(0, 1, 40)])])
    theta = gp.Hyperparameters(Y_REF, (0.5, 0.5, 0.5, 0.5), 0.5, 1e-9)
    return gp.fit(gp.TrainingSet(w, linear_truth(w)), theta)


@pytest.fixture
def spec():
    return mpc.OcpSpec(X_REF, U_REF, np.eye(3) * 10.0, np.array([-1.0, -0.2, 0.0]),
                       y_box=(0.0, 1.0), y_soft=(0.05, 0.95))


def test_model_is_exact_at_reference(model):
    assert model.mean(W_REF) == pytest.approx(Y_REF, abs=1e-6)


# costs

def test_stage_cost_zero_at_reference(spec):
    assert mpc.stage_cost(X_REF, U_REF, spec) == 0.0


def test_stage_cost_hand_quadratic(spec):
    x = X_REF + np.array([0.1, 0.0, 0.0])
    assert mpc.stage_cost(x, U_REF, spec) == pytest.approx(100 * 0.1 ** 2)


def test_stage_cost_input_term(spec):
    assert mpc.stage_cost(X_REF, U_REF + 0.2, spec) == pytest.approx(5 * 0.04)


def test_barrier_adds_gain_times_square(spec):
    x = np.array([0.97, Y_REF, Y_REF])
    quad = 100 * (0.97 - Y_REF) ** 2
    assert mpc.stage_cost(x, U_REF, spec) == pytest.approx(quad + 1e3 * 0.02 ** 2)
    x = np.array([0.0, Y_REF, Y_REF])
    assert mpc.stage_cost(x, U_REF, spec) - 100 * Y_REF ** 2 == pytest.approx(1e3 * 0.05 ** 2)


def test_no_barrier_without_soft_set(spec):
    bare = dataclasses.replace(spec, y_soft=None)
    x = np.array([0.97, Y_REF, Y_REF])
    assert mpc.stage_cost(x, U_REF, bare) == pytest.approx(100 * (0.97 - Y_REF) ** 2)


def test_total_cost_zero_at_fixed_point(model, spec):
    one = dataclasses.replace(spec, horizon_n=1)
    assert mpc.total_cost(model, X_REF, [U_REF], one) == pytest.approx(0.0, abs=1e-9)


def test_total_cost_decomposes(model, spec):
    x0 = np.array([0.5, 0.45, 0.42])
    u = np.array([0.2, 0.4, 0.6, 0.3, 0.5])
    xs = narx.rollout(model, x0, u)
    manual = sum(mpc.stage_cost(xs[i], u[i], spec) for i in range(5))
    d = xs[-1] - X_REF
    manual += spec.lam * d @ spec.p_matrix @ d
    assert mpc.total_cost(model, x0, u, spec) == pytest.approx(manual, rel=1e-12)


def test_total_cost_linear_in_lambda(model, spec):
    x0 = np.array([0.5, 0.45, 0.42])
    u = np.full(5, 0.3)
    xs = narx.rollout(model, x0, u)
    term = mpc.terminal_cost(xs[-1], spec)
    double = dataclasses.replace(spec, lam=2.0)
    diff = mpc.total_cost(model, x0, u, double) - mpc.total_cost(model, x0, u, spec)
    assert diff == pytest.approx(term, rel=1e-10)


def test_total_cost_rejects_wrong_length(model, spec):
    with pytest.raises(ValueError):
        mpc.total_cost(model, X_REF, [U_REF] * 4, spec)


def test_hard_penalty_counts_box_exit(model, spec):
    tight = dataclasses.replace(spec, y_box=(0.39, 0.41), y_soft=None)
    u = np.full(5, 1.0)
    xs = narx.rollout(model, X_REF, u)
    viol = mpc.constraint_violation(xs, tight)
    assert viol > 0
    loose = dataclasses.replace(tight, hard=False)
    assert mpc.total_cost(model, X_REF, u, tight) - mpc.total_cost(model, X_REF, u, loose) == pytest.approx(
        1e6 * viol, rel=1e-9)


def test_spec_validation():
    with pytest.raises(ValueError):
        mpc.OcpSpec(X_REF, U_REF, np.eye(3), np.zeros(3), lam=0.5)
    with pytest.raises(ValueError):
        mpc.OcpSpec(X_REF, U_REF, -np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        mpc.OcpSpec(X_REF, U_REF, np.eye(3), np.zeros(3), q_weight=-np.eye(3))
    with pytest.raises(ValueError):
        mpc.OcpSpec(X_REF, U_REF, np.eye(3), np.zeros(3), horizon_n=0)


def test_terminal_input_is_clipped(spec):
    assert spec.terminal_input(X_REF) == pytest.approx(U_REF)
    assert spec.terminal_input(X_REF - 10.0) == 1.0


# solver

def test_fixed_point_at_reference(model, spec):
    sol = mpc.solve_ocp(model, X_REF, spec)
    assert np.allclose(sol.u_seq, U_REF, atol=1e-3)
    assert sol.value < 1e-4
    assert sol.status == "converged"


def test_solution_value_matches_total_cost(model, spec):
    x0 = np.array([0.55, 0.5, 0.45])
    sol = mpc.solve_ocp(model, x0, spec)
    assert sol.value == mpc.total_cost(model, x0, sol.u_seq, spec)
    assert np.all((sol.u_seq >= 0) & (sol.u_seq <= 1))
    assert len(sol.x_seq) == spec.horizon_n + 1


@pytest.mark.parametrize("x0", [[0.55, 0.5, 0.45], [0.3, 0.32, 0.35], [0.45, 0.4, 0.4]])
def test_one_step_horizon_matches_grid(model, spec, x0):
    one = dataclasses.replace(spec, horizon_n=1)
    grid = np.round(np.arange(0, 1001) * 1e-3, 12)
    values = [mpc.total_cost(model, x0, [u], one) for u in grid]
    sol = mpc.solve_ocp(model, np.array(x0), one)
    assert sol.value == pytest.approx(min(values), abs=1e-4)


def test_warm_start_dominance(model, spec):
    x0 = np.array([0.6, 0.55, 0.5])
    warm = np.array([0.1, 0.9, 0.2, 0.8, 0.3])
    sol = mpc.solve_ocp(model, x0, spec, warm)
    assert sol.value <= mpc.total_cost(model, x0, warm, spec)


def test_never_worse_than_shifted_previous_solution(model, spec):
    x0 = np.array([0.6, 0.55, 0.5])
    prev = mpc.solve_ocp(model, x0, spec)
    x1 = prev.x_seq[1]
    shifted = mpc.shifted_warm_start(prev, spec)
    _, sol = mpc.control_step(model, x1, spec, prev)
    assert sol.value <= mpc.total_cost(model, x1, shifted, spec) + 1e-12


def test_shifted_warm_start_structure(model, spec):
    prev = mpc.solve_ocp(model, np.array([0.6, 0.55, 0.5]), spec)
    shifted = mpc.shifted_warm_start(prev, spec)
    assert np.array_equal(shifted[:-1], prev.u_seq[1:])
    assert shifted[-1] == spec.terminal_input(prev.x_seq[-1])


def test_control_step_applies_first_element(model, spec):
    u, sol = mpc.control_step(model, np.array([0.5, 0.45, 0.42]), spec)
    assert u == sol.u_seq[0]


def test_strict_mode_raises_when_box_unreachable(model, spec):
    # one step can raise the output by at most 0.15 from the reference
    far = dataclasses.replace(spec, y_box=(0.59, 0.61), y_soft=None)
    with pytest.raises(Infeasible):
        mpc.solve_ocp(model, X_REF, far, strict=True)
    sol = mpc.solve_ocp(model, X_REF, far)
    assert sol.status == "infeasible" and sol.violation > 0


# gate

def test_gate_accepts_identical_candidate(model, spec):
    x0 = np.array([0.5, 0.45, 0.42])
    res = mpc.value_gate(model, model, x0, spec)
    assert res.accept
    assert res.value_candidate <= res.value_current


def test_gate_rejects_outlier_candidate(model, spec):
    x0 = np.array([0.5, 0.45, 0.42])
    current = mpc.solve_ocp(model, x0, spec)
    w = np.append(x0, current.u_seq[0])
    cand = evolving.with_point(model, w, model.mean(w) + 0.5)
    res = mpc.value_gate(model, cand, x0, spec, current)
    assert not res.accept
    assert res.value_candidate > res.value_current


def test_gate_accepts_improving_candidate(spec):
    # a model biased away from the reference; adding the true point at the reference helps
    rng = np.random.default_rng(3)
    w = np.column_stack([rng.uniform(0.2, 0.6, (30, 3)), rng.uniform(0, 1, 30)])
    theta = gp.Hyperparameters(Y_REF, (1.0, 1.0, 1.0, 1.0), 0.5, 1e-6)
    biased = gp.fit(gp.TrainingSet(w, linear_truth(w) + 0.05), theta)
    cand = evolving.with_point(biased, W_REF, Y_REF)
    res = mpc.value_gate(biased, cand, X_REF, spec)
    assert res.accept


# closed loop

def loop(model, spec, **kw):
    base = dict(spec=spec, scaling=Scaling(0.0, 1.0, 0.0, 1.0), y0=Y_REF, u0=U_REF, nominal=True,
                noise=NoiseSpec(0.0), ref_switch_step=0, n_steps=60)
    base.update(kw)
    return mpc.LoopConfig(**base)


def test_closed_loop_holds_reference(model, spec):
    res = mpc.run_closed_loop(loop(model, spec), model)
    assert not res.aborted and not res.violated
    assert np.max(np.abs(res.column("CA_true") - Y_REF)) <= 0.002
    assert len(res.rows) == 60
    assert set(res.rows[0]) == set(mpc.LOG_COLUMNS)


def test_closed_loop_converges_from_offset(model, spec):
    res = mpc.run_closed_loop(loop(model, spec, y0=0.55), model)
    assert abs(res.rows[-1]["CA_true"] - Y_REF) < 1e-3


def test_bgp_never_changes_model(model, spec):
    res = mpc.run_closed_loop(loop(model, spec, y0=0.55, controller="bgp"), model)
    assert res.model is model
    assert all(r["gate_decision"] == "none" for r in res.rows)


def test_rgp_records_gate_decisions(model, spec):
    cfg = loop(model, spec, y0=0.55, noise=NoiseSpec(1e-6), seed=4, evolving=EvolvingConfig())
    res = mpc.run_closed_loop(cfg, model)
    decisions = {r["gate_decision"] for r in res.rows}
    assert decisions <= {"accept", "reject", "skipped", "none"}
    accepted = sum(r["gate_decision"] == "accept" for r in res.rows)
    assert res.model.n == model.n + accepted


def test_loop_is_deterministic(model, spec):
    cfg = loop(model, spec, y0=0.55, noise=NoiseSpec(1e-5), seed=9)
    a = mpc.run_closed_loop(cfg, model)
    b = mpc.run_closed_loop(cfg, model)
    assert a.rows == b.rows


def test_loop_config_validation(model, spec):
    with pytest.raises(ValueError):
        loop(model, spec, controller="xyz")
    with pytest.raises(ValueError):
        loop(model, spec, controller="ompc")
    with pytest.raises(ValueError):
        mpc.run_closed_loop(loop(model, spec), None)


def test_total_cost_sums_logged_stage_costs(model, spec):
    res = mpc.run_closed_loop(loop(model, spec, y0=0.55), model)
    assert res.total_cost == pytest.approx(math.fsum(res.column("stage_cost")))
