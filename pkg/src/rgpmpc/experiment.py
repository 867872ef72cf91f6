"""CSTR experiment orchestration: data, models, terminal design, closed-loop studies."""
from __future__ import annotations

import dataclasses
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import chol, gp, mpc, narx, plant, terminal
from .config import Scenario
from .errors import BudgetExhausted, Infeasible
from .evolving import EvolvingConfig
from .gp import GpModel, Hyperparameters, TrainingSet
from .narx import DEFAULT_LAYOUT, Scaling

DATASETS = ("D0", "Dref", "Dcomb")
CONTROLLERS = ("ompc", "bgp", "rgp")


@dataclass
class Setup:
    """Everything derived offline from a scenario."""

    scenario: Scenario
    u0: float
    scaling: Scaling
    raw: plant.RawData
    local_raw: dict
    sets: dict
    thetas: dict
    models: dict
    linear: terminal.LinearModel
    pair: terminal.TerminalPair
    spec: mpc.OcpSpec

    @property
    def w_ref(self) -> np.ndarray:
        return np.append(self.spec.x_ref, self.spec.u_ref)


def normalize_set(data: TrainingSet, sc: Scaling) -> TrainingSet:
    w = np.array([narx.regressor_of(r[:-1], r[-1], sc) for r in data.regressors]).reshape(-1, data.n_w)
    return TrainingSet(w, sc.y(data.outputs))


def chirp_of(s: Scenario, u0: float) -> plant.ChirpSpec:
    return plant.ChirpSpec((u0, s.u_ref), s.chirp_amplitude, s.chirp_f0, s.chirp_f1, s.chirp_period)


def scaling_of(raw: TrainingSet, s: Scenario) -> Scaling:
    """Outputs over the raw-data range, the input over its constraint box."""
    return Scaling(float(raw.outputs.min()), float(np.ptp(raw.outputs)),
                   float(s.u_box[0]), float(s.u_box[1] - s.u_box[0]))


def initial_theta(data: TrainingSet, sigma_n2: float) -> Hyperparameters:
    return Hyperparameters(float(np.mean(data.outputs)), (1.0,) * data.n_w,
                           float(np.var(data.outputs)) + 1e-3, sigma_n2)


def fit_hyperparameters(data: TrainingSet, s: Scenario, sigma_n2: float) -> Hyperparameters:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetExhausted)
        return gp.optimize_hyperparameters(data, initial_theta(data, sigma_n2), s.hp_budget,
                                           s.hp_starts, s.hp_seed)


def build_setup(s: Scenario = Scenario(), thetas: dict | None = None) -> Setup:
    """Generate data, extract the local sets, fit the GPs and design the terminal pair."""
    u0 = s.u0 if math.isfinite(s.u0) else plant.input_for_output(s.y0)
    raw = plant.generate_raw(chirp_of(s, u0), s.chirp_period, noise=plant.NoiseSpec(s.noise_sigma ** 2),
                             seed=s.data_seed, Ts=s.Ts, u_box=tuple(s.u_box))
    sc = scaling_of(raw.data, s)
    local_raw, sets = {}, {}
    for name, center in (("D0", s.y0), ("Dref", s.y_ref)):
        w_bar = plant.tune_thinning(raw.data, center, s.radius, s.n_target, sc)
        local_raw[name] = plant.extract_local(raw.data, center, s.radius, w_bar, sc)
        sets[name] = normalize_set(local_raw[name], sc)
    local_raw["Dcomb"] = local_raw["D0"].union(local_raw["Dref"])
    sets["Dcomb"] = sets["D0"].union(sets["Dref"])
    sigma_n2 = (s.noise_sigma / sc.y_span) ** 2
    thetas = dict(thetas or {})
    for name in DATASETS:
        if name not in thetas:
            thetas[name] = fit_hyperparameters(sets[name], s, sigma_n2)
    models = {name: gp.fit(sets[name], thetas[name]) for name in DATASETS}
    x_ref = DEFAULT_LAYOUT.initial(float(sc.y(s.y_ref)))
    u_ref = float(sc.u(s.u_ref))
    lin = terminal.linearize(models["Dref"], np.append(x_ref, u_ref))
    y_box = (float(sc.y(s.y_box[0])), float(sc.y(s.y_box[1])))
    u_box = (float(sc.u(s.u_box[0])), float(sc.u(s.u_box[1])))
    x_box = (np.full(3, y_box[0]), np.full(3, y_box[1]))
    pair = terminal.design_terminal(lin, x_box, u_box, x_ref, u_ref, s.p_scale)
    spec = mpc.OcpSpec(x_ref, u_ref, pair.p_matrix, pair.k_vector, s.horizon_n, np.diag(s.q_diag),
                       s.r_weight, s.lam, u_box, y_box, y_box, s.barrier_gain, s.hard, s.penalty)
    return Setup(s, u0, sc, raw, local_raw, sets, thetas, models, lin, pair, spec)


def cross_validate(setup: Setup) -> list:
    """Held-out errors for each set: raw points near its centre(s) that were thinned away.

    Errors and standard deviations are reported in mol/l.
    """
    s, sc, raw = setup.scenario, setup.scaling, setup.raw.data
    centers = {"D0": (s.y0,), "Dref": (s.y_ref,), "Dcomb": (s.y0, s.y_ref)}
    rows = []
    for name in DATASETS:
        near = np.zeros(len(raw), dtype=bool)
        for c in centers[name]:
            near |= np.abs(raw.outputs - c) <= s.radius
        used = {tuple(w) for w in setup.local_raw[name].regressors}
        idx = [i for i in np.flatnonzero(near) if tuple(raw.regressors[i]) not in used]
        model = setup.models[name]
        for i in idx:
            w = narx.regressor_of(raw.regressors[i, :-1], raw.regressors[i, -1], sc)
            mean, var = gp.posterior(model, w)
            rows.append({"set": name, "index": int(i), "y": float(raw.outputs[i]),
                         "e_p": float(raw.outputs[i] - sc.y_inv(mean)),
                         "sigma_plus": math.sqrt(var) * sc.y_span})
    return rows


def validation_summary(rows: list, e_max: float = 0.02, sigma_max: float = 5e-3) -> dict:
    out = {}
    for name in DATASETS:
        sel = [r for r in rows if r["set"] == name]
        ok = [abs(r["e_p"]) < e_max and r["sigma_plus"] < sigma_max for r in sel]
        out[name] = {"n_test": len(sel), "pass_fraction": float(np.mean(ok)) if ok else math.nan}
    return out


def loop_config(setup: Setup, controller: str, seed: int, **over) -> mpc.LoopConfig:
    s = setup.scenario
    noise_sigma = over.pop("noise_sigma", s.noise_sigma)
    y0 = over.pop("y0", s.y0)
    u0 = over.pop("u0", setup.u0 if y0 == s.y0 else plant.input_for_output(y0))
    evo = over.pop("evolving", None) or EvolvingConfig(
        s.e_bar / setup.scaling.y_span, s.sigma2_bar / setup.scaling.y_span ** 2, s.capacity_m)
    kw = dict(spec=setup.spec, scaling=setup.scaling, y0=y0, u0=u0, controller=controller,
              evolving=evo, n_steps=s.n_steps, ref_switch_step=int(round(s.ref_switch_time / s.Ts)),
              Ts=s.Ts, noise=plant.NoiseSpec(noise_sigma ** 2), seed=seed)
    kw.update(over)
    return mpc.LoopConfig(**kw)


def _run_task(task):
    setup, controller, dataset, seed, over = task
    model = setup.models[dataset] if controller != "ompc" else None
    return mpc.run_closed_loop(loop_config(setup, controller, seed, **over), model)


def run_batch(setup: Setup, controller: str, dataset: str | None, seeds, threads: int = 1,
              **over) -> list:
    """Closed-loop runs for each seed, merged in seed order."""
    tasks = [(setup, controller, dataset, int(sd), dict(over)) for sd in seeds]
    if threads <= 1 or len(tasks) == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_task, tasks))


def seeds_for(setup: Setup, n: int | None = None, offset: int = 0) -> list:
    return [setup.scenario.base_seed + offset + i for i in range(n or setup.scenario.n_sim)]


@dataclass
class PerformanceReport:
    v_bar: float
    per_run: list
    n_failed: int = 0
    trajectories: list = field(default_factory=list)


def performance_metric(runs, spec) -> PerformanceReport:
    """Mean over runs of the summed stage costs.

    Each run is ``(xs, us)`` with one state and one input per step.  ``spec``
    is one :class:`~rgpmpc.mpc.OcpSpec` for all steps or a per-step list.
    """
    lengths = {len(us) for _, us in runs}
    if len(lengths) > 1:
        raise ValueError("all runs must have the same length")
    per_run = []
    for xs, us in runs:
        specs = spec if isinstance(spec, (list, tuple)) else [spec] * len(us)
        per_run.append(float(sum(mpc.stage_cost(x, u, sp) for x, u, sp in zip(xs, us, specs))))
    return PerformanceReport(float(np.mean(per_run)), per_run)


def report_of(results: list) -> PerformanceReport:
    ok = [r for r in results if not r.aborted]
    costs = [r.total_cost for r in ok]
    return PerformanceReport(float(np.mean(costs)) if costs else math.nan, costs,
                             len(results) - len(ok), ok)


def compare_controllers(setup: Setup, n_sim: int | None = None, threads: int = 1,
                        datasets=DATASETS) -> tuple:
    """V-bar table for every controller and initial set on shared seeds."""
    seeds = seeds_for(setup, n_sim)
    reports, rows = {}, []
    ompc = report_of(run_batch(setup, "ompc", None, seeds, threads))
    for name in datasets:
        reports[("ompc", name)] = ompc
        for ctrl in ("bgp", "rgp"):
            reports[(ctrl, name)] = report_of(run_batch(setup, ctrl, name, seeds, threads))
    for ctrl in CONTROLLERS:
        row = {"controller": ctrl}
        for name in datasets:
            rep = reports[(ctrl, name)]
            row[name] = rep.v_bar
            row[f"{name}_failed"] = rep.n_failed
        rows.append(row)
    return rows, reports


def added_points(result: mpc.LoopResult) -> int:
    return sum(r["gate_decision"] == "accept" for r in result.rows)


def sweep_thresholds(setup: Setup, kind: str, grid, dataset: str = "Dref",
                     n_sim: int | None = None, threads: int = 1) -> list:
    """V-bar and mean number of added points for each threshold value (physical units)."""
    if kind not in ("e_bar", "sigma2_bar"):
        raise ValueError("kind must be 'e_bar' or 'sigma2_bar'")
    if not len(grid):
        raise ValueError("threshold grid is empty")
    sc, s = setup.scaling, setup.scenario
    seeds = seeds_for(setup, n_sim)
    rows = []
    for value in grid:
        if kind == "e_bar":
            evo = EvolvingConfig(value / sc.y_span, math.inf, s.capacity_m)
        else:
            evo = EvolvingConfig(math.inf, value / sc.y_span ** 2, s.capacity_m)
        res = run_batch(setup, "rgp", dataset, seeds, threads, evolving=evo)
        rep = report_of(res)
        rows.append({kind: float(value), "v_bar": rep.v_bar, "added_mean": float(np.mean([added_points(r) for r in res])),
                     "failed": rep.n_failed})
    return rows


def capacity_study(setup: Setup, n_sim: int | None = None, threads: int = 1, dataset: str = "Dref",
                   capacity: int = 40, e_bar: float = 0.01, sigma2_bar: float = 2e-5) -> tuple:
    """bGP, unbounded rGP and capacity-limited rGP with thresholds on the same seeds."""
    sc = setup.scaling
    seeds = seeds_for(setup, n_sim)
    variants = {
        "bgp": ("bgp", EvolvingConfig()),
        "rgp_unbounded": ("rgp", EvolvingConfig()),
        f"rgp_M{capacity}": ("rgp", EvolvingConfig(e_bar / sc.y_span, sigma2_bar / sc.y_span ** 2, capacity)),
    }
    reports = {name: report_of(run_batch(setup, ctrl, dataset, seeds, threads, evolving=evo))
               for name, (ctrl, evo) in variants.items()}
    rows = [{"variant": k, "v_bar": r.v_bar, "failed": r.n_failed} for k, r in reports.items()]
    return rows, reports


def roa_sweep(setup: Setup, y0_grid=None, sigmas=None, reps: int | None = None,
              n_steps: int | None = None, threads: int = 1, dataset: str = "Dref") -> tuple:
    """Feasibility of each initial output under each noise level.

    Each run heads for the reference from its first step.  A cell is
    infeasible if any replicate aborted or measured an output outside the box.
    Returns per-cell rows and per-noise-level rows with the realized
    prediction-error bound mu and the feasible count.
    """
    s = setup.scenario
    y0_grid = s.roa_y0 if y0_grid is None else y0_grid
    sigmas = s.roa_sigmas if sigmas is None else sigmas
    reps = reps or s.roa_reps
    n_steps = n_steps or s.roa_steps
    if not len(y0_grid) or not len(sigmas):
        raise ValueError("grids must be nonempty")
    cells, levels = [], []
    for j, sigma in enumerate(sigmas):
        mu_level, feasible = 0.0, 0
        for i, y0 in enumerate(y0_grid):
            seeds = seeds_for(setup, reps, offset=100000 * (j + 1) + 1000 * i)
            res = run_batch(setup, "rgp", dataset, seeds, threads, y0=float(y0), noise_sigma=float(sigma),
                            n_steps=n_steps, ref_switch_step=0)
            bad = sum(r.aborted or r.violated for r in res)
            mu = max(float(np.nanmax(np.abs(r.column("e_p")))) if len(r.rows) else 0.0 for r in res)
            mu_level = max(mu_level, mu)
            feasible += bad == 0
            cells.append({"sigma_n": float(sigma), "y0": float(y0), "feasible": int(bad == 0),
                          "violations": bad, "mu": mu})
        levels.append({"sigma_n": float(sigma), "mu": mu_level, "feasible_count": feasible})
    return cells, levels


def roa_trend(levels: list) -> float:
    """Spearman correlation between realized mu and feasible-cell count across noise levels."""
    mu = [r["mu"] for r in levels]
    cnt = [r["feasible_count"] for r in levels]
    if len(set(cnt)) == 1 or len(set(mu)) == 1:
        return 0.0
    return float(stats.spearmanr(mu, cnt)[0])


def outlier_schedule(setup: Setup, times=None, scale: float | None = None) -> dict:
    s = setup.scenario
    times = s.outlier_times if times is None else times
    scale = s.outlier_scale if scale is None else scale
    spike = scale * plant.NoiseSpec(s.noise_sigma ** 2).bound
    return {int(round(t / s.Ts)): spike for t in times}


def outlier_study(setup: Setup, n_sim: int | None = None, threads: int = 1, dataset: str = "Dref",
                  probe_time: float = 15.0, outliers: dict | None = None, tol: float = 0.01) -> tuple:
    """Gated versus ungated rGP under scheduled measurement spikes."""
    s = setup.scenario
    seeds = seeds_for(setup, n_sim)
    outliers = outlier_schedule(setup) if outliers is None else outliers
    k_probe = int(round(probe_time / s.Ts))
    rows, results = [], {}
    for name, gate in (("gated", True), ("ungated", False)):
        res = run_batch(setup, "rgp", dataset, seeds, threads, gate=gate, outliers=outliers)
        results[name] = res
        ys = np.array([r.column("CA_true") for r in res if not r.aborted])
        conv = [abs(r.rows[-1]["CA_true"] - s.y_ref) <= tol and not r.aborted for r in res]
        rows.append({"variant": name, "converged": int(sum(conv)), "runs": len(res),
                     "std_at_probe": float(np.std(ys[:, k_probe])) if len(ys) else math.nan,
                     "rejected": int(sum(sum(x["gate_decision"] == "reject" for x in r.rows) for r in res)),
                     "v_bar": report_of(res).v_bar})
    return rows, results


def _timed(fn, trials: int, min_batch_s: float = 5e-3) -> float:
    """Median per-call time over ``trials`` batches, each lasting at least ``min_batch_s``."""
    t = time.perf_counter()
    fn()
    reps = max(1, int(min_batch_s / max(time.perf_counter() - t, 1e-7)))
    out = []
    for _ in range(trials):
        t = time.perf_counter()
        for _ in range(reps):
            fn()
        out.append((time.perf_counter() - t) / reps)
    return float(np.median(out))


def bench_chol(sizes=(50, 100, 200, 400), trials: int = 20, seed: int = 0) -> list:
    """Median time of one recursive append versus a full refactorization of the grown matrix.

    Kernel evaluations are excluded from both paths.
    """
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be increasing")
    rng = np.random.default_rng(seed)
    theta = Hyperparameters(0.5, (0.3, 0.3, 0.3, 0.3), 0.05, 6.6e-5)
    rows = []
    for n in sizes:
        w = rng.uniform(0, 1, (n + 1, 4))
        k = gp.kernel_matrix(w, theta)
        base = chol.factorize(k[:n, :n])
        col, diag = k[:n, n], k[n, n]
        t_rec = _timed(lambda: chol.append(base, col, diag), trials)
        t_full = _timed(lambda: chol.factorize(k), trials)
        r_rec = chol.append(base, col, diag).r
        r_full = chol.factorize(k).r
        err = float(np.linalg.norm(r_rec - r_full) / np.linalg.norm(r_full))
        rows.append({"n": int(n), "recursive_s": t_rec, "full_s": t_full, "speedup": t_full / t_rec,
                     "factor_rel_diff": err})
    return rows


def model_equilibrium_input(model: GpModel, y: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """Normalized input holding the model's mean at output ``y`` (normalized)."""
    f = lambda u: model.mean(np.append(DEFAULT_LAYOUT.initial(y), u)) - y
    if f(lo) * f(hi) > 0:
        raise Infeasible(f"model has no equilibrium at y={y} inside the input box")
    return float(optimize.brentq(f, lo, hi, xtol=1e-12))


def nominal_spec(setup: Setup, model: GpModel) -> mpc.OcpSpec:
    """OCP whose reference is an exact equilibrium of ``model`` with a matching terminal pair."""
    spec = setup.spec
    x_ref = spec.x_ref
    u_ref = model_equilibrium_input(model, float(x_ref[0]), *spec.u_box)
    lin = terminal.linearize(model, np.append(x_ref, u_ref))
    x_box = (np.full(3, spec.y_box[0]), np.full(3, spec.y_box[1]))
    pair = terminal.design_terminal(lin, x_box, spec.u_box, x_ref, u_ref, setup.scenario.p_scale)
    return dataclasses.replace(spec, u_ref=u_ref, p_matrix=pair.p_matrix, k_vector=pair.k_vector)


def theorem_check(setup: Setup, dataset: str = "Dref", lam: float = 10.0,
                  n_steps: int | None = None) -> tuple:
    """Noise-free nominal closed loop with every point a candidate, reference active from the start.

    The plant is the initial GP itself and the reference is its exact
    equilibrium.  ``lam`` weights the terminal cost; a large enough weight
    keeps the predicted terminal state in the region where the terminal
    pair decreases the cost.  Returns the largest one-step change of the
    optimal value, the largest change of ``V + stage cost`` and the run.
    """
    s = setup.scenario
    model = setup.models[dataset]
    spec = dataclasses.replace(nominal_spec(setup, model), lam=lam)
    cfg = loop_config(setup, "rgp", s.base_seed, noise_sigma=0.0, nominal=True, ref_switch_step=0,
                      n_steps=n_steps or s.n_steps, evolving=EvolvingConfig(), spec=spec)
    res = mpc.run_closed_loop(cfg, model)
    v, ell = res.column("V_N_star"), res.column("stage_cost")
    if len(v) < 2:
        return 0.0, 0.0, res
    dv = np.diff(v)
    return float(dv.max()), float((dv + ell[:-1]).max()), res
