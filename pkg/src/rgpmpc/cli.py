"""Command-line entry point.

Every subcommand writes CSV files (with ``.meta.json`` sidecars) and, where
useful, a PNG figure into ``--out``.  Exit status: 0 success, 2 infeasible,
1 any other error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from . import io, plots, terminal
from .config import Scenario, dump_scenario, load_scenario
from .errors import Infeasible, RgpMpcError
from .mpc import LOG_COLUMNS

log = logging.getLogger("rgpmpc")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _scenario(args) -> Scenario:
    s = load_scenario(args.config)
    if args.seed is not None:
        s = s.replace(base_seed=args.seed)
    return s


def _meta(args, s: Scenario, **extra) -> dict:
    return {"command": args.command, "config": s.as_dict(), **extra}


def _setup(args, s: Scenario) -> ex.Setup:
    thetas = None
    if getattr(args, "hp_dir", None):
        thetas = {name: io.load_hyperparameters(Path(args.hp_dir) / f"hp_{name}.txt") for name in ex.DATASETS}
    log.info("building data, models and terminal pair")
    return ex.build_setup(s, thetas)


def cmd_gen_data(args, s):
    setup = _setup(args, s)
    out = args.out
    traj = setup.raw.trajectory.columns()
    rows = [dict(zip(traj, vals)) for vals in zip(*traj.values())]
    io.write_csv(out / "raw_trajectory.csv", rows, meta=_meta(args, s, seed=s.data_seed))
    io.save_training_set(out / "raw_pairs.txt", setup.raw.data)
    for name in ex.DATASETS:
        io.save_training_set(out / f"set_{name}.txt", setup.sets[name])
    io.save_scaling(out / "scaling.txt", setup.scaling)
    (out / "scenario.ini").write_text(dump_scenario(s))
    return EXIT_OK


def cmd_fit_hp(args, s):
    setup = _setup(args, s)
    rows = []
    for name in ex.DATASETS:
        th = setup.thetas[name]
        io.save_hyperparameters(args.out / f"hp_{name}.txt", th)
        rows.append({"set": name, "n": len(setup.sets[name]), "c": th.c,
                     **{f"l{i + 1}": v for i, v in enumerate(th.lengthscales)},
                     "sigma_f2": th.sigma_f2, "sigma_n2": th.sigma_n2})
    io.write_csv(args.out / "hyperparameters.csv", rows, meta=_meta(args, s))
    return EXIT_OK


def cmd_validate(args, s):
    setup = _setup(args, s)
    rows = ex.cross_validate(setup)
    io.write_csv(args.out / "validation.csv", rows, meta=_meta(args, s))
    summary = ex.validation_summary(rows)
    io.write_csv(args.out / "validation_summary.csv",
                 [{"set": k, **v} for k, v in summary.items()], meta=_meta(args, s))
    plots.validation(rows, args.out / "validation.png")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_design_terminal(args, s):
    if args.a_row is not None:
        lin = terminal.companion(args.a_row, args.b1)
        x_ref = np.full(lin.n_x, args.x_ref)
        x_box = (np.full(lin.n_x, args.x_box[0]), np.full(lin.n_x, args.x_box[1]))
        pair = terminal.design_terminal(lin, x_box, tuple(args.u_box), x_ref, args.u_ref, s.p_scale)
    else:
        setup = _setup(args, s)
        lin, pair = setup.linear, setup.pair
    io.save_terminal(args.out / "terminal.txt", pair)
    rows = [{"name": f"k{i + 1}", "value": v} for i, v in enumerate(pair.k_vector)]
    rows += [{"name": f"P{i + 1}{j + 1}", "value": pair.p_matrix[i, j]}
             for i in range(lin.n_x) for j in range(lin.n_x)]
    rho = float(np.max(np.abs(np.linalg.eigvals(lin.a_matrix + np.outer(lin.b_vector, pair.k_vector)))))
    rows.append({"name": "spectral_radius", "value": rho})
    io.write_csv(args.out / "terminal.csv", rows, meta=_meta(args, s))
    print("k =", np.array2string(pair.k_vector, precision=6))
    print("P =", np.array2string(pair.p_matrix, precision=6))
    return EXIT_OK


def cmd_simulate(args, s):
    setup = _setup(args, s)
    over = {"gate": not args.no_gate}
    if args.outliers:
        over["outliers"] = ex.outlier_schedule(setup)
    res = ex.run_batch(setup, args.controller, args.dataset, [s.base_seed], **over)[0]
    io.write_csv(args.out / "simulate.csv", res.rows, LOG_COLUMNS,
                 meta=_meta(args, s, seed=s.base_seed, controller=args.controller, dataset=args.dataset,
                            aborted=res.aborted, violated=res.violated))
    plots.trajectories({args.controller: [res]}, args.out / "simulate.png", s.y_ref, s.y_box)
    print(f"total cost {res.total_cost:.4f}, aborted={res.aborted}, violated={res.violated}")
    return EXIT_INFEASIBLE if res.aborted else EXIT_OK


def cmd_compare(args, s):
    setup = _setup(args, s)
    rows, reports = ex.compare_controllers(setup, threads=args.threads)
    io.write_csv(args.out / "compare.csv", rows, meta=_meta(args, s, seeds=ex.seeds_for(setup)))
    for name in ex.DATASETS:
        plots.trajectories({c: reports[(c, name)].trajectories for c in ex.CONTROLLERS},
                           args.out / f"compare_{name}.png", s.y_ref, s.y_box)
    for r in rows:
        print(", ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_sweep(args, s):
    setup = _setup(args, s)
    grid = s.sweep_e_bar if args.kind == "e_bar" else s.sweep_sigma2_bar
    rows = ex.sweep_thresholds(setup, args.kind, grid, threads=args.threads)
    io.write_csv(args.out / f"sweep_{args.kind}.csv", rows, meta=_meta(args, s, seeds=ex.seeds_for(setup)))
    plots.sweep(rows, args.kind, args.out / f"sweep_{args.kind}.png")
    if args.capacity:
        cap, _ = ex.capacity_study(setup, threads=args.threads)
        io.write_csv(args.out / "capacity.csv", cap, meta=_meta(args, s, seeds=ex.seeds_for(setup)))
    return EXIT_OK


def cmd_roa(args, s):
    setup = _setup(args, s)
    cells, levels = ex.roa_sweep(setup, threads=args.threads)
    io.write_csv(args.out / "roa_cells.csv", cells, meta=_meta(args, s))
    io.write_csv(args.out / "roa_levels.csv", levels, meta=_meta(args, s, spearman=ex.roa_trend(levels)))
    plots.roa(cells, args.out / "roa.png")
    return EXIT_OK


def cmd_outliers(args, s):
    setup = _setup(args, s)
    rows, results = ex.outlier_study(setup, threads=args.threads)
    io.write_csv(args.out / "outliers.csv", rows, meta=_meta(args, s, schedule=ex.outlier_schedule(setup)))
    plots.trajectories(results, args.out / "outliers.png", s.y_ref, s.y_box)
    return EXIT_OK


def cmd_bench_chol(args, s):
    rows = ex.bench_chol(s.bench_sizes, s.bench_trials, s.base_seed)
    io.write_csv(args.out / "bench_chol.csv", rows, meta=_meta(args, s))
    plots.bench(rows, args.out / "bench_chol.png")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate excitation data and the local training sets"),
    "fit-hp": (cmd_fit_hp, "fit GP hyperparameters for every training set"),
    "validate": (cmd_validate, "held-out validation of the GP models"),
    "design-terminal": (cmd_design_terminal, "terminal gain and cost matrix"),
    "simulate": (cmd_simulate, "one closed-loop run"),
    "compare": (cmd_compare, "mean cost table for all controllers and sets"),
    "sweep": (cmd_sweep, "threshold sweep for candidate screening"),
    "roa": (cmd_roa, "feasibility map over initial outputs and noise levels"),
    "outliers": (cmd_outliers, "gated versus ungated learning under output spikes"),
    "bench-chol": (cmd_bench_chol, "recursive versus full Cholesky timing"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value scenario file")
    common.add_argument("--seed", type=int, help="base seed for closed-loop runs")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for replicate runs")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="rgpmpc", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {name: sub.add_parser(name, help=text, parents=[common]) for name, (_, text) in COMMANDS.items()}
    for name in ("validate", "design-terminal", "simulate", "compare", "sweep", "roa", "outliers"):
        subs[name].add_argument("--hp-dir", type=Path, help="reuse hyperparameters written by fit-hp")
    p = subs["design-terminal"]
    p.add_argument("--a-row", type=float, nargs="+", help="first row of A for a given companion model")
    p.add_argument("--b1", type=float, default=0.0, help="first entry of b for --a-row")
    p.add_argument("--x-ref", type=float, default=0.0)
    p.add_argument("--u-ref", type=float, default=0.0)
    p.add_argument("--x-box", type=float, nargs=2, default=(-1.0, 1.0))
    p.add_argument("--u-box", type=float, nargs=2, default=(-1.0, 1.0))
    p = subs["simulate"]
    p.add_argument("--controller", choices=ex.CONTROLLERS, default="rgp")
    p.add_argument("--dataset", choices=ex.DATASETS, default="Dref")
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--outliers", action="store_true", help="inject the configured output spikes")
    p = subs["sweep"]
    p.add_argument("--kind", choices=("e_bar", "sigma2_bar"), default="e_bar")
    p.add_argument("--capacity", action="store_true", help="also run the training-set capacity study")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        s = _scenario(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command][0](args, s)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RgpMpcError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
