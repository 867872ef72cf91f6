"""Scenario configuration with key=value file support.

Config files use INI-style sections whose keys are :class:`Scenario` field
names; section names only group keys for readability.  Tuples are written as
comma-separated numbers and ``inf`` is accepted anywhere a number is.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields

SECTIONS = {
    "data": ("data_seed", "y0", "u0", "y_ref", "u_ref", "Ts", "chirp_amplitude", "chirp_f0",
             "chirp_f1", "chirp_period", "radius", "n_target", "noise_sigma"),
    "gp": ("hp_budget", "hp_starts", "hp_seed"),
    "ocp": ("horizon_n", "q_diag", "r_weight", "lam", "p_scale", "u_box", "y_box", "barrier_gain",
            "penalty", "hard"),
    "run": ("n_steps", "ref_switch_time", "n_sim", "base_seed", "e_bar", "sigma2_bar", "capacity_m"),
    "study": ("outlier_times", "outlier_scale", "roa_y0", "roa_sigmas", "roa_reps", "roa_steps",
              "sweep_e_bar", "sweep_sigma2_bar", "bench_sizes", "bench_trials"),
}


@dataclass(frozen=True)
class Scenario:
    """Every declared knob of the CSTR experiments, in physical units."""

    data_seed: int = 0
    y0: float = 0.6
    u0: float = math.nan           # nan: equilibrium input for y0
    y_ref: float = 0.439
    u_ref: float = 356.0
    Ts: float = 0.5
    chirp_amplitude: float = 9.0
    chirp_f0: float = 0.01
    chirp_f1: float = 0.2
    chirp_period: float = 400.0
    radius: float = 0.03
    n_target: int = 40
    noise_sigma: float = 0.003
    hp_budget: int = 3000
    hp_starts: int = 6
    hp_seed: int = 0
    horizon_n: int = 5
    q_diag: tuple = (100.0, 0.0, 0.0)
    r_weight: float = 5.0
    lam: float = 1.0
    p_scale: float = 1.0
    u_box: tuple = (335.0, 372.0)
    y_box: tuple = (0.35, 0.65)
    barrier_gain: float = 1e3
    penalty: float = 1e6
    hard: bool = True
    n_steps: int = 60
    ref_switch_time: float = 5.0
    n_sim: int = 50
    base_seed: int = 1000
    e_bar: float = 0.0
    sigma2_bar: float = 0.0
    capacity_m: float = math.inf
    outlier_times: tuple = (7.0, 10.0, 12.5, 20.0)
    outlier_scale: float = 5.0
    roa_y0: tuple = (0.37, 0.41, 0.45, 0.49, 0.53, 0.57, 0.61, 0.63)
    roa_sigmas: tuple = (0.003, 0.006, 0.009, 0.012)
    roa_reps: int = 30
    roa_steps: int = 40
    sweep_e_bar: tuple = (0.0, 0.002, 0.005, 0.01, 0.02)
    sweep_sigma2_bar: tuple = (0.0, 1e-6, 5e-6, 2e-5, 1e-4)
    bench_sizes: tuple = (50, 100, 200, 400)
    bench_trials: int = 20

    def __post_init__(self):
        if self.n_sim < 1 or self.n_steps < 1:
            raise ValueError("n_sim and n_steps must be at least 1")
        if self.radius <= 0 or self.noise_sigma < 0:
            raise ValueError("radius must be positive and noise non-negative")

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _parse(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        kind = int if default and all(isinstance(v, int) for v in default) else float
        return tuple(kind(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def load_scenario(path=None, base: Scenario | None = None) -> Scenario:
    """Scenario from a key=value file layered over ``base`` (defaults if omitted)."""
    base = base or Scenario()
    if path is None:
        return base
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    known = {f.name: getattr(base, f.name) for f in fields(Scenario)}
    changes = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in known:
                raise KeyError(f"unknown config key {key!r} in section [{section}]")
            changes[key] = _parse(raw, known[key])
    return base.replace(**changes)


def dump_scenario(s: Scenario) -> str:
    """Key=value text that :func:`load_scenario` reads back to the same scenario."""
    out = []
    values = s.as_dict()
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        for key in keys:
            v = values[key]
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        out.append("")
    return "\n".join(out)
