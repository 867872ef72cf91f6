"""Plain-text persistence: training sets, hyperparameters, terminal pairs, CSV with metadata."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .gp import Hyperparameters, TrainingSet
from .narx import Scaling
from .terminal import TerminalPair


def save_training_set(path, data: TrainingSet) -> None:
    """Header ``n n_w`` then one row per point: regressor entries followed by the output."""
    n, n_w = data.regressors.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {n_w}\n")
        for w, z in zip(data.regressors, data.outputs):
            fh.write(" ".join(repr(float(v)) for v in (*w, z)) + "\n")


def load_training_set(path) -> TrainingSet:
    with open(path, encoding="utf-8") as fh:
        n, n_w = (int(v) for v in fh.readline().split())
        rows = np.loadtxt(fh, ndmin=2) if n else np.zeros((0, n_w + 1))
    if rows.shape != (n, n_w + 1):
        raise ValueError(f"{path}: expected {n} rows of {n_w + 1} values, got {rows.shape}")
    return TrainingSet(rows[:, :n_w], rows[:, n_w])


def _write_kv(path, items: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            if isinstance(v, (list, tuple, np.ndarray)):
                v = ", ".join(repr(float(x)) for x in np.ravel(v))
            fh.write(f"{k} = {v}\n")


def _read_kv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def save_hyperparameters(path, theta: Hyperparameters) -> None:
    _write_kv(path, {"c": repr(theta.c), "lengthscales": theta.lengthscales,
                     "sigma_f2": repr(theta.sigma_f2), "sigma_n2": repr(theta.sigma_n2)})


def load_hyperparameters(path) -> Hyperparameters:
    kv = _read_kv(path)
    return Hyperparameters(float(kv["c"]), tuple(_floats(kv["lengthscales"])),
                           float(kv["sigma_f2"]), float(kv.get("sigma_n2", 0.0)))


def save_terminal(path, pair: TerminalPair) -> None:
    n = len(pair.k_vector)
    _write_kv(path, {"n_x": n, "k": pair.k_vector, "P": pair.p_matrix})


def load_terminal(path) -> TerminalPair:
    kv = _read_kv(path)
    n = int(kv["n_x"])
    return TerminalPair(np.array(_floats(kv["k"])), np.array(_floats(kv["P"])).reshape(n, n))


def save_scaling(path, sc: Scaling) -> None:
    _write_kv(path, {"y_lo": repr(sc.y_lo), "y_span": repr(sc.y_span),
                     "u_lo": repr(sc.u_lo), "u_span": repr(sc.u_span)})


def load_scaling(path) -> Scaling:
    kv = _read_kv(path)
    return Scaling(float(kv["y_lo"]), float(kv["y_span"]), float(kv["u_lo"]), float(kv["u_span"]))


def content_hash(data: bytes) -> str:
    """Git blob hash of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, rows: list, columns=None, meta: dict | None = None) -> Path:
    """Write dict rows to CSV plus a ``.meta.json`` sidecar with the content hash.

    Returns the CSV path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c, "")) for c in columns))
    body = ("\n".join(lines) + "\n").encode("utf-8")
    path.write_bytes(body)
    side = dict(meta or {})
    side["file"] = path.name
    side["rows"] = len(rows)
    side["content_hash"] = content_hash(body)
    path.with_suffix(".meta.json").write_text(json.dumps(side, indent=2, sort_keys=True, default=str) + "\n")
    return path


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
