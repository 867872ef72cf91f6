import json
import math
import shutil
import subprocess

import numpy as np
import pytest

from rgpmpc import io
from rgpmpc.config import Scenario, dump_scenario, load_scenario
from rgpmpc.gp import Hyperparameters, TrainingSet
from rgpmpc.narx import Scaling
from rgpmpc.terminal import TerminalPair


def test_default_scenario_values():
    s = Scenario()
    assert (s.horizon_n, s.q_diag, s.r_weight, s.lam) == (5, (100.0, 0.0, 0.0), 5.0, 1.0)
    assert s.u_box == (335.0, 372.0) and s.y_box == (0.35, 0.65)
    assert (s.Ts, s.n_steps, s.n_sim) == (0.5, 60, 50)
    assert math.isnan(s.u0) and math.isinf(s.capacity_m)


def test_dump_load_round_trip(tmp_path):
    s = Scenario().replace(n_sim=7, hard=False, capacity_m=40.0, roa_y0=(0.4, 0.5))
    path = tmp_path / "s.ini"
    path.write_text(dump_scenario(s))
    back = load_scenario(path)
    assert back.as_dict().keys() == s.as_dict().keys()
    for k, v in s.as_dict().items():
        w = back.as_dict()[k]
        assert (math.isnan(v) and math.isnan(w)) if isinstance(v, float) and math.isnan(v) else v == w


def test_partial_file_overrides_defaults(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text("[run]\nn_sim = 3\ne_bar = 0.01\n[ocp]\nhard = no\nu_box = 330, 380\n")
    s = load_scenario(path)
    assert (s.n_sim, s.e_bar, s.hard, s.u_box) == (3, 0.01, False, (330.0, 380.0))
    assert s.horizon_n == 5


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text("[run]\nnsim = 3\n")
    with pytest.raises(KeyError):
        load_scenario(path)


def test_bad_boolean_rejected(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text("[ocp]\nhard = maybe\n")
    with pytest.raises(ValueError):
        load_scenario(path)


def test_invalid_scenario_values():
    with pytest.raises(ValueError):
        Scenario(n_sim=0)
    with pytest.raises(ValueError):
        Scenario(radius=0.0)


def test_training_set_round_trip(tmp_path, rng):
    data = TrainingSet(rng.normal(size=(7, 4)), rng.normal(size=7))
    io.save_training_set(tmp_path / "d.txt", data)
    back = io.load_training_set(tmp_path / "d.txt")
    assert np.array_equal(back.regressors, data.regressors)
    assert np.array_equal(back.outputs, data.outputs)


def test_training_set_row_count_checked(tmp_path):
    (tmp_path / "d.txt").write_text("3 2\n1 2 3\n")
    with pytest.raises(ValueError):
        io.load_training_set(tmp_path / "d.txt")


def test_hyperparameters_round_trip(tmp_path):
    th = Hyperparameters(0.3, (0.1, 2.0, 3.5, 1e-3), 0.07, 6.5e-5)
    io.save_hyperparameters(tmp_path / "h.txt", th)
    assert io.load_hyperparameters(tmp_path / "h.txt") == th


def test_terminal_round_trip(tmp_path, rng):
    p = rng.normal(size=(3, 3))
    pair = TerminalPair(rng.normal(size=3), p @ p.T + np.eye(3))
    io.save_terminal(tmp_path / "t.txt", pair)
    back = io.load_terminal(tmp_path / "t.txt")
    assert np.array_equal(back.k_vector, pair.k_vector)
    assert np.array_equal(back.p_matrix, pair.p_matrix)


def test_scaling_round_trip(tmp_path):
    sc = Scaling(0.29987, 0.37016, 335.0, 37.0)
    io.save_scaling(tmp_path / "s.txt", sc)
    assert io.load_scaling(tmp_path / "s.txt") == sc


def test_csv_and_sidecar(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": math.nan}]
    path = io.write_csv(tmp_path / "x" / "t.csv", rows, meta={"seed": 3})
    assert path.read_text() == "a,b\n1,0.5\n2,nan\n"
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    assert meta["rows"] == 2 and meta["seed"] == 3 and meta["file"] == "t.csv"
    assert io.read_csv(path) == [{"a": "1", "b": "0.5"}, {"a": "2", "b": "nan"}]


@pytest.mark.skipif(shutil.which("git") is None, reason="git not installed")
def test_content_hash_matches_git(tmp_path):
    path = io.write_csv(tmp_path / "t.csv", [{"a": 1.25}])
    expected = subprocess.run(["git", "hash-object", str(path)], capture_output=True, text=True,
                              check=True).stdout.strip()
    assert json.loads(path.with_suffix(".meta.json").read_text())["content_hash"] == expected


def test_csv_is_byte_reproducible(tmp_path):
    rows = [{"v": 0.1 + 0.2, "k": 3}]
    a = io.write_csv(tmp_path / "a.csv", rows).read_bytes()
    b = io.write_csv(tmp_path / "b.csv", rows).read_bytes()
    assert a == b
