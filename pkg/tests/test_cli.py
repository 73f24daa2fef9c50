import csv
import json

import numpy as np
import pytest

from quatpgo import admm, cli
from quatpgo.cli import main


def _gen_ring(tmp_path, name="ring", n=12, sr=0.0, st=0.0, seed=0):
    out = tmp_path / name
    assert main(["generate", "ring", "--n", str(n), "--sigma-r", str(sr), "--sigma-t", str(st),
                 "--seed", str(seed), "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_is_deterministic(tmp_path):
    _gen_ring(tmp_path, "a", n=100, sr=0.01, st=0.05, seed=7)
    _gen_ring(tmp_path, "b", n=100, sr=0.01, st=0.05, seed=7)
    text = (tmp_path / "a.g2o").read_text()
    assert text == (tmp_path / "b.g2o").read_text()
    assert (tmp_path / "a.truth.g2o").read_text() == (tmp_path / "b.truth.g2o").read_text()
    assert sum(line.startswith("EDGE_SE3:QUAT") for line in text.splitlines()) == 100
    truth_text = (tmp_path / "a.truth.g2o").read_text()
    assert "EDGE" not in truth_text and truth_text.count("VERTEX_SE3:QUAT") == 100


def test_generate_cube_path_only(tmp_path):
    out = tmp_path / "c"
    assert main(["generate", "cube", "--nhat", "2", "--p", "0", "--sigma-r", "0", "--sigma-t-rel", "0",
                 "--seed", "1", "--out", str(out)]) == 0
    assert (tmp_path / "c.g2o").read_text().count("EDGE_SE3:QUAT") == 7


def test_generate_rejects_bad_flags(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "ring", "--n", "10", "--sigma-r", "-1", "--sigma-t", "0", "--seed", "0",
              "--out", str(tmp_path / "x")])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err
    assert main(["generate", "ring", "--n", "2", "--sigma-r", "0", "--sigma-t", "0", "--seed", "0",
                 "--out", str(tmp_path / "x")]) != 0


@pytest.mark.parametrize("algo", cli.ALGOS)
def test_solve_noiseless_ring(tmp_path, algo):
    data = _gen_ring(tmp_path)
    out = tmp_path / f"s_{algo}"
    assert main(["solve", "--algo", algo, "--init", "chord", "--input", f"{data}.g2o",
                 "--truth", f"{data}.truth.g2o", "--threads", "1", "--out", str(out)]) == 0
    summary = json.loads((tmp_path / f"s_{algo}.summary.json").read_text())
    assert summary["algo"] == algo and summary["rel_err"] <= 1e-6
    rows = _rows(tmp_path / f"s_{algo}.convergence.csv")
    assert len(rows) == summary["iterations"] + 1
    assert list(rows[0]) == list(cli.CSV_HEADER)
    assert rows[0]["iter"] == "0" and rows[0]["rel_err"] != ""


def test_solve_noisy_ring_matches_reference_band(tmp_path):
    data = _gen_ring(tmp_path, n=100, sr=0.01, st=0.05, seed=0)
    out = tmp_path / "s"
    assert main(["solve", "--algo", "pieadmm", "--init", "chord", "--input", f"{data}.g2o",
                 "--truth", f"{data}.truth.g2o", "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "s.summary.json").read_text())
    assert 0.12 <= summary["rel_err"] <= 0.21
    assert summary["params"]["beta"] > 0 and summary["wall_time_s"] > 0


def test_solve_without_truth_and_file_init(tmp_path):
    data = _gen_ring(tmp_path, n=20, sr=0.02, st=0.05, seed=3)
    out = tmp_path / "s"
    assert main(["solve", "--algo", "mlm", "--init", "file", "--input", f"{data}.g2o", "--max-iter", "3",
                 "--out", str(out)]) == 0
    rows = _rows(tmp_path / "s.convergence.csv")
    assert all(r["rel_err"] == "" for r in rows)
    assert "rel_err" not in json.loads((tmp_path / "s.summary.json").read_text())
    assert (tmp_path / "s.poses.g2o").read_text().count("VERTEX_SE3:QUAT") == 20


def test_solve_divergence_exit_code_and_cleanup(tmp_path, monkeypatch, capsys):
    data = _gen_ring(tmp_path)

    def boom(*a, **k):
        raise admm.DivergenceError("non-finite iterate at iteration 3")

    monkeypatch.setattr(admm, "solve", boom)
    out = tmp_path / "d"
    assert main(["solve", "--algo", "pieadmm", "--init", "odo", "--input", f"{data}.g2o", "--out", str(out)]) == 2
    assert "diverged" in capsys.readouterr().err
    assert not list(tmp_path.glob("d.*"))


def test_solve_write_failure_removes_partial_outputs(tmp_path, monkeypatch):
    data = _gen_ring(tmp_path)

    def fail(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(cli.json, "dumps", fail)
    with pytest.raises(OSError):
        main(["solve", "--algo", "mgn", "--init", "odo", "--input", f"{data}.g2o", "--out", str(tmp_path / "w")])
    assert not list(tmp_path.glob("w.*"))


def test_solve_bad_inputs(tmp_path):
    data = _gen_ring(tmp_path)
    assert main(["solve", "--algo", "mgn", "--init", "odo", "--input", str(tmp_path / "nope.g2o"),
                 "--out", str(tmp_path / "o")]) == 1
    other = _gen_ring(tmp_path, "other", n=5)
    assert main(["solve", "--algo", "mgn", "--init", "odo", "--input", f"{data}.g2o",
                 "--truth", f"{other}.truth.g2o", "--out", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit):
        main(["solve", "--algo", "sgd", "--init", "odo", "--input", f"{data}.g2o", "--out", "o"])
    with pytest.raises(SystemExit):
        main(["solve", "--algo", "mgn", "--init", "random", "--input", f"{data}.g2o", "--out", "o"])


def _bench(tmp_path, grid, name="b", runs=2):
    g = tmp_path / f"{name}.json"
    g.write_text(json.dumps(grid))
    assert main(["bench", "ring", "--grid", str(g), "--runs", str(runs), "--threads", "1",
                 "--out", str(tmp_path / name)]) == 0
    return _rows(tmp_path / name / "summary.csv"), _rows(tmp_path / name / "runs.csv")


def test_bench_cells_and_algorithms(tmp_path):
    grid = {"n": 30, "sigma_r": [0.01, 0.03], "sigma_t": 0.05, "cells": [{"sigma_r": 0.05, "sigma_t": 0.2}]}
    cells, runs = _bench(tmp_path, grid)
    keys = {(r["sigma_r"], r["sigma_t"]) for r in cells}
    assert keys == {("0.01", "0.05"), ("0.03", "0.05"), ("0.05", "0.2")}
    for k in keys:
        algos = {r["algo"] for r in cells if (r["sigma_r"], r["sigma_t"]) == k}
        assert algos == set(cli.ALGOS)
    assert len(runs) == 3 * 3 * 2
    assert {r["seed"] for r in runs} == {"0", "1"}


def test_bench_cells_are_independent(tmp_path):
    both, _ = _bench(tmp_path, {"n": 30, "sigma_r": [0.01, 0.03], "sigma_t": 0.05, "algos": ["mgn"]}, "both")
    one, _ = _bench(tmp_path, {"n": 30, "sigma_r": [0.03], "sigma_t": 0.05, "algos": ["mgn"]}, "one")
    shared = [r for r in both if r["sigma_r"] == "0.03"]
    assert shared[0]["rel_err"] == one[0]["rel_err"]


def test_bench_records_errors_and_continues(tmp_path, monkeypatch):
    real = cli.run_solver

    def flaky(algo, *a, **k):
        if algo == "mlm":
            raise np.linalg.LinAlgError("singular")
        return real(algo, *a, **k)

    monkeypatch.setattr(cli, "run_solver", flaky)
    cells, runs = _bench(tmp_path, {"n": 20, "sigma_r": 0.01, "sigma_t": 0.05})
    bad = [r for r in cells if r["algo"] == "mlm"][0]
    assert bad["ok"] == "0" and "singular" in bad["errors"]
    good = [r for r in cells if r["algo"] == "mgn"][0]
    assert good["ok"] == "2" and float(good["rel_err"]) > 0


def test_bench_bad_grid(tmp_path):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"radius": 3}))
    assert main(["bench", "ring", "--grid", str(g), "--runs", "1", "--out", str(tmp_path / "o")]) == 1
    assert main(["bench", "ring", "--grid", str(tmp_path / "none.json"), "--runs", "1", "--out", "o"]) == 1


def test_eval(tmp_path, capsys):
    data = _gen_ring(tmp_path, n=10, sr=0.01, st=0.01)
    truth = f"{data}.truth.g2o"
    capsys.readouterr()
    assert main(["eval", "--est", truth, "--truth", truth]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["rel_err"] == pytest.approx(0.0, abs=1e-15) and set(rep["rotation_error_deg"]) == {"q50", "q90", "q99", "q100"}
    assert main(["eval", "--est", str(tmp_path / "missing.g2o"), "--truth", truth]) == 1
    assert "not found" in capsys.readouterr().err
    small = _gen_ring(tmp_path, "small", n=5)
    assert main(["eval", "--est", f"{small}.truth.g2o", "--truth", truth]) == 1
