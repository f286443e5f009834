import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from extremize import cli
from extremize.experiments import ExperimentConfig, run_concrete, run_simulate
from extremize.errors import ConfigError, TooFewRows

from synthetic import write_concrete_like

SMALL = ["--k-train", "400", "--k-test", "300", "--bootstrap", "20"]


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "sim"
        assert cli.main(["simulate", "--out", str(out), "--seed", "1", *SMALL]) == 0
        printed = capsys.readouterr().out.split()
        files = tree(out)
        assert {"results.csv", "parameters.csv", "manifest.json", "aggregators/xstar.json"} <= set(files)
        assert "diagrams/xstar_bins.csv" in files and "diagrams/xrevealed_hist.csv" in files
        assert len(printed) == len(files)
        rows = read_csv(out / "results.csv")
        assert [r["forecast"] for r in rows] == ["best_individual", "median", "xbar", "xw", "xstar", "xrevealed"]
        for r in rows:
            gap = abs(float(r["L"]) - (float(r["REL"]) - float(r["RES"]) + float(r["UNC"])))
            assert gap <= float(r["identity_residual"]) + 1e-12
        star = json.loads((out / "aggregators" / "xstar.json").read_text())
        assert set(star) == {"alpha", "weights", "mu0", "mu0_defined"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 1

    def test_deterministic(self, tmp_path):
        args = ["simulate", "--seed", "5", "--scenario", "high-overlap", *SMALL]
        assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
        assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    def test_seed_changes_output(self, tmp_path):
        cli.main(["simulate", "--seed", "1", "--out", str(tmp_path / "a"), *SMALL])
        cli.main(["simulate", "--seed", "2", "--out", str(tmp_path / "b"), *SMALL])
        assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()

    def test_custom_structure(self, tmp_path):
        path = tmp_path / "three.json"
        path.write_text(json.dumps({"delta": [0.2, 0.3, 0.4], "rho": 0.1}))
        out = tmp_path / "out"
        assert cli.main(["simulate", "--scenario", str(path), "--out", str(out), *SMALL]) == 0
        params = read_csv(out / "parameters.csv")
        assert params[0]["scenario"] == "three"
        assert "w3" in params[0]

    def test_singular_structure_skips_revealed(self, tmp_path):
        path = tmp_path / "dup.json"
        path.write_text(json.dumps({"delta": [0.3, 0.3], "rho": 0.3}))
        out = tmp_path / "out"
        assert cli.main(["simulate", "--scenario", str(path), "--out", str(out), *SMALL]) == 0
        assert "xrevealed" not in [r["forecast"] for r in read_csv(out / "results.csv")]

    def test_save_panels(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["simulate", "--save-panels", "--out", str(out), *SMALL])
        lines = (out / "panels" / "train.csv").read_text().splitlines()
        assert lines[0] == "y,x1,x2,x3,x4,x5" and len(lines) == 401

    def test_unknown_scenario(self, tmp_path, capsys):
        assert cli.main(["simulate", "--scenario", "nope", "--out", str(tmp_path), *SMALL]) == 1
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["error"] == "ConfigError" and record["command"] == "simulate"

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            run_simulate(ExperimentConfig(k_train=1))
        with pytest.raises(ConfigError):
            ExperimentConfig(mode="concrete", folds=1).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(n_bins=1).validate()


class TestConcrete:
    def test_synthetic_run(self, tmp_path):
        data = write_concrete_like(tmp_path / "c.csv", seed=1, k=400)
        out = tmp_path / "out"
        assert cli.main(["concrete", "--data", str(data), "--out", str(out), "--bootstrap", "20"]) == 0
        rows = read_csv(out / "results.csv")
        names = {(r["scenario"], r["forecast"]) for r in rows}
        assert {("individual", "MF"), ("no-overlap", "xstar"), ("high-overlap", "xw")} <= names
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["dataset"]["rows"] == 400
        assert sum(manifest["fold_sizes"]) == 400
        params = read_csv(out / "parameters.csv")
        star = [p for p in params if p["forecast"] == "xstar"]
        assert all(float(p["alpha"]) > 0 for p in star)

    def test_fold_predictions_are_out_of_fold(self, tmp_path):
        # pooled results cover every row exactly once
        data = write_concrete_like(tmp_path / "c.csv", seed=2, k=123)
        res = run_concrete(ExperimentConfig(mode="concrete", folds=5, bootstrap_b=0), data)
        for r in res.table.rows:
            assert r.decomposition.unc == res.table.rows[0].decomposition.unc

    def test_deterministic(self, tmp_path):
        data = write_concrete_like(tmp_path / "c.csv", seed=3, k=200)
        args = ["concrete", "--data", str(data), "--seed", "7", "--bootstrap", "30", "--folds", "4"]
        cli.main([*args, "--out", str(tmp_path / "a")])
        cli.main([*args, "--out", str(tmp_path / "b")])
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    def test_two_rows_fail_with_fold_context(self, tmp_path, capsys):
        data = write_concrete_like(tmp_path / "toy.csv", seed=0, k=2)
        with pytest.raises(TooFewRows) as info:
            run_concrete(ExperimentConfig(mode="concrete", bootstrap_b=0), data)
        assert info.value.fold == 1
        code = cli.main(["concrete", "--data", str(data), "--out", str(tmp_path / "out")])
        assert code != 0
        record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert record["error"] == "TooFewRows"
        assert record["fold"] == 1 and record["message"].startswith("fold 1:")

    def test_bad_dataset(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        assert cli.main(["concrete", "--data", str(path), "--out", str(tmp_path / "o")]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "DatasetFormatError"

    def test_missing_dataset(self, tmp_path, capsys):
        assert cli.main(["concrete", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "DatasetFormatError"


class TestDiagram:
    def write_pairs(self, path, y, f, header=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if header:
                w.writerow(["y", "f"])
            w.writerows((repr(float(a)), repr(float(b))) for a, b in zip(y, f))
        return path

    def test_perfect_forecasts_on_diagonal(self, tmp_path, rng):
        f = rng.normal(size=100)
        data = self.write_pairs(tmp_path / "p.csv", f, f)
        assert cli.main(["diagram", "--data", str(data), "--out", str(tmp_path / "o"), "--bootstrap", "50"]) == 0
        for r in read_csv(tmp_path / "o" / "bins.csv"):
            assert abs(float(r["mean_forecast"]) - float(r["mean_outcome"])) <= 1e-12

    def test_two_per_bin(self, tmp_path, rng):
        data = self.write_pairs(tmp_path / "p.csv", rng.normal(size=10), rng.normal(size=10), header=False)
        cli.main(["diagram", "--data", str(data), "--out", str(tmp_path / "o"), "--bins", "5", "--bootstrap", "0"])
        assert [int(r["count"]) for r in read_csv(tmp_path / "o" / "bins.csv")] == [2] * 5
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["decomposition"]["binned"] is True

    def test_shuffle_invariant(self, tmp_path, rng):
        y, f = rng.normal(size=200), rng.normal(size=200)
        order = np.argsort(f)
        shuffled = rng.permutation(200)
        a = self.write_pairs(tmp_path / "sorted.csv", y[order], f[order])
        b = self.write_pairs(tmp_path / "shuffled.csv", y[shuffled], f[shuffled])
        for name, path in (("a", a), ("b", b)):
            cli.main(["diagram", "--data", str(path), "--out", str(tmp_path / name), "--bootstrap", "0"])
        assert (tmp_path / "a" / "bins.csv").read_bytes() == (tmp_path / "b" / "bins.csv").read_bytes()

    def test_parse_error(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        path.write_text("1,2,3\n")
        assert cli.main(["diagram", "--data", str(path), "--out", str(tmp_path / "o")]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ParseError"


class TestDebugDump:
    def test_qp_failure_dump(self, tmp_path, monkeypatch, capsys):
        from extremize import aggregators, qp

        real_solve = qp.solve

        def failing(problem, tol=qp.DEFAULT_TOL, max_iter=None):
            return real_solve(problem, tol=tol, max_iter=0)

        monkeypatch.setattr(aggregators.qp, "solve", failing)
        out = tmp_path / "o"
        code = cli.main(["simulate", "--debug", "--out", str(out), *SMALL])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "MaxIterationsExceeded"
        dump = json.loads((out / "qp_debug.json").read_text())
        assert {"problem", "beta", "kkt_residual"} <= set(dump)
        assert len(dump["problem"]["q"]) == 5


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "extremize", "diagram", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 1
    assert json.loads(proc.stderr)["command"] == "diagram"
