import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from srot import random_problem
from srot.cli import main, read_config
from srot.colortransfer import RGBImage, read_ppm, synth_three_color, write_ppm
from srot.metrics import TRACE_COLUMNS
from srot.traceio import read_csv


def run(*argv):
    return main([str(a) for a in argv])


def trace_objectives(path):
    schema, cols, rows = read_csv(path)
    return [row[cols.index("objective")] for row in rows]


class TestSolve:
    @pytest.mark.xfail(strict=True, reason="plain BCFW with exact line search converges "
                       "sublinearly; gap ~3/k stays far above 1e-6 within 1000 epochs")
    def test_documented_plain_invocation(self, tmp_path):
        code = run("solve", "--gen", "random", "--m", 16, "--n", 16, "--lambda", 1e-2,
                   "--algo", "bcfw", "--sampling", "uniform", "--step", "els",
                   "--eps", 1e-6, "--seed", 1, "--out", tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert code == 0 and summary["final_gap"] <= 1e-6

    def test_converged_run(self, tmp_path):
        code = run("solve", "--gen", "random", "--m", 16, "--n", 16, "--lambda", 1e-2,
                   "--algo", "bcfw", "--variant", "pairwise", "--step", "els",
                   "--eps", 1e-6, "--seed", 1, "--max-epochs", 5000, "--out", tmp_path)
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["converged"] and summary["final_gap"] <= 1e-6
        T = np.loadtxt(tmp_path / "plan.txt")
        p = random_problem(16, 16, 1e-2, seed=1)
        np.testing.assert_allclose(T.sum(axis=0), p.b, atol=1e-10)
        schema, cols, rows = read_csv(tmp_path / "trace.csv")
        assert schema == "srot-trace/1" and tuple(cols) == TRACE_COLUMNS
        assert float(rows[-1][cols.index("gap")]) == summary["final_gap"]

    def test_budget_exit_code(self, tmp_path):
        assert run("solve", "--gen", "random", "--lambda", 1e-2, "--max-epochs", 3,
                   "--out", tmp_path) == 2

    def test_missing_lambda(self, tmp_path, capsys):
        assert run("solve", "--gen", "random", "--out", tmp_path) == 1
        assert "--lambda" in capsys.readouterr().err

    def test_bad_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as info:
            run("solve", "--algo", "newton")
        assert info.value.code == 1
        assert "usage" in capsys.readouterr().err

    @pytest.mark.parametrize("step", ["els", "dec"])
    def test_n1_fw_equals_bcfw(self, tmp_path, step):
        for algo in ("fw", "bcfw"):
            run("solve", "--gen", "random", "--m", 6, "--n", 1, "--lambda", 0.05,
                "--algo", algo, "--step", step, "--seed", 4, "--max-epochs", 80,
                "--eps", 1e-12, "--out", tmp_path / algo)
        assert trace_objectives(tmp_path / "fw" / "trace.csv") == \
            trace_objectives(tmp_path / "bcfw" / "trace.csv")

    def test_instance_file(self, tmp_path):
        inst = {"C": [[0.0, 1.0], [1.0, 0.0]], "a": [0.5, 0.5], "b": [0.5, 0.5]}
        (tmp_path / "inst.json").write_text(json.dumps(inst))
        code = run("solve", "--instance", tmp_path / "inst.json", "--lambda", 1.0,
                   "--variant", "pairwise", "--eps", 1e-12, "--out", tmp_path / "o")
        assert code == 0
        np.testing.assert_allclose(np.loadtxt(tmp_path / "o" / "plan.txt"),
                                   np.diag([0.5, 0.5]), atol=1e-12)

    def test_exclusive_sources(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            run("solve", "--gen", "random", "--instance", "x.json", "--lambda", 1)
        assert info.value.code == 1

    def test_lp_columns(self, tmp_path):
        run("solve", "--gen", "random", "--m", 5, "--n", 5, "--lambda", 0.01, "--lp",
            "--max-epochs", 5, "--out", tmp_path)
        schema, cols, rows = read_csv(tmp_path / "trace.csv")
        assert rows[-1][cols.index("matrix_error")] != "nan"

    def test_number_format(self, tmp_path):
        run("solve", "--gen", "random", "--m", 4, "--n", 4, "--lambda", 0.01,
            "--max-epochs", 3, "--out", tmp_path)
        text = (tmp_path / "trace.csv").read_text()
        assert "E" not in text.split("\n", 2)[2]
        assert "e-" in text or "e+" in text


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# defaults\nlambda = 0.05\nmax-epochs = 4\nm = 5\nn = 5\n"
                       "eps = 1e-14\n")
        run("solve", "--gen", "random", "--config", cfg, "--out", tmp_path / "a")
        s = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert s["lambda"] == 0.05 and s["epochs"] == 4 and s["shape"] == [5, 5]
        run("solve", "--gen", "random", "--config", cfg, "--max-epochs", 2,
            "--out", tmp_path / "b")
        s = json.loads((tmp_path / "b" / "summary.json").read_text())
        assert s["epochs"] == 2

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = red\n")
        with pytest.raises(SystemExit) as info:
            run("solve", "--config", cfg)
        assert info.value.code == 1

    def test_parser(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("a_b = 1  # trailing\n\nlambda=2\n")
        assert read_config(cfg) == {"a_b": "1", "lam": "2"}


class TestBench:
    ARGS = ("bench", "--algos", "BCFW-U-ELS,BCPFW-ELS", "--lambdas", "1e-2,1e-1",
            "--seeds", "3", "--m", 6, "--n", 6, "--max-epochs", 15, "--eps", 1e-9,
            "--deterministic")

    def test_outputs(self, tmp_path):
        assert run(*self.ARGS, "--out", tmp_path) == 0
        _, cols, runs = read_csv(tmp_path / "runs.csv")
        assert len(runs) == 12
        _, tcols, trows = read_csv(tmp_path / "traces.csv")
        assert tcols[:4] == ["run", "label", "lambda", "seed"]
        assert len({r[0] for r in trows}) == 12
        _, acols, arows = read_csv(tmp_path / "aggregate.csv")
        assert {(r[0], r[1]) for r in arows} == {
            (lab, f"{lam:.17e}") for lab in ("BCFW-U-ELS", "BCPFW-ELS") for lam in (1e-2, 1e-1)}
        assert all(r[3] == "3" for r in arows)

    def test_aggregate_monotone_for_els(self, tmp_path):
        run(*self.ARGS, "--out", tmp_path)
        _, cols, rows = read_csv(tmp_path / "aggregate.csv")
        k = cols.index("objective_median")
        series = {}
        for r in rows:
            series.setdefault((r[0], r[1]), []).append(float(r[k]))
        for vals in series.values():
            assert np.all(np.diff(vals) <= 1e-12)

    def test_byte_identical(self, tmp_path):
        run(*self.ARGS, "--out", tmp_path / "a")
        run(*self.ARGS, "--out", tmp_path / "b", "--workers", 2)
        for name in ("runs.csv", "traces.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_failed_run_gives_nonzero_exit(self, tmp_path):
        code = run("bench", "--algos", "BCFW-U-ELS", "--lambdas", "5e-324", "--seeds", "1",
                   "--m", 3, "--n", 3, "--max-epochs", 2, "--out", tmp_path)
        assert code == 1
        _, cols, runs = read_csv(tmp_path / "runs.csv")
        assert runs[0][cols.index("status")] == "error"

    def test_env_pool(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SROT_THREADS", "2")
        assert run(*self.ARGS, "--out", tmp_path) == 0

    def test_report(self, tmp_path, capsys):
        run(*self.ARGS, "--out", tmp_path)
        assert run("report", tmp_path, "--out", tmp_path / "rep") == 0
        assert (tmp_path / "rep" / "report.csv").read_bytes() == \
            (tmp_path / "aggregate.csv").read_bytes()
        svg = (tmp_path / "rep" / "gap.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg
        assert "BCPFW-ELS lam=0.01" in capsys.readouterr().out


class TestTransfer:
    def test_synthetic_with_snapshots(self, tmp_path):
        src, ref = synth_three_color()
        write_ppm(src, tmp_path / "s.ppm")
        write_ppm(ref, tmp_path / "r.ppm")
        code = run("transfer", tmp_path / "s.ppm", tmp_path / "r.ppm", "--k", 3,
                   "--lambda", 1e-6, "--algo", "bcfw", "--sampling", "permutation",
                   "--step", "dec", "--max-epochs", 150, "--eps", 1e-14,
                   "--snapshots", "10,140", "--out", tmp_path / "o")
        assert code == 2
        out = read_ppm(tmp_path / "o" / "output.ppm")
        assert (out.width, out.height) == (10, 10)
        assert (tmp_path / "o" / "snapshot_000140.ppm").exists()
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["snapshots"] == [10, 140]

    def test_same_image(self, tmp_path):
        rng = np.random.default_rng(0)
        img = RGBImage(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8))
        write_ppm(img, tmp_path / "a.ppm")
        code = run("transfer", tmp_path / "a.ppm", tmp_path / "a.ppm", "--k", 4,
                   "--lambda", 0.1, "--variant", "pairwise", "--eps", 1e-12,
                   "--max-epochs", 20000, "--out", tmp_path / "o")
        assert code == 0

    def test_unreadable(self, tmp_path, capsys):
        assert run("transfer", tmp_path / "nope.ppm", tmp_path / "nope.ppm",
                   "--lambda", 1, "--out", tmp_path) == 1
        (tmp_path / "bad.ppm").write_bytes(b"P5\n1 1\n255\n\0")
        assert run("transfer", tmp_path / "bad.ppm", tmp_path / "bad.ppm",
                   "--lambda", 1, "--out", tmp_path) == 1


class TestVerify:
    def test_quick_pass(self, capsys):
        assert run("verify", "--seeds", 2, "--sizes", "2..6", "--quick") == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "gap equivalence" in out

    def test_perturbed_gradient_detected(self, capsys):
        assert run("verify", "--seeds", 2, "--sizes", "2..6", "--quick",
                   "--perturb-gradient") == 1
        line = [l for l in capsys.readouterr().out.splitlines() if "gap equivalence" in l][0]
        assert "FAIL" in line

    def test_lp_battery_count(self):
        from srot.verify import check_lp_oracle
        res = check_lp_oracle(count=50, sizes=(2, 8), certificate_sizes=())
        assert res.passed and res.checked == 50


def test_console_script(tmp_path):
    exe = shutil.which("srot")
    cmd = [exe] if exe else [sys.executable, "-m", "srot.cli"]
    out = subprocess.run(cmd + ["solve", "--gen", "random", "--m", "4", "--n", "4",
                                "--lambda", "0.1", "--variant", "pairwise",
                                "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "converged" in out.stdout
