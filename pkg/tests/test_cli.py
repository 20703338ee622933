"""Tests for the command-line harness and the benchmark table writers."""

import csv
import json
import os

import numpy as np
import pytest

from odefilter import bench, cli, problems


def read_ndjson(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSolveCommand:
    def test_fixed_grid_stream(self, tmp_path):
        out = tmp_path / "traj.ndjson"
        code = cli.main(
            [
                "solve",
                "--problem", "vanderpol",
                "--param", "mu=2",
                "--solver", "ek1-dense",
                "--order", "2",
                "--fixed-steps", "10",
                "--seed", "5",
                "--output", str(out),
            ]
        )
        assert code == 0
        records = read_ndjson(out)
        assert len(records) == 12
        meta = records[-1]
        assert meta["kind"] == "metadata"
        assert meta["problem"] == "vanderpol"
        assert meta["params"]["mu"] == 2.0
        assert meta["strategy"] == "dense-ek1"
        assert meta["structure"] == "dense"
        assert meta["order"] == 2
        assert meta["grid"] == "fixed"
        assert meta["seed"] == 5
        assert meta["status"] == "ok"
        assert all(rec["kind"] == "state" for rec in records[:-1])

    def test_exhausted_step_budget_keeps_partial_file(self, tmp_path):
        out = tmp_path / "partial.ndjson"
        code = cli.main(
            [
                "solve",
                "--problem", "vanderpol",
                "--param", "mu=100000",
                "--solver", "ek1-dense",
                "--max-steps", "50",
                "--output", str(out),
            ]
        )
        assert code == 1
        records = read_ndjson(out)
        meta = records[-1]
        assert meta["status"] == "max-steps"
        assert meta["n_accepted"] == 50
        assert meta["failure_t"] is not None
        assert len(records) == 52

    def test_invalid_configuration(self, tmp_path, capsys):
        code = cli.main(
            [
                "solve",
                "--problem", "vanderpol",
                "--solver", "ek0-kronecker",
                "--diffusion", "tv-vector",
                "--output", str(tmp_path / "x.ndjson"),
            ]
        )
        assert code == 2
        assert "scalar diffusion" in capsys.readouterr().err

    def test_unknown_problem(self, tmp_path, capsys):
        code = cli.main(
            ["solve", "--problem", "heat", "--output", str(tmp_path / "x.ndjson")]
        )
        assert code == 2
        assert "unknown problem" in capsys.readouterr().err

    def test_malformed_param(self, tmp_path, capsys):
        code = cli.main(
            [
                "solve",
                "--problem", "vanderpol",
                "--param", "mu",
                "--output", str(tmp_path / "x.ndjson"),
            ]
        )
        assert code == 2
        assert "key=value" in capsys.readouterr().err

    def test_zero_fixed_steps(self, tmp_path, capsys):
        code = cli.main(
            [
                "solve",
                "--problem", "vanderpol",
                "--fixed-steps", "0",
                "--output", str(tmp_path / "x.ndjson"),
            ]
        )
        assert code == 2
        assert "at least 1" in capsys.readouterr().err

    def test_seed_reaches_grid_sampling(self, tmp_path):
        out = tmp_path / "fhn.ndjson"
        code = cli.main(
            [
                "solve",
                "--problem", "fhn",
                "--param", "grid=4",
                "--solver", "ek0-blockdiag",
                "--order", "2",
                "--fixed-steps", "3",
                "--seed", "9",
                "--output", str(out),
            ]
        )
        assert code == 0
        meta = read_ndjson(out)[-1]
        assert meta["params"]["seed"] == 9
        assert meta["grid_layout"] == "row-major-u-then-v"
        assert meta["boundary"] == "neumann-mirrored"


class TestBenchStepCommand:
    def test_table_schema_and_skips(self, tmp_path):
        out = tmp_path / "steps.csv"
        code = cli.main(
            [
                "bench-step",
                "--dims", "4,8",
                "--order", "2",
                "--solver", "ek0-blockdiag",
                "--solver", "ek1-dense",
                "--repeats", "1",
                "--dense-cutoff", "4",
                "--output", str(out),
            ]
        )
        assert code == 0
        rows = read_csv(out)
        assert rows[0] == ["solver", "nu", "d", "median_seconds", "min_seconds", "status"]
        assert len(rows) == 5
        by_key = {(r[0], r[2]): r for r in rows[1:]}
        assert by_key[("ek1-dense", "8")][5] == "skipped"
        assert by_key[("ek1-dense", "8")][3] == ""
        assert by_key[("ek1-dense", "4")][5] == "ok"
        for row in rows[1:]:
            if row[5] == "ok":
                assert float(row[3]) > 0 and float(row[4]) > 0

    def test_layout_is_deterministic(self, tmp_path):
        argv = [
            "bench-step",
            "--dims", "4,8",
            "--order", "2",
            "--solver", "ek0-blockdiag",
            "--repeats", "1",
            "--output", "",
        ]
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(argv[:-1] + [str(out_a)]) == 0
        assert cli.main(argv[:-1] + [str(out_b)]) == 0
        fixed = lambda rows: [r[:3] + r[5:] for r in rows]
        assert fixed(read_csv(out_a)) == fixed(read_csv(out_b))

    def test_zero_repeats(self, tmp_path, capsys):
        code = cli.main(
            [
                "bench-step",
                "--dims", "4",
                "--repeats", "0",
                "--output", str(tmp_path / "x.csv"),
            ]
        )
        assert code == 2
        assert "at least 1" in capsys.readouterr().err


class TestWorkPrecisionCommand:
    def test_small_run(self, tmp_path):
        out = tmp_path / "wp.csv"
        code = cli.main(
            [
                "work-precision",
                "--problem", "pleiades",
                "--tols", "1e-3",
                "--solver", "ek1-diag",
                "--order", "3",
                "--reference-steps", "2000",
                "--output", str(out),
            ]
        )
        assert code == 0
        rows = read_csv(out)
        assert rows[0] == [
            "solver", "nu", "rtol", "rmse_final", "wall_seconds", "n_steps", "status",
        ]
        assert rows[1][0] == "reference:rk4-fixed-2000"
        assert rows[1][6] == "reference"
        assert rows[2][0] == "ek1-diag" and rows[2][6] == "ok"
        assert float(rows[2][3]) > 0.0
        assert int(rows[2][5]) > 0

    def test_tols_must_descend(self, tmp_path, capsys):
        code = cli.main(
            [
                "work-precision",
                "--tols", "1e-9,1e-3",
                "--output", str(tmp_path / "x.csv"),
            ]
        )
        assert code == 2
        assert "descending" in capsys.readouterr().err

    def test_tols_must_be_nonempty(self, tmp_path, capsys):
        code = cli.main(
            ["work-precision", "--tols", ",", "--output", str(tmp_path / "x.csv")]
        )
        assert code == 2
        assert "nonempty" in capsys.readouterr().err


class TestStiffnessCommand:
    def test_mus_are_deduplicated_and_sorted(self, tmp_path):
        out = tmp_path / "stiff.csv"
        code = cli.main(
            [
                "stiffness",
                "--mus", "5,5,2",
                "--solver", "ek1-dense",
                "--order", "3",
                "--rtol", "1e-3",
                "--atol", "1e-3",
                "--output", str(out),
            ]
        )
        assert code == 0
        rows = read_csv(out)
        assert rows[0] == ["solver", "nu", "mu", "n_accepted", "n_rejected", "completed"]
        assert [r[2] for r in rows[1:]] == ["2.0", "5.0"]
        for row in rows[1:]:
            assert row[5] == "true"
            assert int(row[3]) > 0

    def test_nonpositive_mu(self, tmp_path, capsys):
        code = cli.main(
            ["stiffness", "--mus", "-3", "--output", str(tmp_path / "x.csv")]
        )
        assert code == 2
        assert "positive" in capsys.readouterr().err

    def test_parallel_matches_serial(self, tmp_path):
        # loose tolerances keep the four solves cheap; only layout equality matters
        serial, parallel = tmp_path / "s.csv", tmp_path / "p.csv"
        kwargs = dict(order=3, rtol=1e-3, atol=1e-3)
        assert bench.run_stiffness([2.0, 5.0], ["ek1-dense"], serial, **kwargs) == 0
        assert (
            bench.run_stiffness(
                [2.0, 5.0], ["ek1-dense"], parallel, parallel=True, **kwargs
            )
            == 0
        )
        assert serial.read_text() == parallel.read_text()


class TestBenchInternals:
    def test_unknown_solver_token(self):
        with pytest.raises(ValueError, match="unknown solver"):
            bench.make_config("ek2-dense", 3)

    def test_unknown_diffusion_token(self):
        with pytest.raises(ValueError, match="unknown diffusion"):
            bench.make_config("ek1-dense", 3, diffusion="tv-matrix")

    def test_dims_must_ascend(self, tmp_path):
        with pytest.raises(ValueError, match="sorted ascending"):
            bench.run_bench_step([8, 4], [2], ["ek1-diag"], tmp_path / "x.csv")

    def test_reference_needs_a_step(self):
        with pytest.raises(ValueError, match="at least one step"):
            bench.rk4_final_state(problems.vanderpol(1.0), 0)

    def test_reference_is_accurate_on_linear_problem(self):
        # one RK4 step of dy/dt = -y matches the quartic Taylor factor
        prob = problems.OdeProblem(
            name="decay",
            dim=1,
            f=lambda t, y: -y,
            y0=np.ones(1),
            t0=0.0,
            tmax=1.0,
        )
        got = bench.rk4_final_state(prob, 1)[0]
        z = -1.0
        expected = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
        assert got == pytest.approx(expected, rel=1e-15)


class TestArgumentParsing:
    def test_param_parsing(self):
        assert cli._parse_params(["mu=3", "n=6"]) == {"mu": 3.0, "n": 6.0}
        assert cli._parse_params(None) == {}

    def test_list_parsing(self):
        assert cli._floats("1e-3,1e-4") == [1e-3, 1e-4]
        assert cli._ints("4,8,16") == [4, 8, 16]

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv(cli.THREAD_ENV, "2")
        for var in cli._THREAD_VARS:
            monkeypatch.delenv(var, raising=False)
        cli._cap_threads()
        for var in cli._THREAD_VARS:
            assert os.environ[var] == "2"

    def test_thread_cap_respects_existing(self, monkeypatch):
        monkeypatch.setenv(cli.THREAD_ENV, "2")
        monkeypatch.setenv("OMP_NUM_THREADS", "8")
        cli._cap_threads()
        assert os.environ["OMP_NUM_THREADS"] == "8"
