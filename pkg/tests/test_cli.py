from pathlib import Path

import numpy as np
import pytest

from nmfkit.cli import main
from nmfkit.io import DatasetSpec, load, read_log, write_dense_csv
from nmfkit.matrix import DenseMatrix

DATA_DIR = Path(__file__).parent / "data"
BOW_FIXTURE = DATA_DIR / "bow_200.txt"


@pytest.fixture
def planted_csv(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.uniform(size=(20, 3)) @ rng.uniform(size=(3, 30))
    path = tmp_path / "planted.csv"
    write_dense_csv(DenseMatrix(v), path)
    return path, v


class TestFit:
    def test_planted_run_writes_artifacts(self, planted_csv, tmp_path, capsys):
        path, v = planted_csv
        out = tmp_path / "run"
        code = main(["fit", str(path), "--format", "csv-dense", "--rank", "3",
                     "--max-iter", "200", "--seed", "1", "--out", str(out)])
        assert code == 0
        for name in ("G.csv", "F.csv", "log.csv", "manifest.txt"):
            assert (out / name).exists()
        log = read_log(out / "log.csv")
        assert log.final_objective <= 1e-3 * 0.5 * np.sum(v**2)
        g = load(DatasetSpec(out / "G.csv", "csv-dense"))
        f = load(DatasetSpec(out / "F.csv", "csv-dense"))
        assert g.array.shape == (20, 3) and f.array.shape == (3, 30)

    def test_rank_zero_exits_2_with_usage(self, planted_csv, tmp_path, capsys):
        path, _ = planted_csv
        code = main(["fit", str(path), "--format", "csv-dense", "--rank", "0",
                     "--out", str(tmp_path / "x")])
        assert code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_file_exits_3(self, tmp_path, capsys):
        code = main(["fit", str(tmp_path / "nope.csv"), "--format", "csv-dense",
                     "--rank", "2", "--out", str(tmp_path / "x")])
        assert code == 3

    def test_malformed_data_exits_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3\n")
        code = main(["fit", str(bad), "--format", "csv-dense", "--rank", "2",
                     "--out", str(tmp_path / "x")])
        assert code == 3

    def test_mur_solver_trails_alo_at_equal_budget(self, planted_csv, tmp_path):
        path, _ = planted_csv
        out_alo = tmp_path / "alo"
        out_mur = tmp_path / "mur"
        for solver, out in (("alo", out_alo), ("mur", out_mur)):
            code = main(["fit", str(path), "--format", "csv-dense", "--rank", "3",
                         "--max-iter", "100", "--seed", "1", "--solver", solver,
                         "--out", str(out)])
            assert code == 0
        alo = read_log(out_alo / "log.csv")
        mur = read_log(out_mur / "log.csv")
        assert alo.final_objective <= mur.final_objective

    def test_identical_runs_are_bit_identical(self, planted_csv, tmp_path):
        path, _ = planted_csv
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["fit", str(path), "--format", "csv-dense", "--rank", "3",
                         "--max-iter", "40", "--seed", "5", "--workers", "1",
                         "--out", str(out)])
            assert code == 0
            outs.append(out)
        for name in ("G.csv", "F.csv"):
            assert (outs[0] / name).read_text() == (outs[1] / name).read_text()
        # log objective/k_bar columns identical; seconds may differ
        a = read_log(outs[0] / "log.csv")
        b = read_log(outs[1] / "log.csv")
        assert a.objective == b.objective
        assert a.k_bar == b.k_bar

    def test_bow_fixture_runs(self, tmp_path):
        out = tmp_path / "bow"
        code = main(["fit", str(BOW_FIXTURE), "--format", "uci-bow", "--tfidf",
                     "--rank", "4", "--max-iter", "30", "--out", str(out)])
        assert code == 0
        log = read_log(out / "log.csv")
        obj = np.array(log.objective)
        assert np.all(np.diff(obj) <= 1e-9 * np.abs(obj[:-1]))

    def test_manifest_records_resolved_flags(self, planted_csv, tmp_path):
        path, _ = planted_csv
        out = tmp_path / "m"
        main(["fit", str(path), "--format", "csv-dense", "--rank", "3",
              "--seed", "17", "--max-iter", "5", "--out", str(out)])
        manifest = (out / "manifest.txt").read_text()
        entries = dict(line.split("=", 1) for line in manifest.strip().splitlines())
        assert entries["seed"] == "17"
        assert entries["rank"] == "3"
        assert entries["format"] == "csv-dense"
        assert entries["subcommand"] == "fit"
        assert entries["version"].startswith("nmfkit-")

    def test_outputs_confined_to_out_dir(self, planted_csv, tmp_path, monkeypatch):
        path, _ = planted_csv
        out = tmp_path / "only-here"
        cwd = tmp_path / "cwd"
        cwd.mkdir()
        monkeypatch.chdir(cwd)
        code = main(["fit", str(path), "--format", "csv-dense", "--rank", "2",
                     "--max-iter", "3", "--out", str(out)])
        assert code == 0
        assert list(cwd.iterdir()) == []


class TestBench:
    def test_two_solver_summary(self, planted_csv, tmp_path):
        path, _ = planted_csv
        out = tmp_path / "bench"
        code = main(["bench", str(path), "--format", "csv-dense", "--rank", "3",
                     "--max-iter", "50", "--seed", "3", "--out", str(out)])
        assert code == 0
        lines = (out / "summary.csv").read_text().strip().splitlines()
        assert lines[0] == "solver,final_objective,k_bar,seconds"
        assert len(lines) == 3
        rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
        assert set(rows) == {"alo", "mur"}
        assert float(rows["alo"][1]) <= float(rows["mur"][1])
        assert float(rows["alo"][2]) <= 5.0
        assert (out / "alo" / "log.csv").exists()
        assert (out / "mur" / "log.csv").exists()

    def test_unknown_solver_exits_2(self, planted_csv, tmp_path, capsys):
        path, _ = planted_csv
        code = main(["bench", str(path), "--format", "csv-dense", "--rank", "2",
                     "--solvers", "alo,spam", "--out", str(tmp_path / "x")])
        assert code == 2

    def test_repeat_bench_bit_identical(self, planted_csv, tmp_path):
        path, _ = planted_csv
        logs = []
        for name in ("p", "q"):
            out = tmp_path / name
            code = main(["bench", str(path), "--format", "csv-dense", "--rank", "3",
                         "--max-iter", "25", "--seed", "9", "--solvers", "alo",
                         "--out", str(out)])
            assert code == 0
            logs.append(read_log(out / "alo" / "log.csv"))
        assert logs[0].objective == logs[1].objective


class TestNqpDemo:
    def test_default_contrast(self, capsys):
        assert main(["nqp-demo"]) == 0
        out = capsys.readouterr().out
        lines = [ln for ln in out.strip().splitlines() if ln]
        assert len(lines) == 3
        plain_iters = int(lines[1].split()[1])
        combined_iters = int(lines[2].split()[1])
        assert 50 <= plain_iters <= 70
        assert combined_iters <= 2
        assert "79.07" in lines[1] and "9.209" in lines[2]

    def test_loose_tolerance_is_never_slower(self, capsys):
        def counts(tol):
            assert main(["nqp-demo", "--tol", tol]) == 0
            lines = capsys.readouterr().out.strip().splitlines()
            return int(lines[1].split()[1]), int(lines[2].split()[1])

        tight = counts("1e-10")
        loose = counts("1e-4")
        assert loose[0] <= tight[0] and loose[1] <= tight[1]

    def test_start_at_optimum(self, capsys):
        x_star = np.linalg.solve(np.array([[1.0, 0.1], [0.1, 10.0]]),
                                 np.array([80.0, 100.0]))
        assert main(["nqp-demo", "--x0", f"{x_star[0]},{x_star[1]}"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert int(lines[1].split()[1]) <= 1
        assert int(lines[2].split()[1]) <= 1

    def test_bad_x0_exits_2(self, capsys):
        assert main(["nqp-demo", "--x0", "1,-2"]) == 2


class TestConvert:
    def test_bow_to_matrix_market_round_trip(self, tmp_path):
        out = tmp_path / "conv"
        code = main(["convert", str(BOW_FIXTURE), "--format", "uci-bow",
                     "--to", "matrix-market", "--out", str(out)])
        assert code == 0
        original = load(DatasetSpec(BOW_FIXTURE, "uci-bow"))
        converted = load(DatasetSpec(out / "converted.mtx", "matrix-market"))
        assert converted.nnz == original.nnz
        np.testing.assert_array_equal(converted.indices, original.indices)
        np.testing.assert_array_equal(converted.values, original.values)

    def test_dense_to_matrix_market_and_back(self, planted_csv, tmp_path):
        path, v = planted_csv
        out = tmp_path / "conv"
        code = main(["convert", str(path), "--format", "csv-dense",
                     "--to", "matrix-market", "--name", "v.mtx", "--out", str(out)])
        assert code == 0
        back = load(DatasetSpec(out / "v.mtx", "matrix-market"))
        np.testing.assert_allclose(back.to_dense().array, v, rtol=1e-15)


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "nmfkit" in capsys.readouterr().out


def test_no_command_exits_2(capsys):
    assert main([]) == 2
