"""CLI contract: flags, exit codes, report files, sweeps, gradcheck."""

import json

import pytest

import dkepool.pooling
from dkepool.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from dkepool.synthetic import separable_fixture
from dkepool.tensor import accumulate_grad, apply_op


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    return str(separable_fixture(tmp_path_factory.mktemp("cli_sep"), num_graphs=24))


FAST_FLAGS = [
    "--gnn", "gcn3", "--hidden", "4", "--folds", "2", "--epochs", "2",
    "--batch-size", "4", "--seed", "1",
]


def run_train(fixture_dir, extra, capsys):
    code = main(["train", "--dataset", fixture_dir, "--name", "SEPARABLE",
                 *FAST_FLAGS, *extra])
    out = capsys.readouterr()
    return code, out


class TestTrain:
    def test_writes_json_report(self, fixture_dir, capsys, tmp_path):
        out_file = tmp_path / "report.json"
        code, out = run_train(
            fixture_dir, ["--pool", "dkepool_r", "--out", str(out_file)], capsys
        )
        assert code == EXIT_OK
        report = json.loads(out.out)
        assert len(report["per_fold"]) == 2
        assert report["dataset"] == "SEPARABLE"
        assert json.loads(out_file.read_text()) == report
        # Full effective config echoed with its fingerprint.
        assert "fingerprint=" in out.err
        assert report["fingerprint"] in out.err

    def test_default_noise_only_for_robust_pool(self, fixture_dir, capsys):
        _, out = run_train(fixture_dir, ["--pool", "dkepool_r"], capsys)
        assert json.loads(out.out)["config"]["snr_db"] == 15.0
        _, out = run_train(fixture_dir, ["--pool", "dkepool"], capsys)
        assert json.loads(out.out)["config"]["snr_db"] is None

    def test_snr_off_and_explicit(self, fixture_dir, capsys):
        _, out = run_train(fixture_dir, ["--pool", "dkepool_r", "--snr", "off"],
                           capsys)
        assert json.loads(out.out)["config"]["snr_db"] is None
        _, out = run_train(fixture_dir, ["--pool", "mean", "--snr", "20"], capsys)
        assert json.loads(out.out)["config"]["snr_db"] == 20.0

    def test_projection_free_variant(self, fixture_dir, capsys):
        code, out = run_train(fixture_dir, ["--pool", "dkepool", "--d", "0"], capsys)
        assert code == EXIT_OK
        assert json.loads(out.out)["config"]["d"] == 0

    def test_missing_name_is_usage_error(self, fixture_dir, capsys):
        assert main(["train", "--dataset", fixture_dir]) == EXIT_USAGE

    def test_unknown_flag_rejected(self, fixture_dir):
        code = main(["train", "--dataset", fixture_dir, "--name", "SEPARABLE",
                     "--frobnicate", "1"])
        assert code == EXIT_USAGE

    def test_missing_dataset_is_data_error(self, tmp_path, capsys):
        code = main(["train", "--dataset", str(tmp_path), "--name", "NOPE"])
        assert code == EXIT_DATA

    def test_config_file_merge_flags_win(self, fixture_dir, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"pool": "mean", "epochs": 2, "hidden": 4,
                                   "gnn": "gcn3", "folds": 2, "batch_size": 4}))
        code = main(["train", "--dataset", fixture_dir, "--name", "SEPARABLE",
                     "--config", str(cfg), "--epochs", "3"])
        out = capsys.readouterr()
        assert code == EXIT_OK
        report = json.loads(out.out)
        assert report["config"]["pool"] == "mean"  # from file
        assert report["config"]["epochs"] == 3  # flag wins

    def test_identical_seeds_identical_reports(self, fixture_dir, capsys):
        _, first = run_train(fixture_dir, ["--pool", "sum"], capsys)
        _, second = run_train(fixture_dir, ["--pool", "sum"], capsys)
        a, b = json.loads(first.out), json.loads(second.out)
        a.pop("seconds"), b.pop("seconds")
        assert a == b


class TestEval:
    def test_single_fold_json(self, fixture_dir, capsys):
        code = main(["eval", "--dataset", fixture_dir, "--name", "SEPARABLE",
                     *FAST_FLAGS, "--pool", "mean", "--fold", "1"])
        out = capsys.readouterr()
        assert code == EXIT_OK
        payload = json.loads(out.out)
        assert payload["fold"] == 1 and 0.0 <= payload["accuracy"] <= 1.0

    def test_fold_out_of_range(self, fixture_dir, capsys):
        code = main(["eval", "--dataset", fixture_dir, "--name", "SEPARABLE",
                     *FAST_FLAGS, "--pool", "mean", "--fold", "7"])
        assert code == EXIT_USAGE


class TestSweep:
    def test_d_axis_has_five_rows_and_round_trips(self, fixture_dir, capsys,
                                                  tmp_path):
        out_file = tmp_path / "sweep.csv"
        code = main(["sweep", "--dataset", fixture_dir, "--name", "SEPARABLE",
                     *FAST_FLAGS, "--pool", "dkepool", "--axis", "d",
                     "--out", str(out_file)])
        out = capsys.readouterr()
        assert code == EXIT_OK
        lines = out.out.strip().splitlines()
        assert lines[0] == "axis,value,mean,std,seconds"
        assert len(lines) == 6
        values = []
        for line in lines[1:]:
            axis, value, mean, std, _ = line.split(",")
            assert axis == "d"
            values.append(int(value))
            assert 0.0 <= float(mean) <= 1.0 and float(std) >= 0.0
            # Numbers survive a parse/serialize round trip exactly.
            assert repr(float(mean)) == mean and repr(float(std)) == std
        assert values == [0, 200, 400, 600, 800]
        assert out_file.read_text() == out.out

    def test_snr_axis_has_three_rows(self, fixture_dir, capsys):
        code = main(["sweep", "--dataset", fixture_dir, "--name", "SEPARABLE",
                     *FAST_FLAGS, "--pool", "dkepool_r", "--axis", "snr"])
        out = capsys.readouterr()
        assert code == EXIT_OK
        lines = out.out.strip().splitlines()
        assert [line.split(",")[1] for line in lines[1:]] == ["10.0", "15.0", "20.0"]


class TestGradcheck:
    def test_default_run_lists_operators(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        for name in ("matmul", "dkepool", "dkepool_robust", "gcn_layer",
                     "gin_layer", "cross_entropy", "mean_pool"):
            assert name in out
        assert "FAIL" not in out

    def test_operator_filter(self, capsys):
        assert main(["gradcheck", "--op", "dkepool_robust"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "dkepool_robust" in out and "matmul" not in out

    def test_unknown_operator_rejected(self, capsys):
        assert main(["gradcheck", "--op", "warp_drive"]) == EXIT_USAGE

    def test_injected_backward_bug_fails(self, capsys, monkeypatch):
        real_matmul = dkepool.pooling.matmul

        def broken_matmul(a, b):
            def rule(g):
                accumulate_grad(a, 1.5 * (g @ b.data.T))  # deliberately wrong
                accumulate_grad(b, a.data.T @ g)

            return apply_op((a, b), a.data @ b.data, rule)

        monkeypatch.setattr(dkepool.pooling, "matmul", broken_matmul)
        try:
            code = main(["gradcheck", "--op", "dkepool"])
        finally:
            monkeypatch.setattr(dkepool.pooling, "matmul", real_matmul)
        assert code == EXIT_NUMERIC
        assert "FAIL" in capsys.readouterr().out


class TestBenchAndInspect:
    def test_bench_prints_timings(self, capsys):
        assert main(["bench"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "newton_schulz_sqrt" in out and "ms" in out

    def test_inspect_reports_stats(self, fixture_dir, capsys):
        assert main(["inspect", "--dataset", fixture_dir,
                     "--name", "SEPARABLE"]) == EXIT_OK
        stats = json.loads(capsys.readouterr().out)
        assert stats["graphs"] == 24 and stats["classes"] == 2
