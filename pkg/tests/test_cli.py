import csv
import json

import numpy as np
import pytest

from socforecast.cli import main, read_config_file, resolve_settings
from socforecast.telemetry import csv_header, load_csv

TINY_FLAGS = ["--window-len", "8", "--hidden", "5", "--epochs", "2", "--patience", "2", "--latent", "3", "--ae-epochs", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--steps", "1500", "--seed", "5", "--initial-soc", "70", "--out", str(root / "data")]) == 0
    data = root / "data" / "telemetry.csv"
    assert main(["train", "--data", str(data), "--model", "plain_lstm", *TINY_FLAGS, "--out", str(root / "model")]) == 0
    return root


class TestGenerate:
    def test_header_and_length(self, workdir):
        path = workdir / "data" / "telemetry.csv"
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        assert header == csv_header()
        assert sum(h.startswith("cell_v_") for h in header) == 16
        assert len(load_csv(path)) == 1500

    def test_deterministic(self, capsys, tmp_path):
        for name in ("a", "b"):
            assert run(capsys, "generate", "--steps", 200, "--seed", 3, "--out", tmp_path / name)[0] == 0
        assert (tmp_path / "a" / "telemetry.csv").read_bytes() == (tmp_path / "b" / "telemetry.csv").read_bytes()

    def test_reports_final_soc(self, capsys, tmp_path):
        code, out, _ = run(capsys, "generate", "--steps", 50, "--profile", "idle", "--initial-soc", 42, "--out", tmp_path)
        assert code == 0
        assert "final SoC 42.00%" in out

    def test_config_echo(self, workdir):
        cfg = read_config_file(workdir / "data" / "config.txt")
        assert cfg["steps"] == "1500"
        assert cfg["profile"] == "mixed"


class TestExitCodes:
    def test_too_few_steps(self, capsys, tmp_path):
        code, _, err = run(capsys, "generate", "--steps", 1, "--out", tmp_path)
        assert code == 3
        assert "steps" in err

    def test_unknown_profile(self, capsys, tmp_path):
        assert run(capsys, "generate", "--profile", "weekend", "--out", tmp_path)[0] == 2

    def test_unknown_flag(self, capsys):
        assert run(capsys, "generate", "--colour", "red")[0] == 3

    def test_bad_value(self, capsys):
        assert run(capsys, "generate", "--steps", "many")[0] == 3

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("steps = 10\nlearning_rate = 0.1\n")
        code, _, err = run(capsys, "generate", "--config", cfg)
        assert code == 3
        assert "learning_rate" in err

    def test_missing_checkpoint(self, capsys, workdir, tmp_path):
        code, _, _ = run(capsys, "evaluate", "--checkpoint", tmp_path / "none.json",
                         "--data", workdir / "data" / "telemetry.csv", "--out", tmp_path)
        assert code == 2

    def test_missing_data(self, capsys, tmp_path):
        assert run(capsys, "train", "--data", tmp_path / "none.csv", "--out", tmp_path)[0] == 2

    def test_invalid_data(self, capsys, workdir, tmp_path):
        lines = (workdir / "data" / "telemetry.csv").read_text().splitlines()
        fields = lines[7].split(",")
        fields[5] = "101"
        lines[7] = ",".join(fields)
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(lines) + "\n")
        code, _, err = run(capsys, "train", "--data", bad, "--out", tmp_path)
        assert code == 1
        assert "row 7" in err

    def test_svr_scalability(self, capsys, tmp_path):
        assert run(capsys, "generate", "--steps", 7000, "--out", tmp_path)[0] == 0
        code, _, err = run(capsys, "train", "--data", tmp_path / "telemetry.csv", "--model", "svr",
                           "--window-len", 8, "--out", tmp_path / "svr")
        assert code == 1
        assert "5000" in err


class TestSettings:
    def test_precedence(self, tmp_path):
        resolved = resolve_settings("generate", {"steps": "10", "seed": "4"}, {"steps": "20"})
        assert resolved["steps"] == 20
        assert resolved["seed"] == 4
        assert resolved["profile"] == "mixed"

    def test_duplicate_key(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("steps = 1\nsteps = 2\n")
        with pytest.raises(ValueError, match="duplicate"):
            read_config_file(cfg)


class TestTrainEvaluate:
    def test_outputs(self, workdir):
        model_dir = workdir / "model"
        for name in ("checkpoint.json", "training_log.csv", "metrics.json", "config.txt"):
            assert (model_dir / name).exists()
        log = read_csv(model_dir / "training_log.csv")
        assert len(log) == 2

    def test_evaluate_reproduces_train_metrics(self, capsys, workdir, tmp_path):
        code, _, _ = run(capsys, "evaluate", "--checkpoint", workdir / "model" / "checkpoint.json",
                         "--data", workdir / "data" / "telemetry.csv", "--out", tmp_path)
        assert code == 0
        trained = json.loads((workdir / "model" / "metrics.json").read_text())
        evaluated = json.loads((tmp_path / "metrics.json").read_text())
        assert trained.keys() == evaluated.keys()
        for k in trained:
            assert evaluated[k] == pytest.approx(trained[k], abs=1e-9)
        rows = read_csv(tmp_path / "predictions_ah_charged.csv")
        assert len(rows) == 300 - 8

    def test_rerun_from_config_echo(self, capsys, workdir, tmp_path):
        code, _, _ = run(capsys, "train", "--config", workdir / "model" / "config.txt", "--out", tmp_path)
        assert code == 0
        assert (tmp_path / "checkpoint.json").read_bytes() == (workdir / "model" / "checkpoint.json").read_bytes()


class TestForecast:
    def test_horizon_one_matches_evaluate(self, capsys, workdir, tmp_path):
        ckpt = workdir / "model" / "checkpoint.json"
        data = workdir / "data" / "telemetry.csv"
        assert run(capsys, "evaluate", "--checkpoint", ckpt, "--data", data, "--out", tmp_path / "ev")[0] == 0
        n_val_windows = 300 - 8
        code, _, _ = run(capsys, "forecast", "--checkpoint", ckpt, "--data", data, "--horizon", 1,
                         "--n-origins", n_val_windows, "--origin-stride", 1, "--out", tmp_path / "fc")
        assert code == 0
        fc = read_csv(tmp_path / "fc" / "forecast.csv")
        ev = read_csv(tmp_path / "ev" / "predictions_ah_charged.csv")
        assert len(fc) == len(ev)
        np.testing.assert_allclose([float(r["pred_dah_charged"]) for r in fc], [float(r["predicted"]) for r in ev], rtol=0, atol=1e-12)
        np.testing.assert_array_equal([float(r["actual_dah_charged"]) for r in fc], [float(r["actual"]) for r in ev])

    def test_soc_trace_and_metrics(self, capsys, workdir, tmp_path):
        code, out, _ = run(capsys, "forecast", "--checkpoint", workdir / "model" / "checkpoint.json",
                           "--data", workdir / "data" / "telemetry.csv", "--horizon", 40, "--n-origins", 3,
                           "--out", tmp_path)
        assert code == 0
        trace = read_csv(tmp_path / "soc_trace.csv")
        assert len(trace) == 120
        soc = np.array([int(r["soc"]) for r in trace])
        assert soc.min() >= 0 and soc.max() <= 100
        fc = read_csv(tmp_path / "forecast.csv")
        pred = np.array([[float(r["pred_dah_charged"]), float(r["pred_dah_discharged"])] for r in fc])
        act = np.array([[float(r["actual_dah_charged"]), float(r["actual_dah_discharged"])] for r in fc])
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["RMSE"] == pytest.approx(float(np.sqrt(np.mean((pred - act) ** 2))), abs=1e-12)
        grid = read_csv(tmp_path / "error_grid.csv")
        assert len(grid) == 6 and "h40" in grid[0]

    def test_bad_horizon(self, capsys, workdir, tmp_path):
        code, _, _ = run(capsys, "forecast", "--checkpoint", workdir / "model" / "checkpoint.json",
                         "--data", workdir / "data" / "telemetry.csv", "--horizon", 0, "--out", tmp_path)
        assert code == 3


class TestGradcheckCommand:
    def test_passes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "gradcheck", "--out", tmp_path)
        assert code == 0
        assert "max relative error" in out
        assert len(read_csv(tmp_path / "gradcheck.csv")) == 16
