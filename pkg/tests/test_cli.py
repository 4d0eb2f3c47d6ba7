import numpy as np
import pytest

from e2m.cli import main
from e2m.data_io import (
    load_trace_objectives,
    save_model,
    write_dense_grid,
)
from e2m.models import BackgroundComponent, CPComponent, MixtureModel
from e2m.tensors import DenseTensor

TOY_CSV = "a,x\na,x\nb,y\na,y\n"


def _write_config(path, body):
    path.write_text(body)
    return str(path)


def _fit_args(tmp_path, config_body, csv_body=TOY_CSV):
    data = tmp_path / "data.csv"
    data.write_text(csv_body)
    config = _write_config(tmp_path / "fit.cfg", config_body)
    model = tmp_path / "model.e2m"
    trace = tmp_path / "trace.tsv"
    return [
        "fit",
        "--data",
        str(data),
        "--config",
        config,
        "--out-model",
        str(model),
        "--out-trace",
        str(trace),
    ], model, trace


BACKGROUND_CFG = "alpha = 0.5\nseed = 0\n\n[component]\nkind = background\n"
CPB_CFG = (
    "alpha = 0.5\nseed = 1\nmax_iterations = 60\n\n"
    "[component]\nkind = cp\nrank = 2\n\n[component]\nkind = background\n"
)


class TestFitCommand:
    def test_background_only_toy(self, tmp_path, capsys):
        argv, model_path, trace_path = _fit_args(tmp_path, BACKGROUND_CFG)
        assert main(argv) == 0
        out = capsys.readouterr().out
        assert "eta=1.0" in out
        assert "converged=tolerance" in out
        objectives = load_trace_objectives(trace_path)
        assert len(objectives) == 2
        assert model_path.exists()

    def test_trace_objective_non_increasing(self, tmp_path):
        argv, _, trace_path = _fit_args(tmp_path, CPB_CFG)
        assert main(argv) == 0
        objectives = load_trace_objectives(trace_path)
        assert (np.diff(objectives) <= 1e-9).all()

    def test_identical_flags_identical_outputs(self, tmp_path):
        argv1, model1, trace1 = _fit_args(tmp_path, CPB_CFG)
        assert main(argv1) == 0
        sub = tmp_path / "again"
        sub.mkdir()
        argv2, model2, trace2 = _fit_args(sub, CPB_CFG)
        assert main(argv2) == 0
        assert model1.read_bytes() == model2.read_bytes()
        np.testing.assert_array_equal(
            load_trace_objectives(trace1), load_trace_objectives(trace2)
        )

    def test_missing_config_key_is_domain_error(self, tmp_path, capsys):
        argv, _, _ = _fit_args(tmp_path, "[component]\nkind = background\n")
        assert main(argv) == 2
        assert "alpha" in capsys.readouterr().err


class TestEvalCommand:
    def test_round_trip_nll(self, tmp_path, capsys):
        argv, model_path, _ = _fit_args(tmp_path, BACKGROUND_CFG)
        assert main(argv) == 0
        data = tmp_path / "data.csv"
        assert (
            main(["eval", "--model", str(model_path), "--data", str(data)]) == 0
        )
        out = capsys.readouterr().out
        assert "nll_total=" in out and "nll_per_sample=" in out

    def test_zero_mass_sample_exits_2(self, tmp_path, capsys):
        comp = CPComponent((2,), [np.array([[1.0], [0.0]])])
        model = MixtureModel((2,), [comp], np.array([1.0]))
        model_path = tmp_path / "point.e2m"
        save_model(model_path, model)
        data = tmp_path / "unseen.csv"
        data.write_text("0\n1\n")
        code = main(["eval", "--model", str(model_path), "--data", str(data)])
        assert code == 2
        assert "zero mass" in capsys.readouterr().err


class TestClassifyCommand:
    def test_labeled_predictions_and_accuracy(self, tmp_path, capsys):
        argv, model_path, _ = _fit_args(tmp_path, CPB_CFG)
        assert main(argv) == 0
        capsys.readouterr()
        data = tmp_path / "data.csv"
        code = main(["classify", "--model", str(model_path), "--data", str(data)])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 5  # four predictions plus the accuracy line
        assert out[-1].startswith("accuracy=")
        assert set(out[:-1]) <= {"x", "y"}

    def test_features_only(self, tmp_path, capsys):
        argv, model_path, _ = _fit_args(tmp_path, CPB_CFG)
        assert main(argv) == 0
        capsys.readouterr()
        feats = tmp_path / "feats.csv"
        feats.write_text("a\nb\n")
        code = main(["classify", "--model", str(model_path), "--data", str(feats)])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 2


class TestSynthCommand:
    def test_deterministic_output(self, tmp_path):
        out1 = tmp_path / "s1.csv"
        out2 = tmp_path / "s2.csv"
        base = [
            "synth",
            "--kind",
            "cp",
            "--shape",
            "8,8,8,8,8",
            "--rank",
            "8",
            "--bg",
            "0.10",
            "--seed",
            "1",
            "--n",
            "1000",
        ]
        assert main(base + ["--out", str(out1)]) == 0
        assert main(base + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert len(out1.read_text().splitlines()) == 1000

    def test_true_model_written(self, tmp_path):
        out = tmp_path / "s.csv"
        true = tmp_path / "true.e2m"
        assert (
            main(
                [
                    "synth",
                    "--kind",
                    "tt",
                    "--shape",
                    "4,4,4",
                    "--rank",
                    "2,2",
                    "--seed",
                    "3",
                    "--n",
                    "50",
                    "--out",
                    str(out),
                    "--out-true",
                    str(true),
                ]
            )
            == 0
        )
        assert true.read_text().startswith("e2m-model v1")


class TestGridCommand:
    def test_smoke(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        rows = [
            f"{rng.integers(0, 3)},{rng.integers(0, 2)}" for _ in range(120)
        ]
        for name, chunk in (
            ("train.csv", rows[:80]),
            ("valid.csv", rows[80:100]),
            ("test.csv", rows[100:]),
        ):
            (tmp_path / name).write_text("\n".join(chunk) + "\n")
        gridfile = tmp_path / "grid.cfg"
        gridfile.write_text(
            "alphas = 1.0\nrepeats = 2\nmax_iterations = 30\n\n"
            "[structure]\nkind = cp\nranks = 1,2\n\n"
            "[structure]\nkind = background\n"
        )
        report = tmp_path / "report.txt"
        code = main(
            [
                "grid",
                "--train",
                str(tmp_path / "train.csv"),
                "--valid",
                str(tmp_path / "valid.csv"),
                "--test",
                str(tmp_path / "test.csv"),
                "--grid",
                str(gridfile),
                "--metric",
                "nll",
                "--out-report",
                str(report),
            ]
        )
        assert code == 0
        assert "selected=" in capsys.readouterr().out
        assert report.exists()
        assert (tmp_path / "report.txt.tsv").exists()


class TestReconstructCommand:
    def test_dense_fit(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        grid = DenseTensor((6, 6, 3), rng.uniform(size=(6, 6, 3)))
        dense_path = tmp_path / "image.txt"
        write_dense_grid(dense_path, grid)
        config = _write_config(
            tmp_path / "rec.cfg",
            "alpha = 0.7\nseed = 0\nmax_iterations = 40\n\n"
            "[component]\nkind = cp\nrank = 3\n\n"
            "[component]\nkind = tt\nranks = 2,2\n\n"
            "[component]\nkind = background\n",
        )
        trace_path = tmp_path / "trace.tsv"
        code = main(
            [
                "reconstruct",
                "--dense",
                str(dense_path),
                "--config",
                config,
                "--out-trace",
                str(trace_path),
            ]
        )
        assert code == 0
        assert "objective=" in capsys.readouterr().out
        objectives = load_trace_objectives(trace_path)
        assert (np.diff(objectives) <= 1e-9).all()


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert main(["fit", "--data", "missing.csv"]) == 1
        capsys.readouterr()

    def test_unknown_subcommand(self, capsys):
        assert main(["transmogrify"]) == 1
        capsys.readouterr()

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        config = _write_config(tmp_path / "c.cfg", BACKGROUND_CFG)
        code = main(
            [
                "fit",
                "--data",
                str(tmp_path / "nope.csv"),
                "--config",
                config,
                "--out-model",
                str(tmp_path / "m"),
                "--out-trace",
                str(tmp_path / "t"),
            ]
        )
        assert code == 2
        capsys.readouterr()
