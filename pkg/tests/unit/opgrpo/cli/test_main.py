import json

import pytest

from opgrpo.cli import (
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_OK,
    LONG_COLUMNS,
    PROFILE_COLUMNS,
    TABLE_COLUMNS,
    RunManifest,
    main,
)
from opgrpo.training import NonFiniteGradientError, metric_columns, read_metrics
from tests.unit.opgrpo._builders import SMALL_SCHEDULE, small_config, write_config_toml


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    directory = tmp_path_factory.mktemp("config")
    return write_config_toml(directory / "small.toml", small_config())


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, config_file):
    root = tmp_path_factory.mktemp("runs")
    code = main(
        [
            "--output-root",
            str(root),
            "--log-level",
            "WARNING",
            "train",
            "--config",
            str(config_file),
            "--iterations",
            "2",
        ]
    )
    (directory,) = root.iterdir()
    return code, directory


class TestTrain:
    def test_exit_code(self, trained_run):
        code, _ = trained_run
        assert code == EXIT_OK

    def test_run_directory_is_named_after_mode_and_seed(self, trained_run):
        _, directory = trained_run
        assert directory.name.startswith("sequence_corrected-seed0-")

    def test_metrics(self, trained_run):
        _, directory = trained_run
        header, rows = read_metrics(directory / "metrics.csv")
        assert tuple(header) == metric_columns(SMALL_SCHEDULE.num_steps)
        assert len(rows) == 2

    def test_manifest(self, trained_run):
        _, directory = trained_run
        manifest = RunManifest.read(directory)
        assert manifest.status == "completed"
        assert manifest.run_id == directory.name
        assert manifest.finished_at is not None
        assert set(manifest.outputs) == {
            "metrics",
            "summary",
            "final_checkpoint",
            "config",
        }

    def test_resolved_config_is_stored(self, trained_run):
        _, directory = trained_run
        with (directory / "config.json").open(encoding="utf-8") as handle:
            stored = json.load(handle)
        assert stored["total_iterations"] == 2
        assert stored["schedule"]["num_steps"] == SMALL_SCHEDULE.num_steps

    def test_prints_the_run_directory(self, tmp_path, config_file, capsys):
        main(
            [
                "--output-root",
                str(tmp_path),
                "train",
                "--config",
                str(config_file),
                "--iterations",
                "1",
            ]
        )
        (directory,) = tmp_path.iterdir()
        assert capsys.readouterr().out.strip() == str(directory)

    def test_flags_and_overrides_reach_the_config(self, tmp_path, config_file):
        code = main(
            [
                "--output-root",
                str(tmp_path),
                "train",
                "--config",
                str(config_file),
                "--iterations",
                "1",
                "--mode",
                "uncorrected",
                "--seed",
                "3",
                "--set",
                "decay_rate=0.5",
            ]
        )
        assert code == EXIT_OK
        (directory,) = tmp_path.iterdir()
        assert directory.name.startswith("uncorrected-seed3-")
        with (directory / "config.json").open(encoding="utf-8") as handle:
            assert json.load(handle)["decay_rate"] == 0.5

    def test_resume_continues_in_the_checkpoint_directory(self, tmp_path, config_file):
        arguments = [
            "--output-root",
            str(tmp_path),
            "train",
            "--config",
            str(config_file),
        ]
        assert main(arguments + ["--iterations", "2"]) == EXIT_OK
        (directory,) = tmp_path.iterdir()
        checkpoint = directory / "checkpoints" / "final.npz"

        code = main(arguments + ["--iterations", "3", "--resume", str(checkpoint)])
        assert code == EXIT_OK
        assert list(tmp_path.iterdir()) == [directory]
        _, rows = read_metrics(directory / "metrics.csv")
        assert [row[0] for row in rows] == ["1", "2", "3"]
        assert RunManifest.read(directory).status == "completed"


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        code = main(
            [
                "--output-root",
                str(tmp_path),
                "train",
                "--config",
                str(tmp_path / "absent.toml"),
            ]
        )
        assert code == EXIT_CONFIG
        assert "config file not found" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "override", ["group_size=1", "schedule.steps=4", "no_separator"]
    )
    def test_invalid_override(self, tmp_path, config_file, override):
        code = main(
            [
                "--output-root",
                str(tmp_path),
                "train",
                "--config",
                str(config_file),
                "--set",
                override,
            ]
        )
        assert code == EXIT_CONFIG

    def test_divergence(self, tmp_path, config_file, monkeypatch, capsys):
        def fail(*args, **kwargs):
            raise NonFiniteGradientError("output/weight")

        monkeypatch.setattr("opgrpo.training._trainer.adam_step", fail)
        code = main(
            [
                "--output-root",
                str(tmp_path),
                "train",
                "--config",
                str(config_file),
                "--iterations",
                "1",
            ]
        )
        assert code == EXIT_DIVERGED
        assert "Training diverged at iteration 1" in capsys.readouterr().err
        (directory,) = tmp_path.iterdir()
        assert RunManifest.read(directory).status == "diverged"
        assert (directory / "divergence.json").is_file()

    def test_plot_data_without_inputs(self, tmp_path):
        assert main(["plot-data", "--output", str(tmp_path / "out.csv")]) == EXIT_CONFIG


class TestInspectionCommands:
    @pytest.fixture(scope="class")
    def checkpoint(self, trained_run):
        _, directory = trained_run
        return directory / "checkpoints" / "final.npz"

    def test_inspect_buffer(self, checkpoint, capsys):
        assert main(["inspect-buffer", str(checkpoint)]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["iteration"] == 2
        assert payload["capacity"] == 4
        assert 0 < len(payload["entries"]) <= 4
        entry = payload["entries"][0]
        assert len(entry["step_logprobs"]) == SMALL_SCHEDULE.num_steps
        assert entry["retention_score"] < entry["reward"]

    def test_inspect_buffer_to_file(self, checkpoint, tmp_path):
        output = tmp_path / "buffer.json"
        assert main(["inspect-buffer", str(checkpoint), "--output", str(output)]) == 0
        assert json.loads(output.read_text(encoding="utf-8"))["decay_rate"] == 0.98

    def test_logprob_profile(self, checkpoint, tmp_path):
        output = tmp_path / "profile.csv"
        code = main(
            [
                "logprob-profile",
                str(checkpoint),
                "--num-trajectories",
                "16",
                "--output",
                str(output),
            ]
        )
        assert code == EXIT_OK
        lines = output.read_text(encoding="utf-8").splitlines()
        assert tuple(lines[0].split(",")) == PROFILE_COLUMNS
        assert [line.split(",")[0] for line in lines[1:]] == ["4", "3", "2", "1"]

    def test_plot_data(self, trained_run, tmp_path):
        _, directory = trained_run
        output = tmp_path / "long.csv"
        metrics = directory / "metrics.csv"
        code = main(
            [
                "plot-data",
                str(metrics),
                str(metrics),
                "--metric",
                "mean_reward",
                "--metric",
                "loss",
                "--output",
                str(output),
            ]
        )
        assert code == EXIT_OK
        lines = output.read_text(encoding="utf-8").splitlines()
        assert tuple(lines[0].split(",")) == LONG_COLUMNS
        # Two copies of a two-iteration run, two metrics each.
        assert len(lines) == 1 + 2 * 2 * 2
        assert {line.split(",")[0] for line in lines[1:]} == {
            f"{directory.name}-0",
            f"{directory.name}-1",
        }


class TestAblation:
    def test_writes_and_prints_the_comparison_table(self, tmp_path, config_file, capsys):
        code = main(
            [
                "--output-root",
                str(tmp_path),
                "--log-level",
                "WARNING",
                "ablation",
                "wo_corr",
                "--config",
                str(config_file),
                "--seeds",
                "0",
                "1",
                "--iterations",
                "2",
            ]
        )
        assert code == EXIT_OK
        table = tmp_path / "ablation" / "wo_corr" / "comparison.csv"
        lines = table.read_text(encoding="utf-8").splitlines()
        assert tuple(lines[0].split(",")) == TABLE_COLUMNS
        assert [line.split(",")[:2] for line in lines[1:]] == [
            ["sequence_corrected", "0"],
            ["sequence_corrected", "1"],
            ["uncorrected", "0"],
            ["uncorrected", "1"],
        ]
        assert capsys.readouterr().out.splitlines() == lines
        assert (tmp_path / "ablation" / "wo_corr" / "uncorrected-seed1").is_dir()
