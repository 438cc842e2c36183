import pytest

from opgrpo.cli import (
    LONG_COLUMNS,
    SchemaMismatchError,
    long_format,
    run_label,
    write_long_format,
)


def _metrics_file(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def logs(tmp_path):
    header = ("iteration", "mean_reward", "loss")
    first = _metrics_file(
        tmp_path / "run-a" / "metrics.csv",
        header,
        [("1", "0.1", "-0.5"), ("2", "0.2", "-0.4")],
    )
    second = _metrics_file(
        tmp_path / "run-b" / "metrics.csv", header, [("1", "0.3", "-0.1")]
    )
    return first, second


class TestLongFormat:
    def test_every_metric_by_default(self, logs):
        first, second = logs
        rows = long_format([("a", first), ("b", second)])
        assert rows == [
            ("a", "1", "mean_reward", "0.1"),
            ("a", "1", "loss", "-0.5"),
            ("a", "2", "mean_reward", "0.2"),
            ("a", "2", "loss", "-0.4"),
            ("b", "1", "mean_reward", "0.3"),
            ("b", "1", "loss", "-0.1"),
        ]

    def test_selected_metrics(self, logs):
        first, _ = logs
        rows = long_format([("a", first)], metrics=["loss"])
        assert [row[2:] for row in rows] == [("loss", "-0.5"), ("loss", "-0.4")]

    def test_unknown_metric(self, logs):
        first, _ = logs
        with pytest.raises(ValueError, match="Unknown metrics requested"):
            long_format([("a", first)], metrics=["accuracy"])

    def test_no_inputs(self):
        with pytest.raises(ValueError, match="at least one metrics file"):
            long_format([])

    def test_schema_mismatch(self, logs, tmp_path):
        first, _ = logs
        other = _metrics_file(
            tmp_path / "run-c" / "metrics.csv", ("iteration", "loss"), [("1", "0.0")]
        )
        with pytest.raises(SchemaMismatchError, match="does not share the column"):
            long_format([("a", first), ("c", other)])


class TestRunLabel:
    def test_parent_directory_name(self, logs):
        first, _ = logs
        assert run_label(first) == "run-a"


class TestWriteLongFormat:
    def test_header_and_rows(self, logs, tmp_path):
        first, _ = logs
        path = write_long_format(
            tmp_path / "out" / "long.csv", long_format([("a", first)])
        )
        lines = path.read_text(encoding="utf-8").splitlines()
        assert tuple(lines[0].split(",")) == LONG_COLUMNS
        assert lines[1] == "a,1,mean_reward,0.1"
        assert len(lines) == 5
