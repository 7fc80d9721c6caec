"""End-to-end CLI tests on the smoke profile."""

import tempfile
from pathlib import Path

import pandas as pd
import pytest
from typer.testing import CliRunner

from sympde.cli import EXIT_CONFIG, EXIT_NUMERIC, app
from sympde.reporting import AGGREGATE_COLUMNS, ROW_COLUMNS, read_manifest

pytestmark = pytest.mark.integration

runner = CliRunner()


def solve(out: Path, *extra: str):
    return runner.invoke(app, ["solve", "--profile", "smoke", "--out", str(out), *extra])


class TestSolveCommand:
    """solve on the smoke profile."""

    def test_writes_result_files(self):
        """A successful run leaves rows, aggregate, config and an OK manifest."""
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "smoke"
            result = solve(out)
            assert result.exit_code == 0, result.output
            rows = pd.read_csv(out / "rows.csv")
            assert list(rows.columns) == ROW_COLUMNS
            assert list(rows["problem"]) == ["toy"]
            assert list(pd.read_csv(out / "aggregate.csv").columns) == AGGREGATE_COLUMNS
            manifest = read_manifest(out)
            assert manifest["status"] == "OK"
            assert len(manifest["config_sha256"]) == 64
            assert "problem.name=\"toy\"" in (out / "config.txt").read_text().splitlines()

    def test_several_runs(self):
        """--runs 3 gives three rows and one aggregate over three runs."""
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "runs"
            result = solve(out, "--runs", "3")
            assert result.exit_code == 0, result.output
            assert list(pd.read_csv(out / "rows.csv")["run"]) == [0, 1, 2]
            assert list(pd.read_csv(out / "aggregate.csv")["runs"]) == [3]

    def test_same_seed_same_rows(self):
        """Two runs with one seed agree on everything but wall time."""
        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "a", Path(tmp) / "b"
            assert solve(a, "--seed", "5").exit_code == 0
            assert solve(b, "--seed", "5").exit_code == 0
            rows_a = pd.read_csv(a / "rows.csv").drop(columns="wall_s")
            rows_b = pd.read_csv(b / "rows.csv").drop(columns="wall_s")
        pd.testing.assert_frame_equal(rows_a, rows_b)

    def test_unknown_problem(self):
        """A bad problem name exits 2 without rows and marks the manifest FAILED."""
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "bad"
            result = solve(out, "--set", "problem.name=heat")
            assert result.exit_code == EXIT_CONFIG
            assert not (out / "rows.csv").exists()
            assert read_manifest(out)["status"] == "FAILED"

    def test_invalid_override(self):
        """Schema violations exit 2 before anything runs."""
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "invalid"
            result = solve(out, "--set", "train.batch_size=0")
            assert result.exit_code == EXIT_CONFIG
            assert read_manifest(out)["status"] == "FAILED"

    def test_unexpected_error_exits_numeric(self, monkeypatch):
        """An error outside the package hierarchy still exits 3 with a message, not a traceback."""

        def crash(config, out_dir, console):
            raise RuntimeError("worker pool died")

        monkeypatch.setattr("sympde.cli.run_experiment", crash)
        with tempfile.TemporaryDirectory() as tmp:
            result = solve(Path(tmp) / "crash")
        assert result.exit_code == EXIT_NUMERIC
        assert "RuntimeError: worker pool died" in result.output


class TestOtherCommands:
    """report, profiles and config-schema."""

    def test_report_reaggregates(self):
        """report rebuilds aggregate.csv and keeps the original manifest entries."""
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "smoke"
            assert solve(out, "--runs", "2").exit_code == 0
            (out / "aggregate.csv").unlink()
            before = read_manifest(out)
            result = runner.invoke(app, ["report", "--out", str(out)])
            assert result.exit_code == 0, result.output
            assert list(pd.read_csv(out / "aggregate.csv")["runs"]) == [2]
            manifest = read_manifest(out)
            assert manifest["reaggregated_rows"] == "2"
            assert manifest["config_sha256"] == before["config_sha256"]

    def test_report_without_rows(self):
        """Nothing to report is a configuration error."""
        with tempfile.TemporaryDirectory() as tmp:
            result = runner.invoke(app, ["report", "--out", tmp])
        assert result.exit_code == EXIT_CONFIG

    def test_profiles(self):
        """The profile table lists the bundled presets."""
        result = runner.invoke(app, ["profiles"])
        assert result.exit_code == 0
        assert "smoke" in result.output
        assert "systemic" in result.output

    def test_config_schema(self):
        """The JSON schema export names the config sections."""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "schema.json"
            result = runner.invoke(app, ["config-schema", "--output", str(path)])
            assert result.exit_code == 0
            assert "SolveConfig" in path.read_text()
