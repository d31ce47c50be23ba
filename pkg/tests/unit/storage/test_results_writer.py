"""
tests/unit/storage/test_results_writer.py

Unit tests for the run artifact writer.

Tests cover:
- Number formatting of CSV cells
- Header-only results for empty runs
- Row order across reports
- Atomic replacement on rerun
- Retry on transient OSError and OutputError after the last attempt
"""

import csv
import json
from unittest.mock import patch

import pytest

from src.core.errors import OutputError
from src.schemas.report_models import RESULT_COLUMNS, ExperimentReport, ResultRow, RunSummary
from src.storage.results_writer import (
    CONFIG_FILE,
    RESULTS_FILE,
    SUMMARY_FILE,
    ResultsWriter,
    format_number,
    render_results_csv,
    write_outputs,
)


def _report(scenario, *estimates):
    report = ExperimentReport(scenario=scenario, experiment="exp", background="torus")
    for i, value in enumerate(estimates):
        report.rows.append(ResultRow(scenario=scenario, background="torus", N=100 * (i + 1),
                                     observable=f"obs{i}", estimate=value, passed=True).with_oracle(0.0))
    return report


class TestFormatting:
    """Test CSV cell formatting."""

    @pytest.mark.unit
    def test_round_trip_precision(self):
        assert float(format_number(0.1 + 0.2)) == 0.1 + 0.2
        assert format_number(0.1) == "0.10000000000000001"

    @pytest.mark.unit
    @pytest.mark.parametrize("value,text", [(None, ""), (True, "true"), (False, "false"), (7, "7")])
    def test_special_values(self, value, text):
        assert format_number(value) == text


class TestRender:
    """Test results.csv rendering."""

    @pytest.mark.unit
    def test_header_only(self):
        assert render_results_csv([]) == ",".join(RESULT_COLUMNS) + "\n"

    @pytest.mark.unit
    def test_rows_in_report_order(self):
        text = render_results_csv([_report("b", 1.0, 2.0), _report("a", 3.0)])
        rows = list(csv.DictReader(text.splitlines()))
        assert [r["scenario"] for r in rows] == ["b", "b", "a"]
        assert rows[1]["N"] == "200"
        assert rows[1]["pass"] == "true"
        assert rows[1]["abs_err"] == "2"
        assert rows[0]["stderr"] == ""


class TestWriter:
    """Test atomic writes and error handling."""

    @pytest.mark.unit
    def test_write_outputs(self, temp_output_dir):
        summary = RunSummary(passed=True, seed=3)
        paths = write_outputs([_report("a", 1.0)], str(temp_output_dir), summary, "[run]\nseed = 3\n")
        assert [p.name for p in paths] == [RESULTS_FILE, SUMMARY_FILE, CONFIG_FILE]
        assert json.loads((temp_output_dir / SUMMARY_FILE).read_text())["seed"] == 3
        assert (temp_output_dir / CONFIG_FILE).read_text() == "[run]\nseed = 3\n"

    @pytest.mark.unit
    def test_rerun_replaces_files(self, temp_output_dir):
        write_outputs([_report("a", 1.0, 2.0)], str(temp_output_dir))
        write_outputs([], str(temp_output_dir))
        assert (temp_output_dir / RESULTS_FILE).read_text() == ",".join(RESULT_COLUMNS) + "\n"
        leftovers = [p.name for p in temp_output_dir.iterdir() if p.name.startswith(".")]
        assert leftovers == []

    @pytest.mark.unit
    def test_creates_missing_directory(self, tmp_path):
        target = tmp_path / "nested" / "out"
        write_outputs([], str(target))
        assert (target / RESULTS_FILE).exists()

    @pytest.mark.unit
    def test_transient_error_retried(self, temp_output_dir):
        writer = ResultsWriter(str(temp_output_dir), max_attempts=3)
        real = ResultsWriter._write_once
        calls = []

        def flaky(self, target, text):
            calls.append(target)
            if len(calls) == 1:
                raise OSError("disk busy")
            return real(self, target, text)

        with patch.object(ResultsWriter, "_write_once", flaky):
            writer.write_text("x.txt", "ok")
        assert len(calls) == 2
        assert (temp_output_dir / "x.txt").read_text() == "ok"

    @pytest.mark.unit
    def test_persistent_error_becomes_output_error(self, temp_output_dir):
        writer = ResultsWriter(str(temp_output_dir), max_attempts=2)
        with patch.object(ResultsWriter, "_write_once", side_effect=OSError("read-only")):
            with pytest.raises(OutputError) as excinfo:
                writer.write_text(RESULTS_FILE, "x")
        assert excinfo.value.path == str(temp_output_dir / RESULTS_FILE)
        assert "read-only" in str(excinfo.value)
