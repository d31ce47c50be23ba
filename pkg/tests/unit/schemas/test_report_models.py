"""
tests/unit/schemas/test_report_models.py

Unit tests for result and summary models.

Tests cover:
- ResultRow aliasing and oracle attachment
- TrendFit pass decision
- ExperimentReport aggregation of checks and trends
"""

import pytest

from src.schemas.report_models import (
    RESULT_COLUMNS,
    ExperimentReport,
    ResultRow,
    RunSummary,
    TrendFit,
)


def _report():
    return ExperimentReport(scenario="operator-check", experiment="scalar_defect", background="sphere")


class TestResultRow:
    """Test ResultRow model."""

    @pytest.mark.unit
    def test_pass_alias(self):
        row = ResultRow(scenario="s", background="torus", observable="x", estimate=1.0, **{"pass": True})
        assert row.passed is True
        assert row.model_dump(by_alias=True)["pass"] is True

    @pytest.mark.unit
    def test_columns_match_dump(self):
        row = ResultRow(scenario="s", background="torus", observable="x", estimate=1.0)
        assert set(RESULT_COLUMNS) == set(row.model_dump(by_alias=True))

    @pytest.mark.unit
    def test_with_oracle_sets_abs_err(self):
        row = ResultRow(scenario="s", background="sphere", observable="x", estimate=1.25)
        updated = row.with_oracle(1.0)
        assert updated.oracle == 1.0
        assert updated.abs_err == pytest.approx(0.25)
        assert row.oracle is None

    @pytest.mark.unit
    def test_with_no_oracle_is_identity(self):
        row = ResultRow(scenario="s", background="sphere", observable="x", estimate=1.25)
        assert row.with_oracle(None) is row


class TestTrendFit:
    """Test TrendFit decisions."""

    @pytest.mark.unit
    def test_no_range_is_informational(self):
        trend = TrendFit(quantity="q", N=[1, 2, 4], slope=-1.0, intercept=0.0, slope_stderr=0.0)
        assert trend.passed is None

    @pytest.mark.unit
    @pytest.mark.parametrize("slope,expected", [(-1.0, True), (-0.5, False), (-1.3, True), (-1.31, False)])
    def test_range(self, slope, expected):
        trend = TrendFit(quantity="q", N=[1, 2, 4], slope=slope, intercept=0.0,
                         slope_stderr=0.0, lo=-1.3, hi=-0.7)
        assert trend.passed is expected


class TestExperimentReport:
    """Test ExperimentReport aggregation."""

    @pytest.mark.unit
    def test_empty_report_passes(self):
        assert _report().passed

    @pytest.mark.unit
    def test_failed_check_fails_report(self):
        report = _report()
        report.check("a", True)
        report.check("b", False, value=2.0, threshold=1.0)
        assert not report.passed
        assert [c.name for c in report.checks] == ["a", "b"]

    @pytest.mark.unit
    def test_informational_trend_does_not_fail(self):
        report = _report()
        report.trends.append(TrendFit(quantity="q", N=[1, 2, 4], slope=3.0, intercept=0.0, slope_stderr=0.1))
        assert report.passed

    @pytest.mark.unit
    def test_out_of_range_trend_fails(self):
        report = _report()
        report.trends.append(TrendFit(quantity="q", N=[1, 2, 4], slope=0.0, intercept=0.0,
                                      slope_stderr=0.1, lo=-1.3, hi=-0.7))
        assert not report.passed

    @pytest.mark.unit
    def test_summary_contents(self):
        report = _report()
        report.check("a", True, value=0.1, threshold=0.2)
        report.notes.append("hello")
        summary = report.summary()
        assert summary["passed"] is True
        assert summary["checks"][0]["name"] == "a"
        assert summary["notes"] == ["hello"]

    @pytest.mark.unit
    def test_run_summary_json(self):
        summary = RunSummary(passed=True, seed=3, versions={"numpy": "x"})
        data = summary.model_dump(mode="json")
        assert data["seed"] == 3
        assert data["scenarios"] == []
