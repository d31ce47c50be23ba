"""
src/schemas/report_models.py

Result models shared by the experiments, the writers and the CLI.

Provides:
- ResultRow: one line of results.csv
- TrendFit: log-log regression of a defect against N
- Check: a named pass/fail decision with its threshold
- ExperimentReport: everything one experiment produced
- ScenarioSummary / RunSummary: the content of summary.json
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

RESULT_COLUMNS = (
    "scenario", "background", "N", "s", "n_paths", "step", "observable",
    "estimate", "stderr", "oracle", "abs_err", "pass",
)


class ResultRow(BaseModel):
    """A single estimate; pass is None for purely informational rows."""
    model_config = ConfigDict(populate_by_name=True)

    scenario: str
    background: str
    N: Optional[int] = None
    s: Optional[float] = None
    n_paths: Optional[int] = None
    step: Optional[float] = None
    observable: str
    estimate: float
    stderr: Optional[float] = None
    oracle: Optional[float] = None
    abs_err: Optional[float] = None
    passed: Optional[bool] = Field(None, alias="pass")

    def with_oracle(self, oracle: Optional[float]) -> "ResultRow":
        if oracle is None:
            return self
        return self.model_copy(update={"oracle": oracle, "abs_err": abs(self.estimate - oracle)})


class TrendFit(BaseModel):
    """slope of log(value) against log(N), with the accepted slope range."""
    quantity: str
    N: List[int]
    slope: float
    intercept: float
    slope_stderr: float
    lo: Optional[float] = None
    hi: Optional[float] = None
    resolved: bool = True

    @property
    def passed(self) -> Optional[bool]:
        if self.lo is None or self.hi is None:
            return None
        return self.lo <= self.slope <= self.hi


class Check(BaseModel):
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    note: str = ""


class ExperimentReport(BaseModel):
    """Estimates, trends and the acceptance decisions of one experiment."""
    scenario: str
    experiment: str
    background: str
    N_grid: List[int] = Field(default_factory=list)
    rows: List[ResultRow] = Field(default_factory=list)
    trends: List[TrendFit] = Field(default_factory=list)
    checks: List[Check] = Field(default_factory=list)
    thresholds: Dict[str, float] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def passed(self) -> bool:
        return (all(c.passed for c in self.checks)
                and all(t.passed is not False for t in self.trends))

    def check(self, name: str, passed: bool, value: Optional[float] = None,
              threshold: Optional[float] = None, note: str = "") -> Check:
        entry = Check(name=name, passed=bool(passed), value=value, threshold=threshold, note=note)
        self.checks.append(entry)
        return entry

    def summary(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "background": self.background,
            "passed": self.passed,
            "N_grid": self.N_grid,
            "thresholds": self.thresholds,
            "trends": [dict(t.model_dump(), passed=t.passed) for t in self.trends],
            "checks": [c.model_dump() for c in self.checks],
            "notes": self.notes,
            "runtime_s": self.runtime_s,
        }


class ErrorInfo(BaseModel):
    type: str
    message: str


class ScenarioSummary(BaseModel):
    scenario: str
    passed: bool
    runtime_s: float
    experiments: List[Dict[str, Any]] = Field(default_factory=list)
    error: Optional[ErrorInfo] = None


class RunSummary(BaseModel):
    passed: bool
    seed: int
    versions: Dict[str, str] = Field(default_factory=dict)
    scenarios: List[ScenarioSummary] = Field(default_factory=list)
