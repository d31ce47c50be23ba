# src/storage/results_writer.py
"""
src/storage/results_writer.py

Writes the artifacts of a run into its output directory:

- results.csv      one row per estimate, grouped by scenario in run order
- summary.json     per-scenario pass/fail, trends, checks, runtimes, errors
- resolved.config  the run config with every default filled in

Every file is written to a temporary sibling and moved into place with
os.replace, so a rerun into the same directory replaces each file
atomically. Transient OS errors are retried with exponential backoff.
"""

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional

from tenacity import (
    RetryError,
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.core.errors import OutputError
from src.schemas.report_models import RESULT_COLUMNS, ExperimentReport, ResultRow, RunSummary
from src.utils.config_manager import ConfigManager

logger = logging.getLogger("ricci_lab")

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "resolved.config"

RETRY_MIN_WAIT = 0.1  # seconds
RETRY_MAX_WAIT = 2.0  # seconds


def format_number(value) -> str:
    """17 significant digits so every double round-trips; blanks for missing values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def _csv_row(row: ResultRow) -> List[str]:
    data = row.model_dump(by_alias=True)
    out = []
    for column in RESULT_COLUMNS:
        value = data[column]
        out.append(value if isinstance(value, str) else format_number(value))
    return out


def render_results_csv(reports: Iterable[ExperimentReport]) -> str:
    """Header plus the rows of every report in the order given."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for report in reports:
        for row in report.rows:
            writer.writerow(_csv_row(row))
    return buffer.getvalue()


class ResultsWriter:
    """Atomic writer bound to one output directory."""

    def __init__(self, out_dir: str, max_attempts: Optional[int] = None):
        self.out_dir = Path(out_dir)
        if max_attempts is None:
            max_attempts = ConfigManager.get_settings().output.max_write_attempts
        self.max_attempts = max_attempts

    def _write_once(self, target: Path, text: str) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=str(self.out_dir))
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def write_text(self, name: str, text: str) -> Path:
        """Write one artifact atomically, retrying OSError; failures become OutputError."""
        target = self.out_dir / name
        retrying = Retrying(
            stop=stop_after_attempt(self.max_attempts),
            wait=wait_exponential(multiplier=RETRY_MIN_WAIT, min=RETRY_MIN_WAIT, max=RETRY_MAX_WAIT),
            retry=retry_if_exception_type(OSError),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=False,
        )
        try:
            retrying(self._write_once, target, text)
        except RetryError as e:
            cause = e.last_attempt.exception()
            logger.error("Result file write failed", extra={"path": str(target), "attempts": self.max_attempts})
            raise OutputError(str(cause), path=str(target)) from cause
        logger.debug("Result file written", extra={"path": str(target), "bytes": len(text)})
        return target

    def write_results(self, reports: Iterable[ExperimentReport]) -> Path:
        return self.write_text(RESULTS_FILE, render_results_csv(reports))

    def write_summary(self, summary: RunSummary) -> Path:
        return self.write_text(SUMMARY_FILE, json.dumps(summary.model_dump(mode="json"), indent=2) + "\n")

    def write_config(self, text: str) -> Path:
        return self.write_text(CONFIG_FILE, text)


def write_outputs(reports: List[ExperimentReport], out_dir: str, summary: Optional[RunSummary] = None,
                  config_text: Optional[str] = None) -> List[Path]:
    """Write results.csv (header only for no reports) and, when given, summary.json and resolved.config."""
    writer = ResultsWriter(out_dir)
    paths = [writer.write_results(reports)]
    if summary is not None:
        paths.append(writer.write_summary(summary))
    if config_text is not None:
        paths.append(writer.write_config(config_text))
    logger.info("Run artifacts written", extra={"out_dir": str(out_dir), "files": [p.name for p in paths],
                                                 "rows": sum(len(r.rows) for r in reports)})
    return paths


# src/storage/results_writer.py
