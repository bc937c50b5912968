"""
report.py — Run reports and deterministic CSV/JSON emission.

Every CLI run produces:
  report.csv       one row per result: name, value, uncertainty, passed
  series_*.csv     data series for external plotting
  invariant.csv    classification entries (classify only)
  run_report.json  command echo, config hash, rows, emitted files

Floats are written with 17 significant digits and '\n' line endings; the JSON
has sorted keys and no timestamps, so identical runs give identical bytes.
"""
import hashlib
import json
from pathlib import Path

import pandas as pd
from pydantic import BaseModel, Field

from . import __version__
from .logger import get_logger
from .onep_complete import ClassificationInvariant
from .statcheck import TestReport

log = get_logger(__name__)


class ReportRow(BaseModel):
    name: str
    value: float
    uncertainty: float | None = None
    passed: bool | None = None


class RunReport(BaseModel):
    command: list[str]
    config_hash: str
    rows: list[ReportRow] = Field(default_factory=list)
    files: list[str] = Field(default_factory=list)

    @property
    def failed(self) -> list[ReportRow]:
        return [row for row in self.rows if row.passed is False]


def config_hash(spec_data: dict, options: dict) -> str:
    """sha256 of the canonical JSON of (spec, options, version)."""
    payload = json.dumps({"spec": spec_data, "options": options, "version": __version__},
                         sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def rows_from_checks(reports: list[TestReport]) -> list[ReportRow]:
    return [ReportRow(name=r.name, value=r.statistic, uncertainty=r.threshold, passed=r.passed)
            for r in reports]


def write_table(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def invariant_frame(invariant: ClassificationInvariant) -> pd.DataFrame:
    records = []
    for k, entry in enumerate(invariant.entries):
        record = {"entry": k}
        record.update({f"rn_{i + 1}": v for i, v in enumerate(entry.rn_vector)})
        record["mass"] = entry.mass
        record["atom_masses"] = ";".join(f"{m:.17g}" for m in entry.profile.atom_masses)
        record["continuous_mass"] = entry.profile.continuous_mass
        records.append(record)
    return pd.DataFrame.from_records(records)


def write_report(report: RunReport, out_dir: Path) -> RunReport:
    """Write report.csv and run_report.json; returns the report with its file list completed."""
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row.model_dump() for row in report.rows],
                         columns=["name", "value", "uncertainty", "passed"])
    write_table(frame, out_dir / "report.csv")
    files = sorted(set(report.files) | {"report.csv", "run_report.json"})
    report = report.model_copy(update={"files": files})
    text = json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"
    (out_dir / "run_report.json").write_text(text, encoding="utf-8")
    log.info("Report written to %s (%d rows)", out_dir, len(report.rows))
    return report
