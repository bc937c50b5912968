"""
ledger.py — Optional DuckDB ledger of run results.

When a ledger path is configured every CLI run appends its report rows to one
table, so results of many runs can be queried together:

    SELECT command, name, value FROM run_results WHERE passed = false

Inserts are idempotent: a (config_hash, command, name) triple is stored once.
"""
from pathlib import Path

import duckdb
import pandas as pd

from .logger import get_logger
from .report import RunReport

log = get_logger(__name__)


def connect(path: str | Path) -> duckdb.DuckDBPyConnection:
    """Open a connection to the ledger file."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return duckdb.connect(str(path))


def init_ledger(path: str | Path) -> None:
    """Create the results table if it doesn't exist. Safe to run multiple times."""
    con = connect(path)
    con.execute("""
        CREATE TABLE IF NOT EXISTS run_results (
            config_hash VARCHAR,    -- sha256 of spec + options + version
            command     VARCHAR,    -- subcommand name
            name        VARCHAR,    -- report row name
            value       DOUBLE,
            uncertainty DOUBLE,     -- standard error or threshold
            passed      BOOLEAN,    -- NULL for informational rows
            recorded_at TIMESTAMP
        );
    """)
    con.close()


def record_run(report: RunReport, path: str | Path) -> int:
    """Append the rows of a report. Returns the number of new rows."""
    init_ledger(path)
    con = connect(path)
    command = report.command[0] if report.command else ""
    inserted = 0
    for row in report.rows:
        exists = con.execute(
            "SELECT 1 FROM run_results WHERE config_hash = ? AND command = ? AND name = ?",
            [report.config_hash, command, row.name],
        ).fetchone()
        if exists:
            continue
        con.execute(
            "INSERT INTO run_results VALUES (?, ?, ?, ?, ?, ?, now())",
            [report.config_hash, command, row.name, row.value, row.uncertainty, row.passed],
        )
        inserted += 1
    con.close()
    log.info("Ledger %s: %d new rows, %d already recorded", path, inserted, len(report.rows) - inserted)
    return inserted


def load_runs(path: str | Path) -> pd.DataFrame:
    init_ledger(path)
    con = connect(path)
    frame = con.execute("""
        SELECT config_hash, command, name, value, uncertainty, passed, recorded_at
        FROM run_results
        ORDER BY recorded_at, command, name
    """).df()
    con.close()
    return frame
