"""SQLite history of plan and benchmark runs."""

from __future__ import annotations

import sqlite3
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from .config import get_data_dir

DB_NAME = "runs.db"


@dataclass
class RunRecord:
    """One plan or benchmark run."""

    kind: str  # "plan" or "bench"
    problem: str
    mode: str  # field source or bench mode
    success: bool
    iterations: int
    wall_time: float
    hamiltonian: Optional[float] = None
    termination: str = ""


def get_db_path() -> Path:
    """Return the history database path inside the data directory."""
    return get_data_dir() / DB_NAME


def _init_schema(conn: sqlite3.Connection) -> None:
    conn.executescript("""
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            recorded_at REAL NOT NULL,
            kind TEXT NOT NULL,
            problem TEXT NOT NULL,
            mode TEXT NOT NULL,
            success INTEGER NOT NULL,
            iterations INTEGER NOT NULL,
            wall_time REAL NOT NULL,
            hamiltonian REAL,
            termination TEXT
        );
        CREATE INDEX IF NOT EXISTS idx_runs_recorded_at
            ON runs(recorded_at);
    """)


def _connect(db_path: Optional[Path]) -> sqlite3.Connection:
    path = db_path or get_db_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.row_factory = sqlite3.Row
    _init_schema(conn)
    return conn


def add_run(record: RunRecord, db_path: Optional[Path] = None) -> None:
    """Append a run to the history."""
    conn = _connect(db_path)
    conn.execute(
        """
        INSERT INTO runs (recorded_at, kind, problem, mode, success, iterations, wall_time, hamiltonian, termination)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """,
        (
            time.time(),
            record.kind,
            record.problem,
            record.mode,
            int(record.success),
            record.iterations,
            record.wall_time,
            record.hamiltonian,
            record.termination,
        ),
    )
    conn.commit()
    conn.close()


def add_runs(records: list[RunRecord], db_path: Optional[Path] = None) -> None:
    """Append a batch of runs in one transaction."""
    conn = _connect(db_path)
    now = time.time()
    conn.executemany(
        """
        INSERT INTO runs (recorded_at, kind, problem, mode, success, iterations, wall_time, hamiltonian, termination)
        VALUES (:recorded_at, :kind, :problem, :mode, :success, :iterations, :wall_time, :hamiltonian, :termination)
        """,
        [{**asdict(r), "success": int(r.success), "recorded_at": now} for r in records],
    )
    conn.commit()
    conn.close()


def count_runs_since(since_timestamp: float, kind: Optional[str] = None, db_path: Optional[Path] = None) -> int:
    """Count runs recorded since the given timestamp, optionally of one kind."""
    conn = _connect(db_path)
    if kind is None:
        row = conn.execute("SELECT COUNT(*) FROM runs WHERE recorded_at >= ?", (since_timestamp,)).fetchone()
    else:
        row = conn.execute(
            "SELECT COUNT(*) FROM runs WHERE recorded_at >= ? AND kind = ?",
            (since_timestamp, kind),
        ).fetchone()
    conn.close()
    return row[0] if row else 0


def get_recent_runs(limit: int = 20, db_path: Optional[Path] = None) -> list[dict]:
    """Most recent runs first."""
    conn = _connect(db_path)
    rows = conn.execute(
        """
        SELECT recorded_at, kind, problem, mode, success, iterations, wall_time, hamiltonian, termination
        FROM runs
        ORDER BY recorded_at DESC, id DESC
        LIMIT ?
        """,
        (limit,),
    ).fetchall()
    conn.close()
    return [{**dict(r), "success": bool(r["success"])} for r in rows]
