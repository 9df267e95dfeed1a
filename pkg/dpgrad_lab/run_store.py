"""SQLite record of completed grid cells, so an interrupted grid can resume."""

import json
import logging
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Tuple

from .models import CellSummary, RunRecord
from .reports import json_safe

logger = logging.getLogger(__name__)


def _dumps(value) -> str:
    return json.dumps(json_safe(value), allow_nan=False)


class RunStore:
    """Stores finished cells keyed by cell key and config hash."""

    def __init__(self, db_path: str):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._init_db()

    def _init_db(self):
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS completed_cells (
                    cell_key TEXT PRIMARY KEY,
                    config_hash TEXT NOT NULL,
                    summary_json TEXT NOT NULL,
                    runs_json TEXT NOT NULL,
                    completed_at TEXT NOT NULL
                )
            """)
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS grid_runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_at TEXT NOT NULL,
                    cells_total INTEGER DEFAULT 0,
                    cells_run INTEGER DEFAULT 0,
                    cells_reused INTEGER DEFAULT 0
                )
            """)
            conn.commit()

    def load(
        self, cell_key: str, config_hash: str
    ) -> Optional[Tuple[CellSummary, List[RunRecord]]]:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                SELECT summary_json, runs_json FROM completed_cells
                WHERE cell_key = ? AND config_hash = ?
                """,
                (cell_key, config_hash),
            )
            row = cursor.fetchone()
        if row is None:
            return None
        summary = CellSummary.model_validate(json.loads(row[0]))
        runs = [RunRecord.model_validate(r) for r in json.loads(row[1])]
        return summary, runs

    def mark_completed(self, cell_key: str, summary: CellSummary, runs: List[RunRecord]):
        runs_json = _dumps([r.model_dump() for r in runs])
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT OR REPLACE INTO completed_cells
                (cell_key, config_hash, summary_json, runs_json, completed_at)
                VALUES (?, ?, ?, ?, ?)
                """,
                (
                    cell_key,
                    summary.config_hash,
                    _dumps(summary.model_dump()),
                    runs_json,
                    datetime.now().isoformat(),
                ),
            )
            conn.commit()
            logger.info(f"Stored cell {cell_key}")

    def clear(self):
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("DELETE FROM completed_cells")
            conn.commit()

    def update_last_run(self, cells_total: int = 0, cells_run: int = 0, cells_reused: int = 0):
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT INTO grid_runs (run_at, cells_total, cells_run, cells_reused)
                VALUES (?, ?, ?, ?)
                """,
                (datetime.now().isoformat(), cells_total, cells_run, cells_reused),
            )
            conn.commit()

    def get_last_run_timestamp(self) -> Optional[datetime]:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT run_at FROM grid_runs ORDER BY id DESC LIMIT 1")
            row = cursor.fetchone()
            if row:
                return datetime.fromisoformat(row[0])
            return None

    def get_completed_count(self) -> int:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT COUNT(*) FROM completed_cells")
            return cursor.fetchone()[0]
