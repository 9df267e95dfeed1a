"""CSV and JSON emission of run records and summaries."""

import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, TextIO, Union

import numpy as np
from pydantic import BaseModel

from .errors import InvalidInputError
from .models import CellSummary, RunRecord

logger = logging.getLogger(__name__)

Destination = Union[str, Path, TextIO]
Record = Union[BaseModel, Mapping[str, Any]]

EPOCH_COLUMNS = (
    "cell",
    "config_hash",
    "variant",
    "sigma",
    "compress_kind",
    "rate",
    "rank",
    "seed",
    "epoch",
    "test_accuracy",
    "train_loss",
    "bytes",
    "epsilon",
)

CELL_COLUMNS = (
    "cell",
    "config_hash",
    "variant",
    "sigma",
    "compress_kind",
    "rate",
    "rank",
    "gradient_mse",
    "final_accuracy",
    "epsilon",
    "bytes",
)


def _as_dict(record: Record) -> Dict[str, Any]:
    if isinstance(record, BaseModel):
        return record.model_dump()
    return dict(record)


def _format_csv(rows: List[Dict[str, Any]], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: "" if row.get(key) is None else row[key] for key in columns})
    return buffer.getvalue()


def json_safe(value: Any) -> Any:
    """Replace non-finite floats with None so the value dumps as strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


def _format_json(rows: List[Dict[str, Any]]) -> str:
    payload: Any = rows[0] if len(rows) == 1 else rows
    return json.dumps(json_safe(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_report(
    records: Sequence[Record],
    format: str,
    destination: Destination,
    columns: Optional[Sequence[str]] = None,
) -> None:
    """Write records as CSV (header always first) or sorted-key JSON.

    A single JSON record is written as an object, several as a list. ``"-"``
    writes to standard output. Nothing is created when ``records`` is empty.
    """
    if format not in ("csv", "json"):
        raise InvalidInputError(f"unknown report format {format!r}")
    rows = [_as_dict(r) for r in records]
    if not rows:
        raise InvalidInputError("no records to report")

    if format == "csv":
        text = _format_csv(rows, columns or list(rows[0]))
    else:
        text = _format_json(rows)

    if destination == "-":
        sys.stdout.write(text)
    elif isinstance(destination, (str, Path)):
        path = Path(destination)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        logger.debug(f"Wrote {len(rows)} {format} record(s) to {path}")
    else:
        destination.write(text)


def epoch_rows(
    cell_key: str, summary: CellSummary, runs: Sequence[RunRecord]
) -> List[Dict[str, Any]]:
    """One row per (cell, seed, epoch)."""
    rows = []
    for run in runs:
        for epoch in run.epochs:
            rows.append(
                {
                    "cell": cell_key,
                    "config_hash": summary.config_hash,
                    "variant": summary.variant,
                    "sigma": summary.sigma,
                    "compress_kind": summary.compress_kind,
                    "rate": summary.rate,
                    "rank": summary.rank,
                    "seed": run.seed,
                    **epoch.model_dump(),
                }
            )
    return rows


def cell_row(cell_key: str, summary: CellSummary) -> Dict[str, Any]:
    """Gradient error next to final accuracy for one cell."""
    row = summary.model_dump(include=set(CELL_COLUMNS))
    row["cell"] = cell_key
    return row


def smooth_curve(values: Sequence[float], width: int = 20) -> List[float]:
    """Moving average over ``width`` points without padding at the ends."""
    if width < 1:
        raise InvalidInputError(f"width must be >= 1, got {width}")
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return []
    width = min(width, len(values))
    return np.convolve(values, np.ones(width) / width, mode="valid").tolist()
