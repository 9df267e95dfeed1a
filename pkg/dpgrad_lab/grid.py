"""The experiment grid: noise multiplier x compression level x variant, over seeds."""

import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict

from .config import config_hash, with_overrides
from .models import CellSummary, ExperimentConfig, RunRecord
from .reports import CELL_COLUMNS, EPOCH_COLUMNS, cell_row, emit_report, epoch_rows, smooth_curve
from .run_store import RunStore
from .training import initial_gradient_error, run_from_config

logger = logging.getLogger(__name__)


class GridCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float
    compress_kind: str
    rate: Optional[float] = None
    rank: Optional[int] = None
    variant: Literal["plain", "denoise"] = "plain"

    @property
    def key(self) -> str:
        if self.compress_kind == "topk":
            level = f"topk-r{self.rate:g}"
        elif self.compress_kind == "powersgd":
            level = f"powersgd-k{self.rank}"
        else:
            level = "none"
        return f"sigma{self.sigma:g}_{level}_{self.variant}"

    def overrides(self) -> Dict[str, object]:
        values: Dict[str, object] = {
            "privacy.sigma": self.sigma,
            "denoise.enabled": self.variant == "denoise",
        }
        if self.rate is not None:
            values["compress.rate"] = self.rate
        if self.rank is not None:
            values["compress.rank"] = self.rank
        return values


class GridResult(BaseModel):
    cells_total: int = 0
    cells_run: int = 0
    cells_reused: int = 0
    summaries: List[CellSummary] = []


def grid_cells(config: ExperimentConfig) -> List[GridCell]:
    """Cells in a fixed order; the compression axis follows compress.kind."""
    kind = config.compress.kind
    cells = []
    for sigma in config.grid.sigmas:
        if kind == "topk":
            levels = [{"rate": rate} for rate in config.grid.rates]
        elif kind == "powersgd":
            levels = [{"rank": rank} for rank in config.grid.ranks]
        else:
            levels = [{}]
        for level in levels:
            for variant in config.grid.variants:
                cells.append(GridCell(sigma=sigma, compress_kind=kind, variant=variant, **level))
    return cells


def cell_config(base: ExperimentConfig, cell: GridCell) -> ExperimentConfig:
    return with_overrides(base, cell.overrides())


def _mean_accuracy_per_epoch(runs: List[RunRecord]) -> List[float]:
    # diverged runs only contribute the epochs they finished
    longest = max((len(r.epochs) for r in runs), default=0)
    return [
        statistics.fmean(r.epochs[i].test_accuracy for r in runs if len(r.epochs) > i)
        for i in range(longest)
    ]


def summarize_cell(
    cell: GridCell,
    config: ExperimentConfig,
    runs: List[RunRecord],
    gradient_errors: Optional[List[float]] = None,
) -> CellSummary:
    per_seed = [r.final_accuracy for r in runs]
    gradient_errors = gradient_errors or []
    epsilon = max((r.privacy_trace[-1].epsilon for r in runs if r.privacy_trace), default=0.0)
    return CellSummary(
        config_hash=config_hash(config),
        variant=cell.variant,
        sigma=cell.sigma,
        compress_kind=cell.compress_kind,
        rate=cell.rate,
        rank=cell.rank,
        seeds=[r.seed for r in runs],
        final_accuracy=statistics.fmean(per_seed),
        per_seed_final_accuracy=per_seed,
        epsilon=epsilon,
        delta=runs[0].delta,
        bytes=round(statistics.fmean(r.total_bytes for r in runs)),
        clip_radius=[r.clip_radius for r in runs],
        diverged_seeds=[r.seed for r in runs if r.diverged],
        gradient_mse=statistics.fmean(gradient_errors) if gradient_errors else None,
        per_seed_gradient_mse=gradient_errors,
        accuracy_curve=smooth_curve(
            _mean_accuracy_per_epoch(runs), config.analysis.smoothing_width
        ),
    )


def run_cell(
    config: ExperimentConfig, cell: GridCell, seeds: List[int]
) -> Tuple[CellSummary, List[RunRecord]]:
    logger.info(f"Running cell {cell.key} over seeds {seeds}")
    runs = [run_from_config(config, seed) for seed in seeds]
    errors = [initial_gradient_error(config, seed) for seed in seeds]
    return summarize_cell(cell, config, runs, errors), runs


def _run_cell_job(job: Tuple[ExperimentConfig, GridCell, List[int]]):
    return run_cell(*job)


def run_grid(
    base: ExperimentConfig,
    seed: int,
    out_dir: Path,
    jobs: int = 1,
    store: Optional[RunStore] = None,
    single: bool = False,
) -> GridResult:
    """Run every cell (or just ``base`` when ``single``) and write the reports.

    Writes ``epochs.csv`` with one row per (cell, seed, epoch), ``cells.csv`` with
    one row per cell and one JSON summary per cell under ``summaries/``. Cells
    already in ``store`` for the same config hash are reused; output order never
    depends on ``jobs``.
    """
    seeds = [seed + i for i in range(base.grid.seeds)]
    if single:
        cells = [
            GridCell(
                sigma=base.privacy.sigma,
                compress_kind=base.compress.kind,
                rate=base.compress.rate if base.compress.kind == "topk" else None,
                rank=base.compress.rank if base.compress.kind == "powersgd" else None,
                variant="denoise" if base.denoise.enabled else "plain",
            )
        ]
        configs = [base]
    else:
        cells = grid_cells(base)
        configs = [cell_config(base, cell) for cell in cells]

    results: Dict[str, Tuple[CellSummary, List[RunRecord]]] = {}
    pending = []
    for cell, config in zip(cells, configs):
        key = f"{cell.key}_seeds{seeds[0]}-{seeds[-1]}"
        stored = store.load(key, config_hash(config)) if store is not None else None
        if stored is not None:
            logger.info(f"Skipping {cell.key}, already completed")
            results[cell.key] = stored
        else:
            pending.append((key, cell, config))

    jobs_args = [(config, cell, seeds) for _, cell, config in pending]
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell_job, jobs_args))
    else:
        outcomes = [_run_cell_job(args) for args in jobs_args]

    for (key, cell, _), (summary, runs) in zip(pending, outcomes):
        results[cell.key] = (summary, runs)
        if store is not None:
            store.mark_completed(key, summary, runs)

    rows = []
    summaries = []
    for cell in cells:
        summary, runs = results[cell.key]
        summaries.append(summary)
        rows.extend(epoch_rows(cell.key, summary, runs))
        emit_report([summary], "json", out_dir / "summaries" / f"{cell.key}.json")
    if rows:
        emit_report(rows, "csv", out_dir / "epochs.csv", columns=EPOCH_COLUMNS)
    if summaries:
        cell_rows = [cell_row(cell.key, summary) for cell, summary in zip(cells, summaries)]
        emit_report(cell_rows, "csv", out_dir / "cells.csv", columns=CELL_COLUMNS)

    result = GridResult(
        cells_total=len(cells),
        cells_run=len(pending),
        cells_reused=len(cells) - len(pending),
        summaries=summaries,
    )
    if store is not None:
        store.update_last_run(result.cells_total, result.cells_run, result.cells_reused)
    return result
