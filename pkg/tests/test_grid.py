import numpy as np
import pytest

from dpgrad_lab.config import config_hash, with_overrides
from dpgrad_lab.grid import GridCell, cell_config, grid_cells, run_grid
from dpgrad_lab.models import ExperimentConfig
from dpgrad_lab.reports import CELL_COLUMNS
from dpgrad_lab.run_store import RunStore


def _make_config(**overrides) -> ExperimentConfig:
    values = {
        "task.train_size": 200,
        "task.test_size": 100,
        "train.epochs": 2,
        "train.batch_size": 50,
        "compress.kind": "topk",
        "grid.sigmas": [0.0, 0.5],
        "grid.rates": [1.0, 4.0],
        "grid.variants": ["plain", "denoise"],
    }
    values.update(overrides)
    return with_overrides(ExperimentConfig(), values)


def test_grid_cells_follow_compression_kind():
    cells = grid_cells(_make_config())
    assert len(cells) == 8
    assert cells[0] == GridCell(sigma=0.0, compress_kind="topk", rate=1.0, variant="plain")
    assert len({cell.key for cell in cells}) == 8

    powersgd = grid_cells(_make_config(**{"compress.kind": "powersgd", "grid.ranks": [1, 2, 4]}))
    assert [cell.rank for cell in powersgd[:6:2]] == [1, 2, 4]
    assert all(cell.rate is None for cell in powersgd)

    assert len(grid_cells(_make_config(**{"compress.kind": "none"}))) == 4


def test_cell_key_and_overrides():
    cell = GridCell(sigma=0.8, compress_kind="topk", rate=16.0, variant="denoise")
    assert cell.key == "sigma0.8_topk-r16_denoise"
    config = cell_config(_make_config(), cell)
    assert config.privacy.sigma == 0.8
    assert config.compress.rate == 16.0
    assert config.denoise.enabled is True
    assert GridCell(sigma=0.0, compress_kind="powersgd", rank=4).key == "sigma0_powersgd-k4_plain"


def test_run_grid_writes_summaries_and_epoch_rows(tmp_path):
    result = run_grid(_make_config(), seed=0, out_dir=tmp_path)
    assert result.cells_total == 8
    assert result.cells_run == 8
    lines = (tmp_path / "epochs.csv").read_text().splitlines()
    assert lines[0].startswith("cell,config_hash,variant,sigma")
    assert len(lines) == 1 + 8 * 2
    assert len(list((tmp_path / "summaries").glob("*.json"))) == 8
    zero_noise = [s for s in result.summaries if s.sigma == 0.0]
    assert all(s.epsilon == float("inf") for s in zero_noise)


def test_store_reuses_completed_cells(tmp_path):
    config = _make_config(**{"grid.sigmas": [0.5]})
    store = RunStore(str(tmp_path / "runs.db"))
    first = run_grid(config, seed=0, out_dir=tmp_path / "a", store=store)
    second = run_grid(config, seed=0, out_dir=tmp_path / "b", store=store)
    assert first.cells_run == 4
    assert second.cells_run == 0
    assert second.cells_reused == 4
    first_csv = (tmp_path / "a" / "epochs.csv").read_bytes()
    assert first_csv == (tmp_path / "b" / "epochs.csv").read_bytes()

    changed = with_overrides(config, {"train.lr": 0.1})
    assert config_hash(changed) != config_hash(config)
    third = run_grid(changed, seed=0, out_dir=tmp_path / "c", store=store)
    assert third.cells_run == 4


def test_parallel_jobs_give_identical_output(tmp_path):
    config = _make_config(**{"grid.variants": ["plain"]})
    run_grid(config, seed=1, out_dir=tmp_path / "serial", jobs=1)
    run_grid(config, seed=1, out_dir=tmp_path / "parallel", jobs=2)
    serial = (tmp_path / "serial" / "epochs.csv").read_bytes()
    assert serial == (tmp_path / "parallel" / "epochs.csv").read_bytes()


def test_single_run_uses_config_as_written(tmp_path):
    config = _make_config(**{"privacy.sigma": 0.5, "compress.rate": 4.0, "grid.seeds": 2})
    result = run_grid(config, seed=5, out_dir=tmp_path, single=True)
    assert result.cells_total == 1
    summary = result.summaries[0]
    assert summary.seeds == [5, 6]
    assert summary.rate == 4.0
    assert summary.config_hash == config_hash(config)


def test_cells_csv_pairs_gradient_error_with_accuracy(tmp_path):
    config = _make_config(
        **{
            "grid.sigmas": [0.0, 2.0],
            "grid.rates": [1.0],
            "grid.variants": ["plain"],
            "analysis.trials": 20,
            "analysis.smoothing_width": 1,
        }
    )
    result = run_grid(config, seed=0, out_dir=tmp_path)
    lines = (tmp_path / "cells.csv").read_text().splitlines()
    assert lines[0] == ",".join(CELL_COLUMNS)
    assert len(lines) == 3
    assert lines[1].startswith("sigma0_topk-r1_plain,")
    quiet, noisy = result.summaries
    for summary in (quiet, noisy):
        assert len(summary.per_seed_gradient_mse) == len(summary.seeds)
        assert summary.gradient_mse == pytest.approx(np.mean(summary.per_seed_gradient_mse))
        assert len(summary.accuracy_curve) == 2
        assert all(0.0 <= a <= 1.0 for a in summary.accuracy_curve)
    assert noisy.gradient_mse > quiet.gradient_mse >= 0.0
