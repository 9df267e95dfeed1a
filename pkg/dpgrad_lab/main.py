"""Command-line entry point for dpgrad-lab."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .clipping import log_grid, sweep_empirical
from .compression import build_compressor
from .config import describe_keys, load_config
from .denoise import plain_receiver_stream, run_denoise_stream
from .error_analysis import stage_breakdown
from .errors import ConfigError, UsageError
from .gradients import SampleBatchGradients, read_gradient_dump, write_gradient_dump
from .grid import GridResult, run_grid
from .models import ExperimentConfig, PrivacyParams
from .privacy import orders_for, rdp_epsilon_and_order
from .reports import emit_report
from .rng import RngStream
from .run_store import RunStore
from .tasks import oracle_stream
from .training import (
    build_denoise_config,
    initial_gradients,
    resolve_clip_radius,
    resolve_delta,
)

# stdout carries data only
console = Console(stderr=True)
logger = logging.getLogger(__name__)

SEED_ENV = "DPGRAD_LAB_SEED"
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
EXIT_INTERRUPTED = 130


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    log_level = getattr(logging, level.upper(), logging.INFO)
    handlers: List[logging.Handler] = [RichHandler(console=console, rich_tracebacks=True)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}")


def _grid_spec(text: str):
    try:
        low, high, points = text.split(":")
        return log_grid(float(low), float(high), int(points))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected lo:hi:points, got {text!r} ({e})")


def _prepare(args) -> ExperimentConfig:
    config = load_config(getattr(args, "config", None))
    setup_logging(args.log_level or config.logging.level, config.logging.file)
    return config


def _gradient_batch(args, config: ExperimentConfig, seed: int) -> SampleBatchGradients:
    """Per-sample gradients to analyse: a dump, the oracle, or the model at init."""
    if args.gradients:
        return read_gradient_dump(args.gradients)
    if getattr(args, "source", "oracle") == "model":
        return initial_gradients(config, seed)
    stream = oracle_stream(config.oracle_spec(), 1, RngStream.for_purpose(seed, "oracle"))
    return stream.batch(0)


def cmd_run(args) -> int:
    config = _prepare(args)
    seed = resolve_seed(args.seed)
    out_dir = Path(args.out)
    store = RunStore(args.state_db or str(out_dir / "run_store.db"))
    if args.fresh:
        store.clear()
    last_run = store.get_last_run_timestamp()
    if last_run is not None:
        console.print(
            f"Run store: {store.get_completed_count()} completed cells, "
            f"last grid run {last_run.isoformat(timespec='seconds')}"
        )
    result = run_grid(config, seed, out_dir, jobs=args.jobs, store=store, single=args.single)
    print_summary(result)
    return EXIT_OK


def cmd_sweep_clipping(args) -> int:
    config = _prepare(args)
    seed = resolve_seed(args.seed)
    batch = _gradient_batch(args, config, seed)
    sigma = config.privacy.sigma if args.sigma is None else args.sigma
    compressor = build_compressor(config.compress) if args.compress else None
    sweep = sweep_empirical(
        batch,
        sigma,
        compressor,
        args.grid,
        args.trials or config.analysis.trials,
        RngStream.for_purpose(seed, "sweep-clipping"),
        norm_estimator=args.norm_estimator,
        delta=resolve_delta(config.privacy.delta, config.task.train_size),
        noise_placement=config.privacy.noise_placement,
    )
    rows = [
        {"C": p.clip_radius, "empirical_mse": p.report.mse, "model_error": p.model_error}
        for p in sweep.points
    ]
    emit_report(rows, "csv", args.output)
    sys.stdout.write(f"c_star={sweep.c_star!r}\n")
    logger.info(
        f"Empirical argmin C={sweep.empirical_argmin:.6g}; "
        f"g_norm={sweep.g_norm:.6g} from {sweep.norm_estimator}"
    )
    return EXIT_OK


def cmd_error_breakdown(args) -> int:
    config = _prepare(args)
    seed = resolve_seed(args.seed)
    batch = _gradient_batch(args, config, seed)
    sigma = config.privacy.sigma if args.sigma is None else args.sigma
    setting = config.privacy.clip if args.clip is None else args.clip
    params = PrivacyParams(
        clip_radius=resolve_clip_radius(setting, batch, sigma),
        noise_multiplier=sigma,
        delta=resolve_delta(config.privacy.delta, config.task.train_size),
        noise_placement=config.privacy.noise_placement,
    )
    breakdown = stage_breakdown(
        params,
        build_compressor(config.compress),
        batch,
        args.trials or config.analysis.trials,
        RngStream.for_purpose(seed, "error-breakdown"),
    )
    emit_report(
        breakdown.reports, "csv", args.output, columns=("stage", "mse", "bias_sq", "variance", "n")
    )
    return EXIT_OK


def cmd_denoise_run(args) -> int:
    config = _prepare(args)
    if not {"beta", "gamma"} <= config.denoise.model_fields_set:
        raise ConfigError(
            "denoise-run needs denoise.beta and denoise.gamma set in the config", args.config
        )
    seed = resolve_seed(args.seed)
    steps = args.steps or config.oracle.steps
    stream = oracle_stream(config.oracle_spec(), steps, RngStream.for_purpose(seed, "oracle"))
    setting = config.privacy.clip
    params = PrivacyParams(
        clip_radius=resolve_clip_radius(setting, stream.batch(0), config.privacy.sigma),
        noise_multiplier=config.privacy.sigma,
        delta=resolve_delta(config.privacy.delta, config.task.train_size),
        noise_placement=config.privacy.noise_placement,
    )
    cfg = build_denoise_config(config, params)
    rng = RngStream.for_purpose(seed, "denoise")
    trace = run_denoise_stream(stream, cfg, build_compressor(config.compress), rng)
    rows = [row.model_dump() for row in trace]
    columns = ["step", "flag", "residual_norm_v", "residual_norm_a", "mse_receiver"]
    if args.baseline:
        plain = plain_receiver_stream(stream, params, build_compressor(config.compress), rng)
        for row, error in zip(rows, plain):
            row["mse_plain"] = error
        columns.append("mse_plain")
    emit_report(rows, "csv", args.output, columns=columns)
    return EXIT_OK


def cmd_account(args) -> int:
    setup_logging(args.log_level or "INFO")
    epsilon, alpha = rdp_epsilon_and_order(
        args.sigma, args.steps, args.delta, orders_for(args.orders)
    )
    alpha_text = "none" if alpha is None else f"{alpha:g}"
    sys.stdout.write(f"epsilon={epsilon:.2f} alpha={alpha_text}\n")
    console.print(
        "[dim]RDP of the Gaussian mechanism without subsampling amplification; "
        "epsilon is an upper bound.[/dim]"
    )
    return EXIT_OK


def cmd_oracle(args) -> int:
    config = _prepare(args)
    seed = resolve_seed(args.seed)
    stream = oracle_stream(
        config.oracle_spec(), args.step + 1, RngStream.for_purpose(seed, "oracle")
    )
    write_gradient_dump(stream.batch(args.step), args.out)
    sys.stdout.write(f"g_norm={config.oracle.g_norm!r} m={stream.layout.size} path={args.out}\n")
    return EXIT_OK


def print_summary(result: GridResult):
    table = Table(title="Grid Summary")
    table.add_column("Cell", style="cyan")
    table.add_column("Accuracy", style="magenta")
    table.add_column("Grad MSE")
    table.add_column("Epsilon")
    table.add_column("Bytes")
    table.add_column("Clip radius")

    for s in result.summaries:
        radii = ", ".join("-" if c is None else f"{c:.4g}" for c in s.clip_radius)
        if s.rate is not None:
            level = f"rate {s.rate:g}"
        elif s.rank is not None:
            level = f"rank {s.rank}"
        else:
            level = s.compress_kind
        table.add_row(
            f"sigma={s.sigma:g} {level} {s.variant}",
            f"{s.final_accuracy:.4f}",
            "-" if s.gradient_mse is None else f"{s.gradient_mse:.4g}",
            f"{s.epsilon:.3g}",
            str(s.bytes),
            radii,
        )
    console.print(table)
    console.print(
        f"{result.cells_total} cells: {result.cells_run} run, {result.cells_reused} reused"
    )

    diverged = [s for s in result.summaries if s.diverged_seeds]
    if diverged:
        console.print("\n[red]Diverged:[/red]")
        for s in diverged:
            console.print(f"  - sigma={s.sigma:g} {s.variant}: seeds {s.diverged_seeds}")


def build_parser() -> argparse.ArgumentParser:
    epilog = "recognized config keys:\n" + describe_keys()
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help=f"Root seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--log-level", help="Logging level (default: logging.level or INFO)")

    parser = _Parser(
        prog="dpgrad-lab",
        description="Simulate differentially private gradient pipelines",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, help_text: str, handler):
        p = sub.add_parser(
            name,
            help=help_text,
            description=help_text,
            parents=[common],
            epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.set_defaults(handler=handler)
        return p

    run = add("run", "Train over the experiment grid and write reports", cmd_run)
    run.add_argument("--config", help="Experiment file (key = value or YAML)")
    run.add_argument("--out", default="results", help="Output directory")
    run.add_argument("--jobs", type=int, default=1, help="Cells run in parallel")
    run.add_argument("--fresh", action="store_true", help="Ignore previously completed cells")
    run.add_argument("--single", action="store_true", help="Run only the config as written")
    run.add_argument("--state-db", help="Run store path (default: OUT/run_store.db)")

    sweep = add(
        "sweep-clipping", "Empirical gradient error across clipping radii", cmd_sweep_clipping
    )
    sweep.add_argument("--config", help="Experiment file")
    sweep.add_argument("--sigma", type=float, help="Noise multiplier (default: privacy.sigma)")
    sweep.add_argument("--grid", type=_grid_spec, default=log_grid(0.01, 10.0, 32),
                       help="Log-spaced radii lo:hi:points (default 0.01:10:32)")
    sweep.add_argument("--norm-estimator", choices=["median", "mean-norm"], default="median")
    sweep.add_argument("--compress", action="store_true", help="Include the configured compressor")
    sweep.add_argument("--source", choices=["oracle", "model"], default="oracle")
    sweep.add_argument("--gradients", help="Gradient dump to analyse instead of --source")
    sweep.add_argument("--trials", type=int, help="Trials per radius (default: analysis.trials)")
    sweep.add_argument("--output", default="-", help="CSV destination (default stdout)")

    breakdown = add(
        "error-breakdown", "Bias and variance after each pipeline stage", cmd_error_breakdown
    )
    breakdown.add_argument("--config", help="Experiment file")
    breakdown.add_argument("--sigma", type=float, help="Noise multiplier (default: privacy.sigma)")
    breakdown.add_argument("--clip", help="Clipping radius, median or optimal")
    breakdown.add_argument("--source", choices=["oracle", "model"], default="oracle")
    breakdown.add_argument("--gradients", help="Gradient dump to analyse instead of --source")
    breakdown.add_argument("--trials", type=int, help="Trials per stage (default: analysis.trials)")
    breakdown.add_argument("--output", default="-", help="CSV destination (default stdout)")

    denoise = add("denoise-run", "Per-step trace of Denoise on the oracle stream", cmd_denoise_run)
    denoise.add_argument("--config", help="Experiment file")
    denoise.add_argument("--steps", type=int, help="Steps (default: oracle.steps)")
    denoise.add_argument("--baseline", action="store_true",
                         help="Add the plain privatize + compress error as mse_plain")
    denoise.add_argument("--output", default="-", help="CSV destination (default stdout)")

    account = add("account", "Epsilon of the Gaussian mechanism after N steps", cmd_account)
    account.add_argument("--sigma", type=float, required=True)
    account.add_argument("--steps", type=int, required=True)
    account.add_argument("--delta", type=float, required=True)
    account.add_argument("--orders", choices=["default", "dense"], default="default")

    oracle = add("oracle", "Write one oracle batch as a gradient dump", cmd_oracle)
    oracle.add_argument("--config", help="Experiment file")
    oracle.add_argument("--out", required=True, help="Dump path")
    oracle.add_argument("--step", type=int, default=0, help="Which batch of the stream")

    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted[/yellow]")
        return EXIT_INTERRUPTED
    except Exception as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_FAILURE


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
