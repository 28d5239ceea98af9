from __future__ import annotations

import functools
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Optional

import click
from rich.console import Console
from rich.table import Table

from framework.errors import ConfigError, DatasetError, EnhanceError, GradCheckFailure
from models.cli_config import CliConfig
from models.train_config import RunConfig
from services import checkpoints
from services.benchmark import bench_scan, write_bench_csv
from services.data import load_images, load_pairs
from services.gradcheck_battery import battery_names, run_battery
from services.inference import enhance
from services.metrics import score_pairs, write_eval_csv
from services.network import build
from services.training import train_loop
from utils.config_file import read_config
from utils.images import IMAGE_SUFFIXES, read_image, write_image
from utils.log import configure_logging

log = logging.getLogger("omamba")

log_level = os.environ.get("OMAMBA_LOG_LEVEL", "INFO")

# -----------------------------------------------------------------------------
# Shared plumbing
# -----------------------------------------------------------------------------
def exits_on_error(command: Callable) -> Callable:
    """Turn an escaping EnhanceError into a logged message and its exit code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except EnhanceError as exc:
            log.error("%s", exc.detail)
            sys.exit(exc.exit_code)

    return wrapper


def run_options(command: Callable) -> Callable:
    options = [
        click.option("--config", type=click.Path(path_type=Path), default=None, help="TOML run file."),
        click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE", help="Applied after the file."),
        click.option("--seed", type=click.IntRange(min=0), default=None, help="Overrides train.seed."),
        click.option("--out", type=click.Path(path_type=Path), default=Path("runs"), show_default=True),
        click.option("--dtype", type=click.Choice(["f32", "f64"]), default=None),
        click.option("--evaluator", type=click.Choice(["sequential", "parallel"]), default=None),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def cli_config(subcommand: str, **options) -> CliConfig:
    return CliConfig(subcommand=subcommand, **options)


def dataset_root(run: RunConfig, data: Optional[Path]) -> Path:
    root = data if data is not None else run.data.root
    if root is None:
        raise ConfigError("no dataset root; set data.root in the config or pass --data")
    return root


def image_files(inputs: tuple[Path, ...]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        if item.is_dir():
            files.extend(sorted(p for p in item.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
        elif item.is_file():
            files.append(item)
        else:
            raise DatasetError(f"input not found: {item}")
    if not files:
        raise DatasetError("no input images given")
    return files


def output_paths(files: list[Path], out: Path) -> list[Path]:
    """``out/<stem>.png`` per input; inputs that would share an output are rejected."""
    claimed: dict[Path, Path] = {}
    for path in files:
        target = out / f"{path.stem}.png"
        if target in claimed:
            raise DatasetError(f"{claimed[target]} and {path} would both be written to {target}")
        claimed[target] = path
    return list(claimed)


def load_for_inference(checkpoint: Path, cli: CliConfig):
    net_config = cli.resolve().net if cli.config is not None or cli.overrides else None
    net, _ = checkpoints.load_network(checkpoint, net_config, dtype=cli.dtype, evaluator=cli.evaluator)
    return net


# -----------------------------------------------------------------------------
# Command group
# -----------------------------------------------------------------------------
@click.group()
@click.option("--log-level", default=log_level, show_default=True, help="Logging threshold.")
def app(log_level: str) -> None:
    """Underwater image enhancement with dual selective-scan branches."""
    configure_logging(log_level)


# -----------------------------------------------------------------------------
# train
# -----------------------------------------------------------------------------
@app.command()
@run_options
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Overrides data.root.")
@click.option("--resume", type=click.Path(exists=True, path_type=Path), default=None, help="Checkpoint to continue.")
@exits_on_error
def train(data: Optional[Path], resume: Optional[Path], **options) -> None:
    cli = cli_config("train", **options)
    run = cli.resolve()
    root = dataset_root(run, data)
    train_images = load_images(load_pairs(root, run.data.train_split))
    try:
        val_images = load_images(load_pairs(root, run.data.test_split))
    except DatasetError as exc:
        log.info("validating on the training pairs (%s)", exc.detail)
        val_images = None
    net = build(run.net, run.train.seed)
    summary = train_loop(train_images, net, run, cli.out, val_images=val_images, resume=resume)
    click.echo(summary.model_dump_json(indent=2))


# -----------------------------------------------------------------------------
# infer
# -----------------------------------------------------------------------------
@app.command()
@run_options
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), required=True)
@click.argument("inputs", nargs=-1, required=True, type=click.Path(path_type=Path))
@exits_on_error
def infer(checkpoint: Path, inputs: tuple[Path, ...], **options) -> None:
    """Enhance image files (or every image in the given folders) into --out."""
    cli = cli_config("infer", **options)
    files = image_files(inputs)
    targets = output_paths(files, cli.out)
    net = load_for_inference(checkpoint, cli)
    for path, target in zip(files, targets):
        written = write_image(target, enhance(net, read_image(path)))
        log.info("%s -> %s", path, written)


# -----------------------------------------------------------------------------
# eval
# -----------------------------------------------------------------------------
@app.command(name="eval")
@run_options
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--data", type=click.Path(path_type=Path), default=None, help="Overrides data.root.")
@click.option("--split", default=None, help="Defaults to data.test_split.")
@exits_on_error
def evaluate(checkpoint: Path, data: Optional[Path], split: Optional[str], **options) -> None:
    """Per-image and mean PSNR/SSIM of a checkpoint on a paired split, written to --out/eval.csv."""
    cli = cli_config("eval", **options)
    run = cli.resolve()
    dataset = load_pairs(dataset_root(run, data), split or run.data.test_split)
    net = load_for_inference(checkpoint, cli)
    images = load_images(dataset)
    rows = score_pairs(
        [pair.name for pair in dataset.pairs],
        [enhance(net, source) for source, _ in images],
        [target for _, target in images],
    )
    cli.out.mkdir(parents=True, exist_ok=True)
    report = cli.out / "eval.csv"
    with report.open("w", newline="", encoding="utf-8") as handle:
        write_eval_csv(rows, handle)
    log.info("mean PSNR %.3f dB, SSIM %.4f over %d pairs -> %s", rows[-1].psnr_db, rows[-1].ssim, len(dataset), report)


# -----------------------------------------------------------------------------
# grad-check
# -----------------------------------------------------------------------------
@app.command(name="grad-check")
@click.option("--only", multiple=True, type=click.Choice(battery_names()), help="Restrict the battery.")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option(
    "--config",
    type=click.Path(path_type=Path),
    default=None,
    help="Checked for validity; the battery runs its own fixed networks.",
)
@exits_on_error
def grad_check(only: tuple[str, ...], seed: int, config: Optional[Path]) -> None:
    """Finite-difference check of every primitive, block and a tiny network in f64."""
    if config is not None:
        RunConfig.from_flat(read_config(config))
    items = run_battery(only or None, seed=seed)
    table = Table(title="gradient check")
    table.add_column("item")
    table.add_column("max rel. error", justify="right")
    table.add_column("tolerance", justify="right")
    table.add_column("result")
    for item in items:
        verdict = "ok" if item.passed else f"FAIL {item.error or ''}".strip()
        table.add_row(item.name, f"{item.max_rel_error:.3e}", f"{item.tolerance:.0e}", verdict)
    Console().print(table)
    failing = [item.name for item in items if not item.passed]
    if failing:
        raise GradCheckFailure(failing)


# -----------------------------------------------------------------------------
# bench-scan
# -----------------------------------------------------------------------------
@app.command(name="bench-scan")
@click.option("--L", "lengths", multiple=True, type=click.IntRange(min=1), default=(16, 64, 256), show_default=True)
@click.option("--N", "states", multiple=True, type=click.IntRange(min=1), default=(4, 16), show_default=True)
@click.option("--D", "channels", multiple=True, type=click.IntRange(min=1), default=(4,), show_default=True)
@click.option("--batch", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--repeats", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--dtype", type=click.Choice(["f32", "f64"]), default="f64", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="CSV file; stdout when omitted.")
@exits_on_error
def bench_scan_command(lengths, states, channels, batch, repeats, seed, dtype, out: Optional[Path]) -> None:
    """Sequential vs parallel scan wall time and agreement per (L, N, D)."""
    rows = bench_scan(lengths, states, channels, batch=batch, repeats=repeats, seed=seed, dtype=dtype)
    if out is None:
        write_bench_csv(rows, sys.stdout)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        write_bench_csv(rows, handle)
    log.info("wrote %d rows to %s", len(rows), out)


# -----------------------------------------------------------------------------
# Entrypoint for `python main.py`
# -----------------------------------------------------------------------------
if __name__ == "__main__":
    app()
