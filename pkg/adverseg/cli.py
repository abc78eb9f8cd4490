"""CLI entry point for adverseg using Typer."""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from adverseg import __app_name__, __version__
from adverseg.errors import AdversegError, NonFiniteError

app = typer.Typer(
    name=__app_name__,
    help="Adversarial semantic segmentation on synthetic phantoms",
    no_args_is_help=True,
)
console = Console()
err_console = Console(stderr=True)

logger = logging.getLogger("adverseg.cli")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_ABORTED = 3

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def version_callback(value: bool) -> None:
    """Show version and exit."""
    if value:
        console.print(f"adverseg version {__version__}")
        raise typer.Exit()


def setup_logging(verbose: bool, debug: bool, log_file: Optional[Path]) -> None:
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    root = logging.getLogger("adverseg")
    root.handlers.clear()
    root.setLevel(level)
    root.propagate = False
    root.addHandler(RichHandler(console=err_console, show_path=False, level=level))
    if log_file is not None:
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


@contextmanager
def exit_on_error() -> Iterator[None]:
    """Map library exceptions to the documented exit codes."""
    try:
        yield
    except NonFiniteError as exc:
        logger.debug("aborted", exc_info=True)
        err_console.print(f"[red]aborted:[/red] {escape(str(exc))}", highlight=False)
        raise typer.Exit(EXIT_ABORTED) from None
    except (AdversegError, OSError) as exc:
        logger.debug("failed", exc_info=True)
        err_console.print(f"[red]error:[/red] {escape(str(exc))}", highlight=False)
        raise typer.Exit(EXIT_INVALID) from None


@app.callback()
def main(
    version: bool = typer.Option(
        False,
        "--version",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit",
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress (INFO)"),
    debug: bool = typer.Option(False, "--debug", help="Log every step (DEBUG)"),
    log_file: Optional[Path] = typer.Option(None, "--log-file", help="Also log to this file"),
) -> None:
    """
    Adversarial segmentation engine.

    Generate phantom datasets, train the generator/discriminator pair,
    evaluate checkpoints and render comparison tables.
    """
    setup_logging(verbose, debug, log_file)


@app.command("gen-data")
def gen_data(
    out: Path = typer.Option(..., "--out", help="Output directory"),
    count: int = typer.Option(200, "--count", "-n", help="Number of samples"),
    size: int = typer.Option(64, "--size", help="Height and width in pixels"),
    classes: int = typer.Option(3, "--classes", help="Number of classes, background included"),
    channels: int = typer.Option(1, "--channels", help="Input channels (1 or 3)"),
    noise: float = typer.Option(0.05, "--noise", help="Gaussian noise sigma"),
    depth: int = typer.Option(3, "--depth", help="Encoder depth the size must suit"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Dataset seed"),
) -> None:
    """Write phantom samples as TSR1 pairs plus a manifest."""
    from adverseg.data.manifest import write_dataset
    from adverseg.data.models import PhantomSpec
    from adverseg.data.phantom import generate_dataset
    from adverseg.errors import ConfigError
    from adverseg.utils.config import resolve_seed

    with exit_on_error():
        if depth < 1 or size % (2**depth):
            raise ConfigError(
                f"--size {size} must be divisible by 2^{depth} = {2**depth} (encoder depth)"
            )
        spec = PhantomSpec(
            height=size,
            width=size,
            num_classes=classes,
            in_channels=channels,
            noise_sigma=noise,
            seed=resolve_seed(seed),
        )
        samples = generate_dataset(spec, count)
        manifest = write_dataset(samples, out, classes)
    console.print(
        f"wrote {len(manifest)} samples ({channels}x{size}x{size}, {classes} classes, "
        f"seed {spec.seed}) to {out}"
    )


def _report_table(reports, title: str) -> Table:
    table = Table(title=title)
    table.add_column("Model")
    table.add_column("Pixel Accuracy", justify="right")
    table.add_column("Recall", justify="right")
    table.add_column("IOU", justify="right")
    table.add_column("Dice", justify="right", style="cyan")
    for r in reports:
        table.add_row(
            r.model, f"{r.pixel_accuracy:.4f}", f"{r.recall:.4f}", f"{r.iou:.4f}", f"{r.dice:.4f}"
        )
    return table


@app.command()
def train(
    data: Path = typer.Option(..., "--data", help="Dataset manifest"),
    out: Path = typer.Option(..., "--out", help="Run directory"),
    config: Optional[Path] = typer.Option(None, "--config", help="key = value config file"),
    adversarial: Optional[bool] = typer.Option(
        None, "--adversarial/--no-adversarial", help="Enable the adversarial term"
    ),
    lambda_rec: Optional[float] = typer.Option(None, "--lambda", help="Reconstruction weight"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Training steps"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Run seed"),
    resume: Optional[Path] = typer.Option(None, "--resume", help="Checkpoint to resume from"),
) -> None:
    """Train the generator and discriminator."""
    from adverseg.core.training import train as run_training
    from adverseg.data.manifest import read_manifest
    from adverseg.utils.config import Config

    with exit_on_error():
        manifest = read_manifest(data)
        cfg = Config(
            config,
            overrides={
                "adversarial": adversarial,
                "lambda_rec": lambda_rec,
                "steps": steps,
                "seed": seed,
            },
        )
        train_cfg = cfg.to_train_config(manifest.num_classes, manifest.in_channels)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.toml")
        result = run_training(manifest, train_cfg, out_dir=out, resume=resume)

    console.print(f"trained {result.checkpoint.step} steps; outputs in {out}")
    if result.report is not None:
        console.print(_report_table([result.report], "Held-out metrics"))


@app.command("eval")
def evaluate_cmd(
    data: Path = typer.Option(..., "--data", help="Dataset manifest"),
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Checkpoint file or run directory"),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the key=value report here"),
    name: Optional[str] = typer.Option(None, "--name", help="Model name in the report"),
    include_absent: bool = typer.Option(
        False, "--include-absent", help="Count classes absent from truth and prediction as 1.0"
    ),
) -> None:
    """Evaluate a checkpoint on every sample of a dataset."""
    from adverseg.core.checkpoint import find_latest, load_checkpoint
    from adverseg.core.training import evaluate
    from adverseg.data.manifest import read_manifest
    from adverseg.errors import DataError

    with exit_on_error():
        manifest = read_manifest(data)
        path = checkpoint
        if checkpoint.is_dir():
            path = find_latest(checkpoint)
            if path is None:
                raise DataError(f"no checkpoint found in {checkpoint}")
        ckpt = load_checkpoint(path)
        model_name = name or ckpt.train_config.get("model_name", "Ours")
        gen = ckpt.restore_generator()
        report = evaluate(
            gen, manifest, manifest.num_classes, model_name, include_absent=include_absent
        )
        if out is not None:
            out.write_text(report.to_kv() + "\n")
    console.print(_report_table([report], "Evaluation"))
    if report.skipped:
        console.print(f"[dim]classes absent from truth, skipped: {report.skipped}[/dim]")


@app.command()
def report(
    inputs: List[Path] = typer.Option(..., "--in", help="key=value report file (repeatable)"),
    columns: str = typer.Option("pa,recall,iou,dice", "--columns", help="Comma-separated"),
) -> None:
    """Render stored reports as a fixed-width comparison table."""
    from adverseg.core.metrics import parse_columns, read_reports, render_table

    with exit_on_error():
        selected = parse_columns(columns)
        reports = []
        for path in inputs:
            reports.extend(read_reports(path.read_text()))
        text = render_table(reports, selected)
    console.print(text, markup=False, highlight=False, soft_wrap=True)


@app.command()
def gradcheck(
    layer: Optional[str] = typer.Option(None, "--layer", help="Run a single check"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Input seed"),
    epsilon: float = typer.Option(1e-5, "--epsilon", help="Central difference step"),
    corrupt_backward: Optional[str] = typer.Option(
        None, "--corrupt-backward", hidden=True, help="Scale one layer's backward (testing)"
    ),
) -> None:
    """Run the 64-bit finite-difference gradient suite."""
    from adverseg.core.gradcheck import CHECKS, run_suite
    from adverseg.errors import ConfigError
    from adverseg.utils.config import resolve_seed

    with exit_on_error():
        if layer is not None and layer not in CHECKS:
            raise ConfigError(f"unknown check '{layer}'; valid: {', '.join(CHECKS)}")
        if not 1e-7 <= epsilon <= 1e-3:
            raise ConfigError("--epsilon must be in [1e-7, 1e-3]")
        try:
            results = run_suite(resolve_seed(seed), layer, epsilon, corrupt_backward)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None

    failed = [r for r in results if not r.passed]
    for r in results:
        console.print(r.line(), markup=False, highlight=False)
    if failed:
        err_console.print(f"{len(failed)} check(s) failed: {', '.join(r.name for r in failed)}")
        raise typer.Exit(EXIT_CHECK_FAILED)


@app.command()
def history(
    path: Path = typer.Argument(..., help="history.txt or a run directory"),
    limit: int = typer.Option(20, "--limit", "-l", help="Maximum entries to show"),
) -> None:
    """Show the last steps of a training history."""
    from adverseg.core.training import HISTORY_NAME, RunHistory

    with exit_on_error():
        file = path / HISTORY_NAME if path.is_dir() else path
        run = RunHistory.read(file)

    if not run.steps:
        console.print("[dim]No history yet[/dim]")
        return

    table = Table(title="Training History")
    table.add_column("Step", style="dim")
    table.add_column("L_rec")
    table.add_column("adv D")
    table.add_column("adv G")
    table.add_column("Total G", style="cyan")
    for step, loss in run.steps[-limit:]:
        table.add_row(
            str(step), f"{loss.rec:.4f}", f"{loss.adv_d:.4f}", f"{loss.adv_g:.4f}",
            f"{loss.total_g:.4f}",
        )
    console.print(table)


@app.command()
def config(
    file: Optional[Path] = typer.Option(None, "--config", help="key = value config file"),
    write: Optional[Path] = typer.Option(None, "--write", help="Write the effective config here"),
) -> None:
    """Show the effective configuration."""
    from adverseg.utils.config import Config

    with exit_on_error():
        cfg = Config(file)
        if write is not None:
            cfg.save(write)
            console.print(f"[green]Wrote configuration to {write}[/green]")
            return
    console.print(cfg.dumps(), markup=False, highlight=False, end="")


if __name__ == "__main__":
    app()
