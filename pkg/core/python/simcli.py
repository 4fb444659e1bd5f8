"""
Command-line surface.

    python -m core.python.simcli simulate recipes/mimo_fpf/experiment.yaml --workers 4
    python -m core.python.simcli gamma-opt --rho 20 --db --sigma2 0.01 --n 4
    python -m core.python.simcli codebook-check data/codebooks/grassmannian_mt2_b2.txt
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Optional

import typer

from core import config
from core.python import lfc
from core.python.errors import CoraError
from core.python.logger import configure_logging, console
from core.python.multiantenna import load_codebook, min_chordal_distance, validate_codebook
from core.python.pipeline import run_experiment
from core.python.results_io import load_spec, write_results

logger = logging.getLogger(__name__)

app = typer.Typer(
    help="Link-level simulation of channel-output-feedback retransmissions in HARQ",
    add_completion=False,
    no_args_is_help=True,
)


class OutputFormat(str, Enum):
    csv = "csv"
    json = "json"


def _fail(exc):
    console.print(f"[bold red]error:[/] {exc}")
    raise typer.Exit(code=exc.exit_code)


@app.callback()
def main(
    log_level: str = typer.Option(config.LOG_LEVEL, "--log-level", help="Logging level"),
):
    configure_logging(log_level.upper())


@app.command()
def simulate(
    spec_file: Path = typer.Argument(..., help="Experiment recipe (YAML)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output table path"),
    workers: Optional[int] = typer.Option(None, "--workers", min=1, help="Worker processes"),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Master seed override"),
    fmt: OutputFormat = typer.Option(OutputFormat.csv, "--format", help="Table format"),
    trace: Optional[Path] = typer.Option(None, "--trace", help="JSON-lines session trace"),
    quiet: bool = typer.Option(False, "--quiet", help="Hide the progress bar"),
):
    """Run an experiment recipe and write its result table."""
    try:
        spec = load_spec(spec_file, overrides={"master_seed": seed, "workers": workers})
        console.rule(f"[bold]{spec.name}")
        result = run_experiment(spec, trace_path=trace, show_progress=not quiet)
        if out is None:
            out = Path(spec.output) if spec.output else config.OUTPUT_DIR / f"{spec.name}.{fmt.value}"
        paths = write_results(result, out, fmt.value)
    except CoraError as exc:
        _fail(exc)
    console.rule("[bold green]done")
    for path in paths:
        console.print(f"  {path}")


@app.command("gamma-opt")
def gamma_opt(
    rho: float = typer.Option(..., "--rho", help="Power per channel use"),
    sigma2: float = typer.Option(0.0, "--sigma2", help="Feedback noise variance"),
    n: int = typer.Option(config.N_MAX, "--n", min=1, help="Number of transmissions"),
    db: bool = typer.Option(False, "--db", help="Interpret --rho in dB"),
):
    """Print the power split maximizing the AWGN post-processed SNR."""
    rho_linear = 10.0 ** (rho / 10.0) if db else rho
    try:
        gamma = lfc.optimize_gamma(rho_linear, sigma2, n)
    except CoraError as exc:
        _fail(exc)
    typer.echo(f"{gamma:.6f}")


@app.command("codebook-check")
def codebook_check(
    file: Path = typer.Argument(..., help="Codebook file"),
):
    """Validate a beamforming codebook file."""
    try:
        codebook = load_codebook(file)
        validate_codebook(codebook)
    except CoraError as exc:
        _fail(exc)
    console.print(
        f"[green]ok[/] {file}: {codebook.size} vectors, Mt={codebook.mt}, "
        f"min chordal distance {min_chordal_distance(codebook):.6f}"
    )


if __name__ == "__main__":
    app()
