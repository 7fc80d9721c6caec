"""CLI interface for the symmetric PDE solver."""

import json
import sys
from pathlib import Path
from typing import List, Optional

import typer
from loguru import logger
from rich.console import Console
from rich.table import Table

from .config_loader import ConfigLoader
from .errors import ConfigError, SymPdeError
from .experiment import run_experiment
from .reporting import write_manifest
from .schemas import Command, ExperimentConfig, OutputConfig

app = typer.Typer(
    help="🧮 Symmetric PDE solver - deep backward dynamic programming with DeepSets"
)
console = Console()

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(
        sys.stderr,
        level="DEBUG" if verbose else "INFO",
        format="{time:HH:mm:ss} | {level: <7} | {message}",
    )


def execute(
    command: Command,
    config_path: Optional[Path],
    out: Optional[Path],
    seed: Optional[int],
    runs: Optional[int],
    profile: Optional[str],
    assignments: Optional[List[str]],
    verbose: bool,
) -> None:
    """Load, validate and run one command.

    Exits 2 on config errors and 3 on numeric or any other failure.
    """
    configure_logging(verbose)
    fallback_out = out or Path(OutputConfig().dir)
    try:
        config = ConfigLoader().build(
            profile=profile,
            config_path=config_path,
            assignments=assignments or [],
            overrides={
                "command": command.value,
                "train.seed": seed,
                "train.runs": runs,
                "out.dir": str(out) if out else None,
            },
        )
    except ConfigError as e:
        console.print(f"❌ Invalid configuration: {e}")
        write_manifest(fallback_out, "FAILED", {"command": command.value, "error": str(e)})
        raise typer.Exit(EXIT_CONFIG)

    out_dir = Path(config.out.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = logger.add(out_dir / "run.log", level="DEBUG")
    try:
        result = run_experiment(config, out_dir, console)
    except ConfigError as e:
        console.print(f"❌ Invalid configuration: {e}")
        raise typer.Exit(EXIT_CONFIG)
    except SymPdeError as e:
        console.print(f"❌ {command.value} failed: {e}")
        raise typer.Exit(EXIT_NUMERIC)
    except Exception as e:
        logger.exception(f"{command.value} crashed")
        console.print(f"❌ {command.value} failed unexpectedly: {type(e).__name__}: {e}")
        raise typer.Exit(EXIT_NUMERIC)
    finally:
        logger.remove(sink)
    console.print(f"✅ {command.value} finished: results in {result['out_dir']}")


ConfigOpt = typer.Option(None, "--config", help="YAML or key=value config file")
OutOpt = typer.Option(None, "--out", help="Output directory")
SeedOpt = typer.Option(None, "--seed", help="Base random seed")
RunsOpt = typer.Option(None, "--runs", help="Number of independent runs")
ProfileOpt = typer.Option(None, "--profile", help="Preset profile name")
SetOpt = typer.Option(None, "--set", help="Override as dotted.key=value (repeatable)")
VerboseOpt = typer.Option(False, "--verbose", "-v", help="Debug logging on stderr")


@app.command()
def solve(
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seed: Optional[int] = SeedOpt,
    runs: Optional[int] = RunsOpt,
    profile: Optional[str] = ProfileOpt,
    set_: Optional[List[str]] = SetOpt,
    verbose: bool = VerboseOpt,
):
    """Solve a semilinear symmetric PDE backward in time."""
    execute(Command.SOLVE, config, out, seed, runs, profile, set_, verbose)


@app.command("solve-fnl")
def solve_fnl(
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seed: Optional[int] = SeedOpt,
    runs: Optional[int] = RunsOpt,
    profile: Optional[str] = ProfileOpt,
    set_: Optional[List[str]] = SetOpt,
    verbose: bool = VerboseOpt,
):
    """Solve a fully nonlinear symmetric PDE (second-order driver)."""
    execute(Command.SOLVE_FNL, config, out, seed, runs, profile, set_, verbose)


@app.command()
def explore(
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seed: Optional[int] = SeedOpt,
    runs: Optional[int] = RunsOpt,
    profile: Optional[str] = ProfileOpt,
    set_: Optional[List[str]] = SetOpt,
    verbose: bool = VerboseOpt,
):
    """Solve with training states drawn from random Gaussian mixtures."""
    execute(Command.EXPLORE, config, out, seed, runs, profile, set_, verbose)


@app.command()
def policy(
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seed: Optional[int] = SeedOpt,
    runs: Optional[int] = RunsOpt,
    profile: Optional[str] = ProfileOpt,
    set_: Optional[List[str]] = SetOpt,
    verbose: bool = VerboseOpt,
):
    """Learn a feedback control by successive solves on shrinking horizons."""
    execute(Command.POLICY, config, out, seed, runs, profile, set_, verbose)


@app.command()
def approx(
    config: Optional[Path] = ConfigOpt,
    out: Optional[Path] = OutOpt,
    seed: Optional[int] = SeedOpt,
    profile: Optional[str] = ProfileOpt,
    set_: Optional[List[str]] = SetOpt,
    verbose: bool = VerboseOpt,
):
    """Fit a network to one of the approximation benchmark targets."""
    execute(Command.APPROX, config, out, seed, None, profile, set_, verbose)


@app.command()
def report(
    out: Path = typer.Option(..., "--out", help="Directory holding rows.csv"),
    verbose: bool = VerboseOpt,
):
    """Re-aggregate an existing rows.csv and print the summary table."""
    execute(Command.REPORT, None, out, None, None, None, None, verbose)


@app.command()
def profiles():
    """List the preset profiles."""
    loader = ConfigLoader()
    table = Table(title="📋 Preset profiles")
    table.add_column("profile")
    table.add_column("command")
    table.add_column("problem / case")
    for name in loader.list_profiles():
        data = loader.load_profile(name)
        command = str(data.get("command", Command.SOLVE.value))
        if command == Command.APPROX.value:
            target = str(data.get("approx", {}).get("case", ""))
        else:
            target = str(data.get("problem", {}).get("name", ""))
        table.add_row(name, command, target)
    console.print(table)


@app.command("config-schema")
def config_schema(
    output_path: Path = typer.Option(Path("config_schema.json"), "--output", help="Where to write"),
):
    """Export the JSON schema of the experiment config."""
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w") as f:
        json.dump(ExperimentConfig.model_json_schema(), f, indent=2)
    console.print(f"✅ ExperimentConfig schema exported to {output_path}")


def main() -> None:
    app()


if __name__ == "__main__":
    main()
