"""Command line entry point: validate, run, solve, analyze, report, serve-mock."""

import logging
from enum import IntEnum
from pathlib import Path
from typing import Annotated, List, Optional

import typer
import uvicorn
from rich import box
from rich.console import Console
from rich.table import Table

from config import config
from equilibrium import equilibrium_report
from errors import (
    ConfigError,
    GameValidationError,
    HarnessError,
    LanguagePackError,
    StaleResultsError,
)
from metrics import analyze_records, write_metrics
from mock_server import create_app
from orchestrator import (
    load_experiment_config,
    load_results,
    run_experiment,
    validate_experiment,
)
from prompting import load_language_pack
from report import write_report
from schemas import RunStatus

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="harness",
    help="Run LLM game-theory experiments and score their behavioral consistency",
    add_completion=False,
    rich_markup_mode="rich",
)

console = Console()


class ExitStatus(IntEnum):
    OK = 0
    VALIDATION_ERROR = 1
    RUNTIME_ERROR = 2
    PARTIAL = 3


def _exit(status: ExitStatus) -> None:
    raise typer.Exit(code=int(status))


def _print_findings(title: str, findings: List[str]) -> None:
    console.print(f"[bold red]{title}[/bold red]")
    for finding in findings:
        console.print(f"  • {finding}")


def _fail_config(e: ConfigError) -> None:
    _print_findings(str(e), e.findings)
    _exit(ExitStatus.VALIDATION_ERROR)


def _format(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4g}"


@app.command()
def validate(
    config_path: Annotated[Path, typer.Argument(help="Experiment config JSON")],
    pack: Annotated[
        Optional[Path], typer.Option("--pack", help="Language pack directory")
    ] = None,
):
    """Check an experiment config, its games and its language pack"""
    try:
        cfg = load_experiment_config(config_path)
    except ConfigError as e:
        _fail_config(e)

    pack_dir = pack or cfg.pack or config.PACK_DIR
    try:
        language_pack = load_language_pack(pack_dir)
    except LanguagePackError as e:
        _print_findings(f"Invalid language pack {pack_dir}", [str(e)])
        _exit(ExitStatus.VALIDATION_ERROR)

    findings = validate_experiment(cfg, language_pack)
    if findings:
        _print_findings(f"{len(findings)} problems in {config_path}", findings)
        _exit(ExitStatus.VALIDATION_ERROR)
    console.print(
        f"[bold green]OK[/bold green] {config_path}: {len(cfg.games)} games, "
        f"{len(cfg.languages)} languages, pack {pack_dir}"
    )


@app.command()
def run(
    config_path: Annotated[Path, typer.Argument(help="Experiment config JSON")],
    out: Annotated[
        Optional[Path], typer.Option("--out", help="Results directory")
    ] = None,
    mock: Annotated[
        bool, typer.Option("--mock", help="Answer every provider with its mock policy")
    ] = False,
    seed: Annotated[
        Optional[int], typer.Option("--seed", "-s", help="Master seed")
    ] = None,
    parallelism: Annotated[
        Optional[int], typer.Option("--parallelism", min=1, help="Concurrent games")
    ] = None,
    pack: Annotated[
        Optional[Path], typer.Option("--pack", help="Language pack directory")
    ] = None,
):
    """Play every game instance of an experiment"""
    try:
        cfg = load_experiment_config(config_path)
        language_pack = load_language_pack(pack) if pack else None
        manifest = run_experiment(
            cfg,
            out_dir=out,
            mock=mock,
            seed=seed,
            parallelism=parallelism,
            pack=language_pack,
        )
    except ConfigError as e:
        _fail_config(e)
    except (StaleResultsError, LanguagePackError) as e:
        _print_findings("Cannot run experiment", [str(e)])
        _exit(ExitStatus.VALIDATION_ERROR)
    except HarnessError as e:
        _print_findings("Experiment failed", [str(e)])
        _exit(ExitStatus.RUNTIME_ERROR)

    table = Table(title=f"Experiment {manifest.experiment_id}", box=box.ROUNDED)
    table.add_column("Status", style="cyan")
    table.add_column("Instances", justify="right")
    for status, count in manifest.counts.items():
        table.add_row(status, str(count))
    console.print(table)
    console.print(
        f"{manifest.decisions} decisions, {manifest.rounds_completed} rounds, "
        f"{manifest.distinct_games_per_model} distinct games per model"
    )
    if manifest.counts.get(RunStatus.COMPLETE.value, 0) != manifest.instances:
        _exit(ExitStatus.PARTIAL)


@app.command()
def solve(
    config_path: Annotated[Path, typer.Argument(help="Experiment config JSON")],
    game_id: Annotated[str, typer.Argument(help="Game id within the config")],
    as_json: Annotated[
        bool, typer.Option("--json", help="Print the report as JSON")
    ] = False,
):
    """Compute equilibria, dominance and the zero-sum value of one game"""
    try:
        cfg = load_experiment_config(config_path)
        game = cfg.game(game_id)
        report = equilibrium_report(game)
    except ConfigError as e:
        _fail_config(e)
    except KeyError:
        _print_findings("Unknown game", [f"no game {game_id!r} in {config_path}"])
        _exit(ExitStatus.VALIDATION_ERROR)
    except GameValidationError as e:
        _print_findings(f"Invalid game {game_id}", e.violations)
        _exit(ExitStatus.VALIDATION_ERROR)

    if as_json:
        typer.echo(report.model_dump_json(indent=2))
        return

    def profile(pair) -> str:
        return f"({pair[0].label}, {pair[1].label})"

    table = Table(title=f"Game {game_id} ({report.objective.value})", box=box.ROUNDED)
    table.add_column("Property", style="cyan")
    table.add_column("Value")
    table.add_row(
        "Pure equilibria",
        ", ".join(profile(p) for p in report.pure_equilibria) or "none",
    )
    if report.mixed_equilibrium:
        mixed = report.mixed_equilibrium
        table.add_row(
            "Mixed equilibrium",
            f"P(first) = ({mixed.p1_prob_strategy0:.6g}, "
            f"{mixed.p2_prob_strategy0:.6g})",
        )
        p1, p2 = report.mixed_payoffs
        table.add_row("Mixed payoffs", f"({p1:.6g}, {p2:.6g})")
    else:
        table.add_row("Mixed equilibrium", report.mixed_note or "none")
    table.add_row(
        "Dominant strategies",
        f"{report.dominant_p1.label if report.dominant_p1 else '-'} / "
        f"{report.dominant_p2.label if report.dominant_p2 else '-'}",
    )
    table.add_row("Zero-sum value", _format(report.zero_sum_value))
    pd_ordering = "yes" if report.pd_ordering_ok else "no"
    table.add_row("Prisoner's dilemma ordering", pd_ordering)
    console.print(table)


@app.command()
def analyze(
    results_dir: Annotated[Path, typer.Argument(help="Results directory")],
    iv_per_scenario: Annotated[
        bool,
        typer.Option(
            "--iv-per-scenario",
            help="Mean over scenarios of the variance across repetitions",
        ),
    ] = False,
    selector: Annotated[
        Optional[str],
        typer.Option("--selector", help="Outcome per round: mean, agent1 or agent2"),
    ] = None,
):
    """Compute IV, CI and VR per model and write metrics.json"""
    if selector not in (None, "mean", "agent1", "agent2"):
        _print_findings("Invalid option", [f"unknown selector {selector!r}"])
        _exit(ExitStatus.VALIDATION_ERROR)
    try:
        cfg, records = load_results(results_dir)
        reports = analyze_records(cfg, records, selector, iv_per_scenario)
    except ConfigError as e:
        _fail_config(e)
    except HarnessError as e:
        _print_findings("Cannot analyze results", [str(e)])
        _exit(ExitStatus.VALIDATION_ERROR)

    write_metrics(reports, results_dir / "metrics.json")
    for report in reports:
        table = Table(
            title=f"{report.game_id} (selector {report.selector})", box=box.ROUNDED
        )
        table.add_column("Model", style="cyan")
        for metric in ("IV", "CI", "VR"):
            table.add_column(f"{metric} raw", justify="right")
            table.add_column(f"{metric} norm", justify="right")
        for model_id, raw in report.raw.items():
            normalized = report.normalized[model_id]
            cells = []
            for metric in ("IV", "CI", "VR"):
                cells += [_format(raw.get(metric)), _format(normalized.get(metric))]
            table.add_row(model_id, *cells)
        console.print(table)
    console.print(f"Wrote {results_dir / 'metrics.json'}")


@app.command()
def report(
    results_dir: Annotated[Path, typer.Argument(help="Results directory")],
    out: Annotated[
        Optional[Path], typer.Option("--out", help="Directory for the CSV files")
    ] = None,
):
    """Write boxplot.csv, rounds.csv and radar.csv"""
    try:
        paths = write_report(results_dir, out)
    except ConfigError as e:
        _fail_config(e)
    except HarnessError as e:
        _print_findings("Cannot build report", [str(e)])
        _exit(ExitStatus.VALIDATION_ERROR)
    for path in paths:
        console.print(f"Wrote {path}")


@app.command("serve-mock")
def serve_mock(
    port: Annotated[int, typer.Option("--port", help="Listen port")] = config.PORT,
    host: Annotated[str, typer.Option("--host", help="Bind address")] = config.HOST,
    default_reply: Annotated[
        Optional[str], typer.Option("--reply", help="Reply to every request")
    ] = None,
):
    """Serve an OpenAI-compatible mock chat-completion endpoint"""
    logger.info(f"Starting mock provider on {host}:{port}")
    uvicorn.run(create_app(default_reply=default_reply), host=host, port=port)


if __name__ == "__main__":
    app()
