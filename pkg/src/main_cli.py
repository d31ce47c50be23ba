"""
src/main_cli.py

Command-line entry point of the lab, built with Click and rich.

Commands:
- run <scenario>       run a named scenario and write results.csv, summary.json, resolved.config
- validate-config PATH parse a run config and print it fully resolved
- scenarios            list the scenarios and what they check
- docs show|export     CLI reference generated from the command tree
"""

import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.markdown import Markdown
from rich.table import Table

# Add the project root to the Python path if it's not already there.
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from src.core.errors import ConfigParseError, LabError
from src.core.scenarios import SCENARIOS, resolve_config, run_scenario
from src.core.sde_engine import EngineOptions
from src.utils.config_manager import ConfigManager
from src.utils.logger import setup_logging
from src.utils.run_config import SCENARIO_NAMES, load_config, render_config

settings = ConfigManager.get_settings()
setup_logging()
logger = logging.getLogger("ricci_lab")

console = Console()

CLI_METADATA = {
    "title": "ricci-lab CLI",
    "version": "1.0.0",
    "description": ("Numerical lab for the almost Ricci-flat space-time manifold: projected diffusions "
                    "indexed by the sphere dimension N and their limits along a Ricci flow."),
}

COMMAND_EXAMPLES = {
    "run": [
        {"description": "Validate both backgrounds against the flow equation",
         "command": "ricci-lab run ricci-validate"},
        {"description": "Torus time marginal with a custom grid and seed",
         "command": "ricci-lab run scalar-convergence --background torus --N-list 100,1000 --seed 7"},
        {"description": "Everything, from a config file",
         "command": "ricci-lab run all --config runs/full.config --out results/full"},
    ],
    "validate-config": [
        {"description": "Check a run config and print the resolved values",
         "command": "ricci-lab validate-config runs/full.config"},
    ],
    "scenarios": [
        {"description": "List the available scenarios", "command": "ricci-lab scenarios"},
    ],
    "docs show": [
        {"description": "Print this reference to the terminal", "command": "ricci-lab docs show"},
    ],
    "docs export": [
        {"description": "Write the markdown reference",
         "command": "ricci-lab docs export --format markdown -o docs/CLI_REFERENCE.md"},
    ],
}


def generate_cli_documentation(ctx, output_format='markdown'):
    """
    Build the CLI reference from the click command tree.

    Args:
        ctx: Click context of the root group
        output_format: 'markdown' or 'json'
    """
    docs = {"metadata": CLI_METADATA, "commands": {}}
    _collect_command_docs(ctx.command, [], docs["commands"])

    if output_format == 'json':
        return json.dumps(docs, indent=2, default=str)
    return _format_markdown_docs(docs)


def _collect_command_docs(group, prefix, out):
    """Document every command under group; subgroups are walked depth first."""
    for name, cmd in group.commands.items():
        path = prefix + [name]
        cmd_name = " ".join(path)
        if isinstance(cmd, click.Group):
            _collect_command_docs(cmd, path, out)
            continue
        cmd_docs = {
            "name": cmd_name,
            "description": (cmd.help or "No description available").strip(),
            "usage": f"ricci-lab {cmd_name} [OPTIONS]",
            "options": [],
            "examples": COMMAND_EXAMPLES.get(cmd_name, []),
        }
        for param in cmd.params:
            param_doc = {
                "name": param.name,
                "type": param.type.name if hasattr(param.type, 'name') else str(param.type),
                "required": param.required,
                "default": param.default if param.default is not None else "None",
                "help": getattr(param, 'help', None) or "No description",
            }
            if isinstance(param, click.Option):
                param_doc["flags"] = param.opts
                param_doc["is_flag"] = param.is_flag
            elif isinstance(param, click.Argument):
                param_doc["flags"] = [param.name]
                param_doc["is_argument"] = True
            cmd_docs["options"].append(param_doc)
        out[cmd_name] = cmd_docs


def _format_markdown_docs(docs):
    """Format documentation as Markdown."""
    md = f"# {docs['metadata']['title']}\n\n"
    md += f"**Version:** {docs['metadata']['version']}\n\n"
    md += f"{docs['metadata']['description']}\n\n"
    md += "---\n\n"
    md += "## Commands\n\n"

    for cmd_name, cmd_info in docs["commands"].items():
        md += f"### `{cmd_name}`\n\n"
        md += f"{cmd_info['description']}\n\n"
        md += f"**Usage:** `{cmd_info['usage']}`\n\n"

        if cmd_info["options"]:
            md += "**Options:**\n\n"
            md += "| Option | Type | Required | Default | Description |\n"
            md += "|--------|------|----------|---------|-------------|\n"
            for opt in cmd_info["options"]:
                flags = ', '.join(opt.get('flags', [opt['name']]))
                md += f"| `{flags}` | {opt['type']} | {opt['required']} | {opt['default']} | {opt['help']} |\n"
            md += "\n"

        if cmd_info["examples"]:
            md += "**Examples:**\n\n"
            for ex in cmd_info["examples"]:
                md += f"- {ex['description']}\n"
                md += f"  ```bash\n  {ex['command']}\n  ```\n\n"

        md += "---\n\n"

    return md


@click.group()
@click.version_option(version=CLI_METADATA["version"], prog_name="ricci-lab")
@click.pass_context
def cli(ctx):
    """
    ricci-lab: projected diffusions on the almost Ricci-flat manifold.

    \b
    Quick Start:
        ricci-lab scenarios                          # What can be run
        ricci-lab run ricci-validate                 # Flow equation checks
        ricci-lab run scalar-convergence --background torus
        ricci-lab validate-config runs/full.config   # Check a config file

    \b
    Documentation:
        ricci-lab docs export --format markdown -o docs/CLI_REFERENCE.md
        ricci-lab docs show
    """
    ctx.ensure_object(dict)


@cli.group(name="docs")
def docs_group():
    """Documentation commands for the CLI reference."""
    pass


@docs_group.command(name="show")
@click.pass_context
def show_docs(ctx):
    """
    Display the CLI reference in the terminal.

    \b
    Example:
        ricci-lab docs show
    """
    docs_md = generate_cli_documentation(ctx.parent.parent, output_format='markdown')
    console.print(Markdown(docs_md))


@docs_group.command(name="export")
@click.option('--format', 'output_format', type=click.Choice(['markdown', 'json'], case_sensitive=False),
              default='markdown', help='Output format for documentation')
@click.option('-o', '--output', type=click.Path(dir_okay=False, writable=True), default=None,
              help='Output file path (prints to stdout if not specified)')
@click.pass_context
def export_docs(ctx, output_format, output):
    """
    Export the CLI reference.

    \b
    Examples:
        ricci-lab docs export --format markdown -o docs/CLI_REFERENCE.md
        ricci-lab docs export --format json -o cli-reference.json
    """
    docs = generate_cli_documentation(ctx.parent.parent, output_format=output_format)
    if output:
        output_path = Path(output)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text(docs, encoding='utf-8')
        console.print(f"[bold green]Documentation exported to:[/bold green] {output}")
    else:
        click.echo(docs)


@cli.command(name="scenarios")
def scenarios_command():
    """List the scenarios, their default N grids and what they check."""
    table = Table(title="Scenarios", show_header=True, header_style="bold magenta")
    table.add_column("Name", style="cyan")
    table.add_column("Default N grid", style="yellow")
    table.add_column("Checks", style="green")
    for scenario in SCENARIOS.values():
        grid = ",".join(str(N) for N in scenario.default_N_list) or "-"
        table.add_row(scenario.name, grid, scenario.description)
    table.add_row("all", "per scenario", "Every scenario above, in this order")
    console.print(table)


@cli.command(name="validate-config")
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False, readable=True))
@click.option('--scenario', type=click.Choice(SCENARIO_NAMES), default=None,
              help='Scenario, when the file does not name one')
def validate_config_command(config_path: str, scenario: Optional[str]):
    """
    Parse a run config strictly and print it with every default resolved.

    \b
    Example:
        ricci-lab validate-config runs/full.config
    """
    try:
        config = resolve_config(load_config(config_path, {"scenario": scenario}))
    except ConfigParseError as e:
        console.print(f"[bold red]Invalid config:[/bold red] {e}")
        sys.exit(1)
    except LabError as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        sys.exit(1)
    console.print("[bold green]Config is valid.[/bold green]")
    click.echo(render_config(config))


def _summary_table(summary) -> Table:
    table = Table(title="Run summary", show_header=True, header_style="bold magenta")
    table.add_column("Scenario", style="cyan")
    table.add_column("Experiments", style="yellow")
    table.add_column("Runtime [s]", style="yellow")
    table.add_column("Outcome")
    for s in summary.scenarios:
        if s.error is not None:
            outcome = f"[red]error: {s.error.type}[/red]"
        else:
            outcome = "[green]pass[/green]" if s.passed else "[red]fail[/red]"
        table.add_row(s.scenario, str(len(s.experiments)), f"{s.runtime_s:.1f}", outcome)
    return table


def _failed_checks(summary):
    for s in summary.scenarios:
        for experiment in s.experiments:
            for check in experiment["checks"]:
                if not check["passed"]:
                    yield s.scenario, experiment, check
            for trend in experiment["trends"]:
                if trend["passed"] is False:
                    yield s.scenario, experiment, {"name": f"slope of {trend['quantity']}",
                                                   "value": trend["slope"],
                                                   "threshold": [trend["lo"], trend["hi"]]}


@cli.command(name="run")
@click.argument('scenario', type=click.Choice(SCENARIO_NAMES))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False, readable=True),
              default=None, help='Run-config file ([run], [flow], [mc] sections)')
@click.option('--seed', type=click.IntRange(0, (1 << 64) - 1), default=None, help='Master seed (u64)')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None, help='Output directory')
@click.option('--paths', type=int, default=None, help='Paths per ensemble')
@click.option('--step', type=float, default=None, help='Euler step h')
@click.option('--N-list', 'N_list', type=str, default=None, help='Comma-separated grid of N, e.g. 100,1000,10000')
@click.option('--background', type=click.Choice(['sphere', 'torus', 'both']), default=None,
              help='Background(s) to run on')
@click.option('--workers', type=click.IntRange(min=1), default=None,
              help='Simulation threads (results do not depend on it)')
@click.option('--no-progress', is_flag=True, default=False, help='Hide progress bars')
def run_command(scenario, config_path, seed, out_dir, paths, step, N_list, background, workers, no_progress):
    """
    Run a scenario. The exit code is 0 exactly when every acceptance check passes.

    \b
    Examples:
        ricci-lab run ricci-validate
        ricci-lab run scalar-convergence --background torus --N-list 100,1000
        ricci-lab run all --config runs/full.config --out results/full
    """
    overrides = {"scenario": scenario, "seed": seed, "out_dir": out_dir, "paths": paths, "step": step,
                 "N_list": N_list, "background": background}
    try:
        config = load_config(config_path, overrides)
    except ConfigParseError as e:
        console.print(f"[bold red]Invalid config:[/bold red] {e}")
        sys.exit(1)

    options = EngineOptions.from_settings()
    if workers is not None:
        options.workers = workers
    if no_progress:
        options.progress = False

    try:
        with console.status(f"[bold green]Running {scenario}..."):
            summary, _ = run_scenario(config, options)
    except LabError as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        logger.error("Run aborted", extra={"scenario": scenario, "error": str(e)}, exc_info=True)
        sys.exit(1)

    console.print(_summary_table(summary))
    for name, experiment, check in _failed_checks(summary):
        console.print(f"  [red]•[/red] {name} / {experiment['experiment']} ({experiment['background']}): "
                      f"{check['name']} value={check.get('value')} threshold={check.get('threshold')}")
    for s in summary.scenarios:
        if s.error is not None:
            console.print(f"  [red]•[/red] {s.scenario}: {s.error.type}: {s.error.message}")
    resolved = resolve_config(config)
    console.print(f"Results written to [bold]{resolved.out_dir}[/bold]")
    sys.exit(0 if summary.passed else 1)


def main():
    """
    Main function to run the CLI application.
    """
    try:
        cli()
    except Exception as e:
        console.print(f"[bold red]Unexpected error:[/bold red] {str(e)}")
        logger.critical(f"CLI crashed: {e}", exc_info=True)
        sys.exit(1)


if __name__ == "__main__":
    main()

# src/main_cli.py
