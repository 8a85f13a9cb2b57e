import sys, os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import json
import logging
import platform

import click
import numpy as np
import pandas as pd
import scipy

from cli import pipeline
from cli.scenario import load_scenario, with_overrides
from utils.errors import ToolkitError
from utils.logs import setup_logging
from utils.parallel import resolve_threads

logger = logging.getLogger(__name__)

EXIT_UNKNOWN_COMMAND = 64
EXIT_NO_INPUT = 66
MANIFEST = "manifest.json"


class UnknownCommandError(click.UsageError):
    exit_code = EXIT_UNKNOWN_COMMAND


class ToolkitGroup(click.Group):
    def resolve_command(self, ctx, args):
        name = args[0] if args else None
        if name is not None and not name.startswith("-") and self.get_command(ctx, name) is None:
            raise UnknownCommandError(f"unknown subcommand '{name}'", ctx=ctx)
        return super().resolve_command(ctx, args)


COMMON_OPTIONS = [
    click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
                 help="Scenario INI file."),
    click.option("--out", "out_dir", default=None, help="Output directory (overrides [output] dir)."),
    click.option("--threads", type=int, default=None, help="Worker threads (env TUNNELSHOCK_THREADS)."),
    click.option("--seed", type=int, default=None, help="Seed for the verification bumps."),
    click.option("--log-level", default=None, help="Logging level (env TUNNELSHOCK_LOG_LEVEL)."),
]


def common_options(func):
    for option in reversed(COMMON_OPTIONS):
        func = option(func)
    return func


def write_manifest(command, scenario, threads, outputs, extra=None):
    manifest = {
        "command": command,
        "scenario": scenario.echo(),
        "seed": scenario.seed,
        "threads": threads,
        "outputs": [os.path.basename(p) for p in outputs],
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "pandas": pd.__version__},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(scenario.out_dir, MANIFEST)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def run_command(command, scenario_path, out_dir, threads, seed, log_level, step, extra=None):
    setup_logging(log_level)
    try:
        scenario = with_overrides(load_scenario(scenario_path), out_dir, seed)
    except FileNotFoundError:
        click.echo(f"❌ Scenario file not found: {scenario_path}", err=True)
        sys.exit(EXIT_NO_INPUT)
    except ToolkitError as err:
        click.echo(f"❌ {err}", err=True)
        sys.exit(err.exit_code)

    threads = resolve_threads(threads)
    click.echo(f"🚀 {command} on {scenario.name} ({threads} thread(s))")
    try:
        outputs = step(scenario, scenario.out_dir, threads)
    except ToolkitError as err:
        logger.debug("%s failed", command, exc_info=True)
        click.echo(f"❌ {type(err).__name__}: {err}", err=True)
        sys.exit(err.exit_code)
    outputs.append(write_manifest(command, scenario, threads, outputs, extra))
    for path in outputs:
        click.echo(f"✅ Saved {os.path.basename(path)} to {scenario.out_dir}")


@click.group(cls=ToolkitGroup)
def tunnelshock():
    """Tunnel asymptotics and δ-shock toolkit."""


@tunnelshock.command()
@common_options
def evolve(scenario_path, out_dir, threads, seed, log_level):
    """Characteristics fan, essential solution and smooth density."""
    run_command("evolve", scenario_path, out_dir, threads, seed, log_level, pipeline.run_evolve)


@tunnelshock.command()
@common_options
def singularity(scenario_path, out_dir, threads, seed, log_level):
    """Fold births (t*, x*, x0*)."""
    run_command("singularity", scenario_path, out_dir, threads, seed, log_level, pipeline.run_singularity)


@tunnelshock.command()
@common_options
def shock(scenario_path, out_dir, threads, seed, log_level):
    """Shock tracking, amplitudes and merges."""
    run_command("shock", scenario_path, out_dir, threads, seed, log_level, pipeline.run_shock)


@tunnelshock.command()
@common_options
def verify(scenario_path, out_dir, threads, seed, log_level):
    """Integral-identity suite plus HJ and transport residuals."""
    run_command("verify", scenario_path, out_dir, threads, seed, log_level, pipeline.run_verify)


@tunnelshock.command()
@click.argument("kind", type=click.Choice(pipeline.ORACLES))
@common_options
def oracle(kind, scenario_path, out_dir, threads, seed, log_level):
    """Independent solvers: hopf-lax, godunov, kf-lattice, tunnel-compare."""
    run_command("oracle", scenario_path, out_dir, threads, seed, log_level,
                lambda s, out, n: pipeline.run_oracle(s, kind, out, n), {"oracle": kind})


@tunnelshock.command("limit-study")
@common_options
def limit_study(scenario_path, out_dir, threads, seed, log_level):
    """ε → 0 study of the regularized flow (surgery for inhomogeneous symbols)."""
    run_command("limit-study", scenario_path, out_dir, threads, seed, log_level, pipeline.run_limit_study)


if __name__ == "__main__":
    tunnelshock()
