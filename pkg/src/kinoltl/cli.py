"""``kinoltl`` command line: plan, baseline, compare, scenarios, validate.

Exit codes: 0 success, 2 no path found, 3 invalid scenario.
"""
from __future__ import annotations

import logging
import sys
import time
from pathlib import Path

import click

from . import bench
from .planner import GEOMETRIC, KINODYNAMIC, WorkspaceError
from .scenario import ScenarioError, builtin_scenarios, get_builtin, resolve_scenario

EXIT_NO_PATH = 2
EXIT_INVALID = 3


def _load(name: str):
    try:
        return resolve_scenario(name)
    except (ScenarioError, OSError) as exc:
        click.echo(f"invalid scenario: {exc}", err=True)
        sys.exit(EXIT_INVALID)


def _stamped(out_dir: str, label: str) -> Path:
    d = Path(out_dir) / f"{time.strftime('%Y%m%d-%H%M%S')}-{label}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _summary(report: bench.RunReport, files) -> None:
    effort = ", ".join(f"{v:.4g}" for v in report.max_control_effort)
    click.echo(f"{report.scenario} [{report.mode}] seed {report.seed}: "
               f"found={report.found} satisfied={report.satisfied} "
               f"cost={report.total_cost:.4g} robustness={report.root_robustness:.4g}")
    click.echo(f"  max |u| = [{effort}] (bound {report.input_bound:g}), "
               f"{report.iterations} iterations, {report.nodes} nodes, {report.wall_time:.1f}s")
    if report.visited:
        click.echo(f"  visited: {', '.join(report.visited)}")
    for kind, path in sorted(files.items()):
        click.echo(f"  {kind}: {path}")


def _plan_job(scenario_name, seed, iters, time_budget, out_dir, mode):
    scen = _load(scenario_name)
    d = _stamped(out_dir, f"{scen.name}-{mode}")
    try:
        out = bench.run(scen, mode, seed, iters, time_budget, d)
    except WorkspaceError as exc:
        click.echo(f"invalid scenario: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    _summary(out.report, out.files)
    if not out.report.found:
        click.echo("no path to the goal within the budget", err=True)
        sys.exit(EXIT_NO_PATH)


_scenario_opt = click.option("--scenario", "scenario_name", required=True,
                             help="Built-in name or path to a scenario TOML file.")
_seed_opt = click.option("--seed", type=int, default=None, help="RNG seed (default: scenario's).")
_iters_opt = click.option("--iters", type=int, default=None, help="Iteration budget.")
_time_opt = click.option("--time-budget", type=float, default=None, help="Wall-time budget in seconds.")
_out_opt = click.option("--out-dir", default="runs", show_default=True,
                        help="Parent of the timestamped output directory.")


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (repeat for debug output).")
def main(verbose: int) -> None:
    """Kinodynamic RRT* planning under temporal-logic tasks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@_scenario_opt
@_seed_opt
@_iters_opt
@_time_opt
@_out_opt
@click.option("--mode", type=click.Choice([KINODYNAMIC, GEOMETRIC]), default=KINODYNAMIC,
              show_default=True)
def plan(scenario_name, seed, iters, time_budget, out_dir, mode):
    """Plan a trajectory and write CSV, JSON report and SVG."""
    _plan_job(scenario_name, seed, iters, time_budget, out_dir, mode)


@main.command()
@_scenario_opt
@_seed_opt
@_iters_opt
@_time_opt
@_out_opt
def baseline(scenario_name, seed, iters, time_budget, out_dir):
    """Straight-edge planner ignoring input bounds, with implied controls."""
    _plan_job(scenario_name, seed, iters, time_budget, out_dir, GEOMETRIC)


@main.command()
@click.option("--scenario", "scenario_names", multiple=True,
              help="Scenario to include (repeatable; default: psi1, psi2, psi3).")
@click.option("--seeds", type=int, default=3, show_default=True, help="Seeds 0..N-1 per scenario.")
@click.option("--seed", type=int, default=0, show_default=True, help="First seed.")
@_iters_opt
@_time_opt
@_out_opt
def compare(scenario_names, seeds, seed, iters, time_budget, out_dir):
    """Table of max control effort and wall time for both modes."""
    names = scenario_names or ("psi1", "psi2", "psi3")
    scens = [_load(n) for n in names]
    d = _stamped(out_dir, "compare")
    try:
        comp = bench.compare(scens, range(seed, seed + seeds), iters, time_budget, d)
    except bench.BoundViolation as exc:
        click.echo((d / "comparison.txt").read_text())
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(comp.table())
    click.echo(f"written to {d}")


@main.command()
def scenarios():
    """List built-in scenarios."""
    for name in builtin_scenarios():
        s = get_builtin(name)
        click.echo(f"{name:16s} {s.model.name:22s} {s.formula_text}")


@main.command()
@click.argument("path")
def validate(path):
    """Check a scenario file (or built-in name) and print its formula."""
    scen = _load(path)
    click.echo(f"{scen.name}: ok")
    click.echo(f"  formula: {scen.formula()}")
    click.echo(f"  regions: {', '.join(r.name for r in scen.regions)}")


if __name__ == "__main__":  # pragma: no cover
    main()
