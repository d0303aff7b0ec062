"""Planning jobs, artifact export and kinodynamic-vs-baseline comparison."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .logic import Formula, trace_robustness
from .planner import GEOMETRIC, KINODYNAMIC, PlanResult, Planner
from .scenario import Scenario

__all__ = [
    "REPORT_SCHEMA_VERSION",
    "RunReport",
    "RunOutput",
    "BoundViolation",
    "ComparisonCell",
    "Comparison",
    "run",
    "run_baseline",
    "compare",
    "trajectory_csv",
    "read_trajectory_csv",
    "render_svg",
    "visited_regions",
]

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


class BoundViolation(AssertionError):
    """A kinodynamic result exceeded its input bound."""


@dataclass
class RunReport:
    scenario: str
    mode: str
    seed: int
    found: bool
    satisfied: bool
    total_cost: float
    root_robustness: float
    max_control_effort: list[float]
    input_bound: float
    wall_time: float
    iterations: int
    nodes: int
    goal_connections: int
    rejected_edges: int
    duration: float
    visited: list[str] = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    @property
    def peak_effort(self) -> float:
        return max(self.max_control_effort, default=0.0)

    @property
    def exceeds_input_bound(self) -> bool:
        return self.peak_effort > self.input_bound

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exceeds_input_bound"] = self.exceeds_input_bound
        for k in ("total_cost", "root_robustness"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d.pop("exceeds_input_bound", None)
        if d.get("total_cost") is None:
            d["total_cost"] = math.inf
        if d.get("root_robustness") is None:
            d["root_robustness"] = -math.inf
        return cls(**d)


@dataclass
class RunOutput:
    report: RunReport
    result: PlanResult
    files: dict[str, Path] = field(default_factory=dict)


def visited_regions(scenario: Scenario, states) -> list[str]:
    """Targets whose eventually-slot is positive along the path."""
    P = np.asarray(states)[:, : scenario.dim]
    out = []
    for r in scenario.targets:
        f = Formula.atom(r.predicate()).eventually()
        if trace_robustness(f, P, scenario.rho_max) > 0:
            out.append(r.name)
    return out


def _report(scenario: Scenario, res: PlanResult, seed: int) -> RunReport:
    model = scenario.build_model()
    return RunReport(
        scenario=scenario.name, mode=res.mode, seed=seed,
        found=res.found, satisfied=bool(res.satisfied),
        total_cost=float(res.total_cost), root_robustness=float(res.root_robustness),
        max_control_effort=[float(v) for v in res.max_control_effort],
        input_bound=model.input_bound, wall_time=res.stats.wall_time,
        iterations=res.stats.iterations, nodes=res.stats.nodes,
        goal_connections=res.stats.goal_connections, rejected_edges=res.stats.rejected_edges,
        duration=res.duration,
        visited=visited_regions(scenario, res.states) if res.found else [],
    )


# -- CSV ---------------------------------------------------------------------


def trajectory_csv(res: PlanResult) -> str:
    """``t, x1..xn, u1..um`` with a header row, full float precision."""
    n = res.states.shape[1]
    m = res.controls.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)])
    for t, x, u in zip(res.times, res.states, res.controls):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u])
    return buf.getvalue()


def read_trajectory_csv(path_or_text) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`trajectory_csv`: ``(times, states, controls)``."""
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    n = sum(h.startswith("x") for h in header)
    return data[:, 0], data[:, 1:1 + n], data[:, 1 + n:]


# -- SVG -----------------------------------------------------------------------

_SVG_SIZE = 600
_MARGIN = 30


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(scenario: Scenario, res: PlanResult | None, tree_stride: int = 4) -> str:
    """Top-down (x, y) view of the workspace, regions, tree and chosen path."""
    lo = np.asarray(scenario.workspace_lower[:2], float)
    hi = np.asarray(scenario.workspace_upper[:2], float)
    scale = (_SVG_SIZE - 2 * _MARGIN) / float(np.max(hi - lo))
    w = _fmt(2 * _MARGIN + scale * (hi[0] - lo[0]))
    h = _fmt(2 * _MARGIN + scale * (hi[1] - lo[1]))

    def px(p):
        return _MARGIN + scale * (p[0] - lo[0]), _MARGIN + scale * (hi[1] - p[1])

    def poly(P):
        return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in (px(p) for p in P))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
           f'viewBox="0 0 {w} {h}">',
           f'<title>{scenario.name}</title>',
           '<rect width="100%" height="100%" fill="white"/>']
    x0, y0 = px((lo[0], hi[1]))
    out.append(f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(scale * (hi[0] - lo[0]))}" '
               f'height="{_fmt(scale * (hi[1] - lo[1]))}" fill="none" stroke="black"/>')
    for r in scenario.regions:
        rx, ry = px((r.lower[0], r.upper[1]))
        rw, rh = scale * (r.upper[0] - r.lower[0]), scale * (r.upper[1] - r.lower[1])
        style = ('fill="#555" fill-opacity="0.6" stroke="black"' if r.role == "obstacle"
                 else 'fill="#3a7" fill-opacity="0.25" stroke="#3a7"')
        out.append(f'<rect x="{_fmt(rx)}" y="{_fmt(ry)}" width="{_fmt(rw)}" height="{_fmt(rh)}" {style}/>')
        cx, cy = px(r.center[:2])
        out.append(f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" font-size="12" text-anchor="middle" '
                   f'dominant-baseline="middle">{r.name}</text>')
    if res is not None and res.tree is not None:
        out.append('<g stroke="#89a" stroke-width="0.5" fill="none">')
        for node in res.tree.nodes[1:]:
            P = node.edge.states[:, :2]
            P = np.vstack([P[::tree_stride], P[-1:]])
            out.append(f'<polyline points="{poly(P)}"/>')
        out.append('</g>')
    if res is not None and res.found:
        colour = "#c22" if res.satisfied else "#e90"
        out.append(f'<polyline points="{poly(res.states[:, :2])}" fill="none" '
                   f'stroke="{colour}" stroke-width="2.5"/>')
    for label, p, fill in (("start", scenario.start, "#24c"), ("goal", scenario.goal, "#c22")):
        cx, cy = px(p[:2])
        out.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="5" fill="{fill}"><title>{label}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- jobs --------------------------------------------------------------------


def _execute(scenario: Scenario, mode: str, seed: int | None, iterations: int | None,
             time_budget: float | None, out_dir, **planner_kwargs) -> RunOutput:
    seed = scenario.seed if seed is None else seed
    res = Planner(scenario, mode=mode, seed=seed, iterations=iterations,
                  time_budget=time_budget, **planner_kwargs).run()
    report = _report(scenario, res, seed)
    out = RunOutput(report, res)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        stem = f"{scenario.name}-{mode}-seed{seed}"
        files = {"report": d / f"{stem}.json", "svg": d / f"{stem}.svg"}
        files["report"].write_text(report.to_json())
        files["svg"].write_text(render_svg(scenario, res))
        if res.found:
            files["csv"] = d / f"{stem}.csv"
            files["csv"].write_text(trajectory_csv(res))
        out.files = files
    return out


def run(scenario: Scenario, mode: str = KINODYNAMIC, seed: int | None = None,
        iterations: int | None = None, time_budget: float | None = None, out_dir=None,
        **planner_kwargs) -> RunOutput:
    """Plan once and, when ``out_dir`` is given, write CSV, JSON report and SVG."""
    return _execute(scenario, mode, seed, iterations, time_budget, out_dir, **planner_kwargs)


def run_baseline(scenario: Scenario, seed: int | None = None, iterations: int | None = None,
                 time_budget: float | None = None, out_dir=None, **planner_kwargs) -> RunOutput:
    """Straight-edge planner at the model's nominal speed, ignoring input bounds."""
    return _execute(scenario, GEOMETRIC, seed, iterations, time_budget, out_dir, **planner_kwargs)


# -- comparison ----------------------------------------------------------------


@dataclass
class ComparisonCell:
    scenario: str
    mode: str
    input_bound: float
    reports: list[RunReport] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def _found(self):
        return [r for r in self.reports if r.found]

    @property
    def median_effort(self) -> float:
        found = self._found()
        return statistics.median(r.peak_effort for r in found) if found else math.nan

    @property
    def median_time(self) -> float:
        found = self._found()
        return statistics.median(r.wall_time for r in found) if found else math.nan

    @property
    def max_effort(self) -> float:
        return max((r.peak_effort for r in self._found()), default=math.nan)

    @property
    def exceeds_bound(self) -> bool:
        return self.median_effort > self.input_bound

    @property
    def satisfied_runs(self) -> int:
        return sum(r.satisfied for r in self.reports)


@dataclass
class Comparison:
    scenarios: list[str]
    seeds: list[int]
    cells: dict[tuple[str, str], ComparisonCell]

    MODES = (KINODYNAMIC, GEOMETRIC)

    def kinodynamic_violations(self) -> list[str]:
        out = []
        for (scen, mode), cell in sorted(self.cells.items()):
            if mode != KINODYNAMIC:
                continue
            for r in cell.reports:
                if r.found and r.exceeds_input_bound:
                    out.append(f"{scen} seed {r.seed}: {r.peak_effort:.6g} > {r.input_bound:g}")
        return out

    def table(self) -> str:
        """Rows are modes, columns scenarios; cells show median effort and time."""
        head = ["mode"] + self.scenarios
        rows = []
        for mode in self.MODES:
            row = [mode]
            for scen in self.scenarios:
                c = self.cells[(scen, mode)]
                if not c._found():
                    row.append("failed" if c.failures else "no path")
                    continue
                flag = " !" if c.exceeds_bound else ""
                row.append(f"{c.median_effort:.3f}{flag} / {c.median_time:.1f}s")
            rows.append(row)
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        lines = ["  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip() for r in [head] + rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append("cells: median max |u| / median wall time; '!' marks effort above the input bound")
        failures = [f"{s}/{m}: {f}" for (s, m), c in sorted(self.cells.items()) for f in c.failures]
        lines += [f"failure {f}" for f in failures]
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "mode", "median_max_effort", "max_effort", "input_bound",
                    "exceeds_bound", "median_wall_time", "runs", "satisfied_runs", "failures"])
        for (scen, mode), c in sorted(self.cells.items()):
            w.writerow([scen, mode, f"{c.median_effort:.6g}", f"{c.max_effort:.6g}",
                        f"{c.input_bound:g}", str(c.exceeds_bound).lower(), f"{c.median_time:.3f}",
                        len(c.reports), c.satisfied_runs, "; ".join(c.failures)])
        return buf.getvalue()


def compare(scenarios: list[Scenario], seeds, iterations: int | None = None,
            time_budget: float | None = None, out_dir=None, check: bool = True) -> Comparison:
    """Run both modes for every scenario and seed and aggregate medians.

    A failing job is recorded in its cell and the table is still built.
    With ``check`` a kinodynamic result above its input bound raises
    :class:`BoundViolation` once the table has been written.
    """
    if not scenarios:
        raise ValueError("compare needs at least one scenario")
    seeds = list(seeds)
    cells: dict[tuple[str, str], ComparisonCell] = {}
    for scen in scenarios:
        bound = scen.build_model().input_bound
        for mode in Comparison.MODES:
            cell = cells[(scen.name, mode)] = ComparisonCell(scen.name, mode, bound)
            for seed in seeds:
                sub = None if out_dir is None else Path(out_dir) / "runs"
                try:
                    out = _execute(scen, mode, seed, iterations, time_budget, sub)
                except Exception as exc:  # noqa: BLE001  reported per cell
                    log.exception("%s/%s seed %d failed", scen.name, mode, seed)
                    cell.failures.append(f"seed {seed}: {type(exc).__name__}: {exc}")
                    continue
                cell.reports.append(out.report)
                if not out.report.found:
                    cell.failures.append(f"seed {seed}: no path")
    comp = Comparison([s.name for s in scenarios], seeds, cells)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "comparison.txt").write_text(comp.table())
        (d / "comparison.csv").write_text(comp.csv())
    if check:
        bad = comp.kinodynamic_violations()
        if bad:
            raise BoundViolation("kinodynamic effort above input bound: " + "; ".join(bad))
    return comp
