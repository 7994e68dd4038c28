#!/usr/bin/env python3
"""Main CLI interface for sdebounds."""

import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import numpy as np
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn

from . import __version__
from .artifacts import (
    run_header,
    write_bounds,
    write_dp_solution,
    write_failure,
    write_json,
    write_manifest,
    write_samples,
    write_sandwich,
)
from .bounds_core import alpha_d_lower, beta_d_upper, bounds_grid
from .config import Settings
from .control_dp import dp_convergence_check, dp_policy_is_bangbang, dp_solve
from .density_mc import attainment_check, sandwich_check
from .drift_parser import DriftParser
from .exceptions import SdeBoundsError
from .models import (
    BoundsQuery,
    DPGrid,
    Objective,
    RunManifest,
    SimConfig,
    WorstKind,
)
from .sde_lab import simulate, simulate_square_radius, simulate_worst

# Load environment variables
load_dotenv()

console = Console()
err_console = Console(stderr=True)

logger = logging.getLogger("sdebounds")

FIGURE_TIMES = (0.25, 0.5, 0.75, 1.0)
FIGURE_DRIFTS = (("lower", "worst-plus@0.25"), ("upper", "worst-minus@1.0"))


def _setup_logging(level: str) -> None:
    root = logging.getLogger("sdebounds")
    root.handlers.clear()
    root.addHandler(RichHandler(console=err_console, show_path=False))
    root.setLevel(level)


def _parse_range(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise click.BadParameter(f"Expected LO:HI, got '{text}'")
    if not hi > lo:
        raise click.BadParameter("Range must satisfy LO < HI")
    return lo, hi


def _parse_point(text: str, d: int) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"Expected comma separated numbers, got '{text}'")
    if len(values) == 1 and d > 1:
        values = values * d
    if len(values) != d:
        raise click.BadParameter(f"Start point needs {d} coordinates")
    return values


def _slug(text: str) -> str:
    keep = [c if c.isalnum() or c in ".-" else "_" for c in text]
    return "".join(keep).strip("_") or "drift"


def _out_dir(ctx, out_dir: Optional[str]) -> Path:
    path = Path(out_dir or ctx.obj["settings"].output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(
    name: str,
    out_dir: Path,
    parameters: Dict[str, Any],
    seed: int,
    outputs: List[Path],
    started: float,
) -> None:
    manifest = RunManifest(
        subcommand=name,
        parameters=parameters,
        seed=seed,
        version=__version__,
        wall_time=time.perf_counter() - started,
        outputs=sorted(str(p) for p in outputs),
    )
    path = write_manifest(out_dir, manifest)
    logger.debug("%s finished in %.2fs; manifest at %s", name, manifest.wall_time, path)


def _fail(name: str, out_dir: Path, error: BaseException, verbose: bool) -> None:
    write_failure(out_dir, name, error)
    err_console.print(f"\n[red]Error:[/red] {error}")
    if verbose and not isinstance(error, SdeBoundsError):
        import traceback

        err_console.print(traceback.format_exc(), style="dim")
    sys.exit(1)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")
@click.option("--config-file", type=click.Path(exists=True), help="Path to config file")
@click.option("--threads", type=int, help="Worker threads for simulation")
@click.option("--seed", type=int, help="Override the random seed")
@click.version_option(__version__, prog_name="sdb")
@click.pass_context
def cli(
    ctx,
    verbose: bool,
    config_file: Optional[str],
    threads: Optional[int],
    seed: Optional[int],
):
    """sdebounds - optimal density bounds for SDEs with bounded drift."""
    ctx.ensure_object(dict)
    try:
        settings = Settings.load(config_file)
        overrides = {}
        if threads is not None:
            overrides["threads"] = threads
        if seed is not None:
            overrides["seed"] = seed
        if verbose:
            overrides["log_level"] = "DEBUG"
        if overrides:
            settings = Settings(**{**settings.model_dump(), **overrides})
    except SdeBoundsError as e:
        err_console.print(f"[red]Configuration error:[/red] {e}")
        sys.exit(1)
    except ValueError as e:
        raise click.BadParameter(str(e))

    ctx.obj["verbose"] = verbose
    ctx.obj["settings"] = settings
    _setup_logging(settings.log_level)

    if verbose:
        console.print("[green]✓[/green] Loaded configuration", style="dim")


@cli.command()
@click.option("--t", "t", type=float, default=1.0, show_default=True, help="Time")
@click.option("--C", "C", type=float, default=1.0, show_default=True, help="Drift bound")
@click.option("--d", "d", type=int, default=1, show_default=True, help="Dimension")
@click.option("--range", "x_range", default="-3:3", show_default=True, help="LO:HI")
@click.option("--n", "n_points", type=int, default=121, show_default=True)
@click.option("--out", type=click.Path(), help="Output CSV (default OUTPUT_DIR/bounds.csv)")
@click.pass_context
def bounds(ctx, t: float, C: float, d: int, x_range: str, n_points: int, out: Optional[str]):
    """Tabulate the lower and upper density bounds.

    For d > 1 the point is ``(x, 0, ..., 0)`` and the columns hold the
    product bounds.
    """
    settings = ctx.obj["settings"]
    started = time.perf_counter()
    lo, hi = _parse_range(x_range)
    if n_points < 2:
        raise click.BadParameter("--n must be at least 2")
    out_path = Path(out) if out else _out_dir(ctx, None) / "bounds.csv"
    out_dir = out_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    parameters = {"t": t, "C": C, "d": d, "range": [lo, hi], "n": n_points}

    try:
        cfg = settings.quadrature()
        BoundsQuery(d=d, t=t, C=C, x=[0.0] * d)
        xs = np.round(np.linspace(lo, hi, n_points), 12)
        if d == 1:
            lower, upper = bounds_grid(t, C, xs, cfg)
        else:
            points = [BoundsQuery(d=d, t=t, C=C, x=[x] + [0.0] * (d - 1)) for x in xs]
            lower = [alpha_d_lower(q, cfg) for q in points]
            upper = [beta_d_upper(q, cfg) for q in points]
        path = write_bounds(
            out_path, run_header("bounds", parameters, settings.seed), xs, lower, upper, d
        )
    except (SdeBoundsError, ValueError) as e:
        _fail("bounds", out_dir, e, ctx.obj["verbose"])

    _finish("bounds", out_dir, parameters, settings.seed, [path], started)
    console.print(f"[green]✓[/green] Bounds written to {path}")


@cli.command()
@click.option("--out-dir", type=click.Path(), help="Output directory")
@click.option("--n-paths", type=int, default=200_000, show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--bin-width", type=float, default=0.05, show_default=True)
@click.pass_context
def figure1(ctx, out_dir: Optional[str], n_paths: int, dt: float, bin_width: float):
    """Bounds and worst-case densities for C = 1 at four times."""
    settings = ctx.obj["settings"]
    started = time.perf_counter()
    out = _out_dir(ctx, out_dir)
    parameters = {"n_paths": n_paths, "dt": dt, "bin_width": bin_width, "C": 1.0}
    header = run_header("figure1", parameters, settings.seed)
    parser = DriftParser(1.0)
    cfg = settings.quadrature()
    xs = np.round(np.linspace(-3.0, 3.0, 121), 12)
    outputs: List[Path] = []
    reports = []

    try:
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            for t in FIGURE_TIMES:
                task = progress.add_task(f"t={t:g}: bounds...", total=None)
                lower, upper = bounds_grid(t, 1.0, xs, cfg)
                outputs.append(
                    write_bounds(out / f"bounds_t{t:g}.csv", {**header, "t": t},
                                 xs, lower, upper)
                )
                for label, spec in FIGURE_DRIFTS:
                    progress.update(task, description=f"t={t:g}: {spec}...")
                    sim = SimConfig(t_end=t, dt=dt, n_paths=n_paths, seed=settings.seed)
                    report = sandwich_check(
                        parser.parse(spec), [0.0], sim, xs, bin_width, cfg,
                        settings.confidence, settings.threads,
                    )
                    reports.append(report)
                    outputs.extend(
                        write_sandwich(
                            out / f"density_t{t:g}_{label}.csv", report,
                            {**header, "t": t, "drift": spec}, with_json=False,
                        )
                    )
                progress.update(task, description=f"✓ t={t:g}")
    except (SdeBoundsError, ValueError) as e:
        _fail("figure1", out, e, ctx.obj["verbose"])

    _finish("figure1", out, parameters, settings.seed, outputs, started)
    violations = [r for r in reports if r.has_violations()]
    summary = "\n".join(f"{r.drift} t={r.t:g}: {r.summary()}" for r in reports)
    console.print(
        Panel(summary, title="Figure data",
              border_style="red" if violations else "green")
    )
    if violations:
        sys.exit(1)


@cli.command("simulate")
@click.option("--drift", "drift_spec", default="zero", show_default=True,
              help="Built-in drift name or expression")
@click.option("--square-radius", type=click.Choice(["plus", "minus"]),
              help="Simulate |Y+-|^2 directly instead of a drift")
@click.option("--C", "C", type=float, default=1.0, show_default=True)
@click.option("--d", "d", type=int, default=1, show_default=True)
@click.option("--x0", default="0", show_default=True, help="Comma separated start")
@click.option("--t", "t", type=float, default=1.0, show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--n-paths", type=int, default=10_000, show_default=True)
@click.option("--store-paths", is_flag=True, help="Keep full paths in memory")
@click.option("--out-dir", type=click.Path(), help="Output directory")
@click.pass_context
def simulate_cmd(
    ctx,
    drift_spec: str,
    square_radius: Optional[str],
    C: float,
    d: int,
    x0: str,
    t: float,
    dt: float,
    n_paths: int,
    store_paths: bool,
    out_dir: Optional[str],
):
    """Simulate terminal values and write them as CSV."""
    settings = ctx.obj["settings"]
    started = time.perf_counter()
    out = _out_dir(ctx, out_dir)
    start = _parse_point(x0, d)
    parameters = {
        "drift": drift_spec, "square_radius": square_radius, "C": C, "d": d,
        "x0": start, "t": t, "dt": dt, "n_paths": n_paths,
    }
    try:
        cfg = SimConfig(d=d, t_end=t, dt=dt, n_paths=n_paths, seed=settings.seed,
                        store_full_paths=store_paths)
        with console.status("Simulating..."):
            if square_radius:
                samples = simulate_square_radius(
                    WorstKind(square_radius), start, cfg, settings.threads
                )
            else:
                drift = DriftParser(C).parse(drift_spec)
                samples = simulate(drift, start, cfg, settings.threads)
        outputs = write_samples(
            out / "samples.csv", samples, run_header("simulate", parameters, settings.seed)
        )
    except (SdeBoundsError, ValueError) as e:
        _fail("simulate", out, e, ctx.obj["verbose"])

    _finish("simulate", out, parameters, settings.seed, outputs, started)
    console.print(f"[green]✓[/green] {samples.n} samples written to {outputs[0]}")


def _worst_target(spec: str) -> Optional[Tuple[WorstKind, float]]:
    for prefix, kind in (("worst-minus", WorstKind.MINUS), ("worst-plus", WorstKind.PLUS)):
        if spec.startswith(prefix):
            _, _, arg = spec.partition("@")
            return kind, float(arg) if arg else 0.0
    return None


@cli.command()
@click.option("--drift", "drift_specs", multiple=True, help="Drift name or expression")
@click.option("--drift-file", type=click.Path(exists=True), help="YAML drift suite")
@click.option("--C", "C", type=float, default=1.0, show_default=True)
@click.option("--t", "t", type=float, default=1.0, show_default=True)
@click.option("--x0", type=float, default=0.0, show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--n-paths", type=int, default=200_000, show_default=True)
@click.option("--bin-width", type=float, default=0.05, show_default=True)
@click.option("--range", "x_range", default="-3:3", show_default=True)
@click.option("--strict", is_flag=True, help="Treat inconclusive points as failures")
@click.option("--out-dir", type=click.Path(), help="Output directory")
@click.pass_context
def verify(
    ctx,
    drift_specs: Tuple[str, ...],
    drift_file: Optional[str],
    C: float,
    t: float,
    x0: float,
    dt: float,
    n_paths: int,
    bin_width: float,
    x_range: str,
    strict: bool,
    out_dir: Optional[str],
):
    """Check estimated densities against the bounds; worst-case drifts also
    report attainment at their switching point."""
    settings = ctx.obj["settings"]
    started = time.perf_counter()
    out = _out_dir(ctx, out_dir)
    lo, hi = _parse_range(x_range)
    xs = np.round(np.arange(lo, hi + 0.5 * bin_width, bin_width), 12)
    specs = list(drift_specs) or ([] if drift_file else ["zero"])
    parameters = {
        "drifts": specs, "drift_file": drift_file, "C": C, "t": t, "x0": x0,
        "dt": dt, "n_paths": n_paths, "bin_width": bin_width,
        "range": [lo, hi], "strict": strict,
    }
    header = run_header("verify", parameters, settings.seed)
    outputs: List[Path] = []
    failures: List[str] = []
    rows = []

    try:
        parser = DriftParser(C)
        named = [(s, parser.parse(s)) for s in specs]
        if drift_file:
            named += [(d.description, d) for d in parser.parse_file(drift_file)]
        cfg = settings.quadrature()
        sim = SimConfig(t_end=t, dt=dt, n_paths=n_paths, seed=settings.seed)
        for index, (spec, drift) in enumerate(named):
            xs_run = xs
            target = _worst_target(spec)
            if target and not np.any(np.isclose(xs, target[1])):
                xs_run = np.sort(np.append(xs, target[1]))
            with console.status(f"Verifying {spec}..."):
                report = sandwich_check(
                    drift, [x0], sim, xs_run, bin_width, cfg,
                    settings.confidence, settings.threads, C,
                )
            outputs.extend(
                write_sandwich(out / f"sandwich_{index}_{_slug(spec)}.csv", report,
                               {**header, "drift": spec})
            )
            counts = report.counts()
            line = f"{spec}: {report.summary()}"
            if report.has_violations():
                failures.append(f"{spec}: bound violated")
            if strict and counts["inconclusive"]:
                failures.append(f"{spec}: inconclusive points")
            if target:
                check = attainment_check(target[0], report, target[1], cfg)
                line += (
                    f"\n  {check.bound} at x={check.x_star:g}: "
                    f"estimate {check.rho_hat:.6f}, bound {check.target:.6f}, "
                    f"bin average {check.bin_target:.6f} "
                    f"({'attained' if check.attained else 'NOT attained'})"
                )
                if not check.attained:
                    failures.append(f"{spec}: {check.bound} not attained, gap {check.gap:.3g}")
            rows.append(line)
    except (SdeBoundsError, ValueError) as e:
        _fail("verify", out, e, ctx.obj["verbose"])

    _finish("verify", out, parameters, settings.seed, outputs, started)
    console.print(
        Panel("\n".join(rows) or "no drifts", title="Sandwich verdicts",
              border_style="red" if failures else "green")
    )
    if failures:
        write_json(out / "failure.json", {"subcommand": "verify", "failures": failures})
        for failure in failures:
            err_console.print(f"[red]✗[/red] {failure}")
        sys.exit(1)


@cli.command()
@click.option("--T", "T", type=float, default=1.0, show_default=True)
@click.option("--eps", type=float, default=0.25, show_default=True)
@click.option("--x0", type=float, default=0.0, show_default=True)
@click.option("--C", "C", type=float, default=1.0, show_default=True)
@click.option("--n", "n_list", type=int, multiple=True, help="Time meshes (repeatable)")
@click.option("--objective", type=click.Choice(["max", "min"]), default="max",
              show_default=True)
@click.option("--n-space", type=int, default=2049, show_default=True)
@click.option("--mc-paths", type=int, default=0, show_default=True,
              help="Monte Carlo paths for the oracle (0 skips it)")
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--tolerance", type=float, default=2e-3, show_default=True)
@click.option("--out-dir", type=click.Path(), help="Output directory")
@click.pass_context
def control(
    ctx,
    T: float,
    eps: float,
    x0: float,
    C: float,
    n_list: Tuple[int, ...],
    objective: str,
    n_space: int,
    mc_paths: int,
    dt: float,
    tolerance: float,
    out_dir: Optional[str],
):
    """Solve the discrete control problem and compare with the oracles."""
    settings = ctx.obj["settings"]
    started = time.perf_counter()
    out = _out_dir(ctx, out_dir)
    goal = Objective.MAXIMIZE if objective == "max" else Objective.MINIMIZE
    meshes = sorted(set(n_list or (64,)))
    parameters = {
        "T": T, "eps": eps, "x0": x0, "C": C, "n": meshes, "objective": goal.value,
        "n_space": n_space, "mc_paths": mc_paths, "dt": dt, "tolerance": tolerance,
    }
    header = run_header("control", parameters, settings.seed)
    outputs: List[Path] = []

    try:
        cfg = settings.quadrature()
        mc = None
        if mc_paths > 0:
            kind = WorstKind.MINUS if goal == Objective.MAXIMIZE else WorstKind.PLUS
            sim = SimConfig(t_end=T * C * C, dt=dt, n_paths=mc_paths, seed=settings.seed)
            with console.status("Simulating oracle paths..."):
                mc = simulate_worst(kind, [C * x0], sim, settings.threads)
                # undo the space scaling so the ball radius is eps
                mc = mc.model_copy(update={"terminal_values": mc.terminal_values / C})
        with console.status("Backward induction..."):
            report = dp_convergence_check(
                T, eps, x0, meshes, mc, goal, C, n_space, settings.confidence, cfg,
                monotone_from=min(16, meshes[-1]), grid_tolerance=tolerance,
            )
            sol = dp_solve(
                DPGrid(n_steps=meshes[-1], T=T, eps=eps, C=C, x0=x0, n_space=n_space),
                goal,
            )
            bang = dp_policy_is_bangbang(sol)
        outputs.append(write_dp_solution(out / "dp_solution.csv", sol, header))
        outputs.append(
            write_json(
                out / "control_report.json",
                {**header, "convergence": report.model_dump(mode="json"),
                 "bang_bang": {**bang.model_dump(mode="json"),
                               "fraction": bang.fraction_bang_bang}},
            )
        )
    except (SdeBoundsError, ValueError) as e:
        _fail("control", out, e, ctx.obj["verbose"])

    _finish("control", out, parameters, settings.seed, outputs, started)
    lines = [f"oracle P(|Y(T)| <= eps) = {report.oracle:.6f}"]
    lines += [f"n={r.n_steps}: V0={r.value:.6f} gap={r.gap_oracle:.2e}" for r in report.rows]
    lines.append(f"bang-bang fraction {bang.fraction_bang_bang:.4f}")
    console.print(
        Panel("\n".join(lines), title=f"Control ({goal.value})",
              border_style="green" if report.passed else "red")
    )
    if not report.passed:
        write_json(
            out / "failure.json",
            {"subcommand": "control",
             "failures": [f"final gap {report.rows[-1].gap_oracle:.3g} "
                          f"or monotonicity failed"]},
        )
        sys.exit(1)


def main():
    """Main entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
