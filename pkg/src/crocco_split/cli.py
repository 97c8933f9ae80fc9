"""Command line entry point.

Exit codes: 0 all enabled checks pass, 2 configuration error, 3 data, geometry,
solver or I/O failure, 4 a verification check failed.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click

from .config import parse_config
from .driver import refine_study, run, verify_history
from .errors import ConfigError, CroccoSplitError
from .geometry import GridSpec, build_grid
from .output import dumps_report, read_slices, write_outputs
from .scenarios import list_presets

log = logging.getLogger("crocco_split")

EXIT_OK = 0
EXIT_VERIFY = 4


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    sys.exit(exc.exit_code)


def _load(config, workers):
    cfg = parse_config(config)
    if workers is not None:
        if workers < 1:
            raise ConfigError("must be >= 1", key="workers")
        cfg = dataclasses.replace(cfg, workers=workers)
    return cfg


def _summary(report):
    for name, c in sorted(report.get("checks", {}).items()):
        click.echo(f"  {'ok  ' if c.get('ok') else 'FAIL'} {name}")
    click.echo("passed" if report.get("passed") else f"failed: {', '.join(report.get('failures', []))}")


@click.group()
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"], case_sensitive=False))
def main(log_level):
    """Split-step solver and estimate checks for the Crocco-transformed boundary layer."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out", default=None, type=click.Path(file_okay=False),
              help="Output directory (overrides output.dir).")
@click.option("--workers", type=int, default=None, help="Worker threads (overrides the config).")
def run_cmd(config, out, workers):
    """Run one configured simulation and write slices, report and probes."""
    try:
        cfg = _load(config, workers)
        out_dir = out or cfg.output.get("dir", "out")

        def progress(i, n, tag):
            log.info("interval %d/%d %s", i, n, tag)

        try:
            hist, report, timings = run(cfg, progress=progress)
        except CroccoSplitError as exc:
            hist = getattr(exc, "history", None)
            if hist is not None and hist.slices:
                write_outputs(hist, exc.report, out_dir, scenario=cfg.scenario)
                click.echo(f"partial history written to {out_dir}", err=True)
            raise
        write_outputs(hist, report, out_dir, timings, cfg.scenario, cfg.output)
    except CroccoSplitError as exc:
        _fail(exc)
    _summary(report)
    click.echo(f"outputs in {out_dir}")
    sys.exit(EXIT_OK if report["passed"] else EXIT_VERIFY)


@main.command("verify")
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
@click.option("--history", "history", required=True, type=click.Path(file_okay=False, exists=True),
              help="Directory written by a previous run.")
@click.option("--out", "out", default=None, type=click.Path(dir_okay=False),
              help="Where to write the fresh report (default: print a summary only).")
@click.option("--workers", type=int, default=None)
def verify_cmd(config, history, out, workers):
    """Re-check a saved history without re-running the solver."""
    try:
        cfg = _load(config, workers)
        sc = cfg.scenario
        grid = build_grid(cfg.domain, cfg.grid, k=sc.kfield.k, tol_tangent=cfg.tol_tangent)
        times, slices = read_slices(Path(history) / "slices.csv", grid)
        stored = None
        rp = Path(history) / "report.json"
        if rp.is_file():
            stored = json.loads(rp.read_text())
        _, report = verify_history(cfg, times, slices, stored)
        if out:
            Path(out).write_text(dumps_report(report))
    except CroccoSplitError as exc:
        _fail(exc)
    _summary(report)
    sys.exit(EXIT_OK if report["passed"] else EXIT_VERIFY)


def _int_list(ctx, param, value):
    try:
        vals = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers")
    if len(vals) < 3:
        raise click.BadParameter("need at least three levels")
    return vals


@main.command("convergence")
@click.option("--config", "config", required=True, type=click.Path(dir_okay=False))
@click.option("--param", type=click.Choice(["n_split", "grid"]), default="n_split", show_default=True,
              help="Refine the number of sub-intervals, or all three grid axes together.")
@click.option("--levels", callback=_int_list, default="4,8,16", show_default=True,
              help="n_split values, or horizontal cell counts for --param grid.")
@click.option("--out", "out", default=None, type=click.Path(dir_okay=False), help="JSON table path.")
@click.option("--workers", type=int, default=None)
def convergence_cmd(config, param, levels, out, workers):
    """Self-convergence table over refinement levels."""
    try:
        base = _load(config, workers)
        g = base.grid

        def make(lv):
            if param == "n_split":
                spec = GridSpec(g.nx, g.ny, g.nz, g.T, lv)
            else:
                f = lv / g.nx
                spec = GridSpec(lv, int(round(g.ny * f)), int(round(g.nz * f)), g.T, g.n_split)
            return dataclasses.replace(base, grid=spec)

        exact = base.scenario.data.W1 if base.scenario.exact else None
        res = refine_study(make, levels, exact=exact)
    except CroccoSplitError as exc:
        _fail(exc)
    table = {k: v for k, v in res.items() if k != "reports"}
    table["param"] = param
    table["reference"] = "exact" if exact is not None else "next level"
    click.echo(f"{param:>8} {'error':>12} {'order':>7} {'weak res':>12}")
    for i, lv in enumerate(levels):
        o = res["orders"][i] if i < len(res["orders"]) else float("nan")
        click.echo(f"{lv:>8} {res['errors'][i]:12.4e} {o:7.3f} {res['weak_residual'][i]:12.4e}")
    if out:
        Path(out).write_text(dumps_report(table))
    sys.exit(EXIT_OK)


@main.command("mms")
@click.option("--which", type=click.Choice(["porous", "transport", "all"]), default="all", show_default=True)
@click.option("--out", "out", default=None, type=click.Path(dir_okay=False), help="JSON table path.")
@click.option("--workers", type=int, default=1, show_default=True)
def mms_cmd(which, out, workers):
    """Observed orders against closed-form solutions."""
    from .mms import porous_decay_study, transport_shift_study

    res = {}
    try:
        if which in ("porous", "all"):
            res["porous_backward_euler"] = porous_decay_study(theta=1.0)
            res["porous_crank_nicolson"] = porous_decay_study(theta=0.5)
        if which in ("transport", "all"):
            res["transport_shift"] = transport_shift_study(workers=workers)
    except CroccoSplitError as exc:
        _fail(exc)
    for name, r in res.items():
        orders = ", ".join(f"{o:.3f}" for o in r["orders"])
        click.echo(f"{name}: errors {', '.join(f'{e:.3e}' for e in r['errors'])}; orders {orders}")
    if out:
        Path(out).write_text(dumps_report(res))
    sys.exit(EXIT_OK)


@main.command("scenarios")
@click.option("--json", "as_json", is_flag=True, help="Print the full preset table as JSON.")
def scenarios_cmd(as_json):
    """List the built-in scenario presets."""
    rows = list_presets()
    if as_json:
        click.echo(dumps_report(rows), nl=False)
        return
    for r in rows:
        click.echo(f"{r['name']:<20} {r['mode']:<15} {r['note']}")


if __name__ == "__main__":
    main()
