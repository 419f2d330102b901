"""Command line interface: simulate paths, run verification suites,
solve the configured equation, and dump contraction constants or
plot-ready moment curves.

Exit codes: 0 success, 1 failed verification checks, 2 usage or
configuration errors.
"""

import csv
import io
import json
import sys

import click
import numpy as np

from . import spde
from .config import ConfigError, load_scenario
from .harness import CSV_COLUMNS, HarnessError, Stopwatch, run_ensemble
from .noise import simulate_path
from .semigroup import SemigroupBound
from .suites import SUITE_ORDER, run_suite


def _scenario(config, seed, paths, grid_steps):
    overrides = {}
    if seed is not None:
        overrides.setdefault("ensemble", {})["seed"] = seed
    if paths is not None:
        overrides.setdefault("ensemble", {})["paths"] = paths
    if grid_steps is not None:
        overrides.setdefault("grid", {})["steps"] = grid_steps
    try:
        return load_scenario(config, overrides)
    except FileNotFoundError:
        raise click.UsageError("config file not found: %s" % config)
    except ConfigError as err:
        raise click.UsageError(str(err))


def common_options(fn):
    for opt in reversed([
        click.option("--config", type=str, default=None,
                     help="Scenario JSON (defaults used when omitted)."),
        click.option("--seed", type=int, default=None,
                     help="Override the ensemble seed."),
        click.option("--paths", type=int, default=None,
                     help="Override the ensemble path count."),
        click.option("--grid-steps", type=int, default=None,
                     help="Override the number of grid steps."),
    ]):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Simulation and verification for SPDEs driven by martingale-valued
    measures on a weighted sequence-space truncation."""


@main.command()
@common_options
@click.option("--out", type=str, default=None,
              help="Write CSV here instead of stdout.")
@click.option("--solve", "do_solve", is_flag=True,
              help="Also emit mild-solution state rows.")
def simulate(config, seed, paths, grid_steps, out, do_solve):
    """Emit per-path noise (and optionally solution) rows as CSV."""
    scn = _scenario(config, seed, paths, grid_steps)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path_id", "time", "kind", "index", "value"])
    ids = list(range(scn.paths))
    sols = None
    if do_solve:
        sols = spde.solve_mild_ensemble(
            scn.coefficients, scn.semigroup, scn.spec, scn.z0, scn.grid,
            scn.seed, ids, scn.family, tol=scn.tol, max_iter=scn.max_iter,
            upsilon=scn.upsilon, norm_level=scn.norm_level)
    for b in ids:
        p = simulate_path(scn.spec, scn.grid, scn.seed, b)
        W = p.cumulative_wiener()
        for i, t in enumerate(scn.grid):
            for j in range(scn.dimension):
                writer.writerow([b, repr(float(t)), "wiener", j,
                                 repr(float(W[i, j]))])
        for tj, kj in zip(p.jump_times, p.jump_atoms):
            size = float(np.linalg.norm(scn.spec.levy.atoms[kj]))
            writer.writerow([b, repr(float(tj)), "jump", int(kj), repr(size)])
        if sols is not None:
            for i, t in enumerate(scn.grid):
                for j in range(scn.dimension):
                    writer.writerow([b, repr(float(t)), "state", j,
                                     repr(float(sols[b].states[i, j]))])
    if out is None:
        click.echo(buf.getvalue(), nl=False)
    else:
        with open(out, "w") as fh:
            fh.write(buf.getvalue())
        click.echo("wrote %s" % out, err=True)


@main.command()
@click.argument("suite", type=click.Choice(SUITE_ORDER + ["all"]))
@common_options
@click.option("--out", type=str, default="out",
              help="Directory for report_<suite>.json/.csv.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              default="csv", help="Report file format (JSON always written).")
@click.option("--workers", type=int, default=1,
              help="Worker threads (results are identical for any count).")
def verify(suite, config, seed, paths, grid_steps, out, fmt, workers):
    """Run a verification suite and write its report.

    Prints one PASS/FAIL line per check; exits 1 if any check fails.
    """
    scn = _scenario(config, seed, paths, grid_steps)
    watch = Stopwatch()
    try:
        report = run_suite(scn, suite, workers=workers)
    except HarnessError as err:
        raise click.ClickException(str(err))
    elapsed = watch.lap()
    for line in report.lines():
        click.echo(line)
    for name, lap in report.timings.items():
        click.echo("  %-34s %7.2f s" % (name, lap), err=True)
    click.echo("suite %s finished in %.1f s" % (suite, elapsed), err=True)
    written = report.write(out, fmt=fmt)
    for path in written:
        click.echo("wrote %s" % path, err=True)
    sys.exit(0 if report.passed else 1)


def _moment_rows(scn, workers):
    """Per-grid-time moment estimates of the mild solution ensemble."""
    d = scn.dimension
    K1 = len(scn.grid)
    modes = list(range(min(d, 4)))
    wts = scn.family.weights(scn.norm_level)

    def bev(ids):
        sols = spde.solve_mild_ensemble(
            scn.coefficients, scn.semigroup, scn.spec, scn.z0, scn.grid,
            scn.seed, [int(b) for b in ids], scn.family, tol=scn.tol,
            max_iter=scn.max_iter, upsilon=scn.upsilon,
            norm_level=scn.norm_level)
        out = np.empty((len(ids), K1 * (1 + 2 * len(modes))))
        for i, s in enumerate(sols):
            cols = [np.einsum("kd,d->k", s.states ** 2, 1.0 / wts)]
            for j in modes:
                cols.append(s.states[:, j])
                cols.append(s.states[:, j] ** 2)
            out[i] = np.concatenate(cols)
        return out

    names = ["dual_norm_sq"]
    for j in modes:
        names += ["mean_e%d" % j, "second_moment_e%d" % j]
    ests = run_ensemble(scn, batch_evaluator=bev, k=K1 * len(names),
                        workers=workers,
                        statistic=[None] * (K1 * len(names)))
    rows = []
    for blk, name in enumerate(names):
        for i, t in enumerate(scn.grid):
            e = ests[blk * K1 + i]
            rows.append([repr(float(t)), name, repr(e.mean), repr(e.stderr),
                         e.n, "", ""])
    return rows


@main.command()
@common_options
@click.option("--out", type=str, default="out",
              help="Directory for solve_curves.csv and solve_summary.json.")
@click.option("--workers", type=int, default=1)
def solve(config, seed, paths, grid_steps, out, workers):
    """Solve the configured equation and write ensemble moment curves."""
    import os
    scn = _scenario(config, seed, paths, grid_steps)
    rows = _moment_rows(scn, workers)
    os.makedirs(out, exist_ok=True)
    curve_path = os.path.join(out, "solve_curves.csv")
    with open(curve_path, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)
    final = {r[1]: {"mean": float(r[2]), "stderr": float(r[3])}
             for r in rows if r[0] == repr(float(scn.grid[-1]))}
    summary = {"scenario": scn.name, "dimension": scn.dimension,
               "steps": scn.steps, "paths": scn.paths, "seed": scn.seed,
               "T": scn.T, "final": final}
    summary_path = os.path.join(out, "solve_summary.json")
    with open(summary_path, "w") as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    click.echo("wrote %s, %s" % (curve_path, summary_path), err=True)


@main.command("plot-data")
@common_options
@click.option("--workers", type=int, default=1)
def plot_data(config, seed, paths, grid_steps, workers):
    """Stream t-versus-statistic CSV rows (same schema as reports)."""
    scn = _scenario(config, seed, paths, grid_steps)
    rows = _moment_rows(scn, workers)
    writer = csv.writer(click.get_text_stream("stdout"), lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)


@main.command()
@common_options
@click.option("--format", "fmt", type=click.Choice(["text", "json"]),
              default="text")
def constants(config, seed, paths, grid_steps, fmt):
    """Print the fixed-point contraction constants.

    The reference block is the documented arithmetic example (unit growth
    envelope, no Lipschitz part, T=1, damping 10); the scenario block
    evaluates the configured coefficients at their automatic damping.
    """
    scn = _scenario(config, seed, paths, grid_steps)
    pin = spde.Coefficients(B=None, F=None, a=lambda psi, r: 1.0,
                            b=lambda psi, r: 0.0,
                            a_sq_integral=lambda T: T,
                            b_sq_integral=lambda T: 0.0)
    ref = spde.contraction_constants(pin, SemigroupBound(1.0, 0.0, 1), 1.0,
                                     10.0)
    bound = scn.semigroup.certify_bound(scn.family, scn.norm_level)
    ustar = spde.resolve_upsilon("auto", scn.coefficients, scn.semigroup,
                                 scn.family, scn.norm_level, scn.T)
    rep = spde.contraction_constants(scn.coefficients, bound, scn.T, ustar)
    blocks = [("reference example (a=1, b=0, T=1, upsilon=10)", ref),
              ("scenario '%s' at automatic damping" % scn.name, rep)]
    if fmt == "json":
        click.echo(json.dumps(
            {tag: {"T": r.T, "upsilon": r.upsilon, "M": r.M,
                   "theta": r.theta, "C1": r.C1, "C2": r.C2, "C": r.C,
                   "contracts": bool(r.C < 1.0)}
             for tag, r in blocks}, indent=2, sort_keys=True))
        return
    for tag, r in blocks:
        click.echo(tag)
        click.echo("  T=%g  upsilon=%.6g  M=%g  theta=%g" % (r.T, r.upsilon,
                                                             r.M, r.theta))
        click.echo("  C1=%.10g  C2=%.10g  C=%.10g  (%s)"
                   % (r.C1, r.C2, r.C,
                      "contracts" if r.C < 1.0 else "does not contract"))


if __name__ == "__main__":
    main()
