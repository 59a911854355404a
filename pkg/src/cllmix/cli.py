"""Command-line front-end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
or non-convergence (partial results are still written and flagged).
"""
from __future__ import annotations

import os
import sys
from pathlib import Path

import click

from . import io
from .em import FitOptions, fit_constrained, fit_penalized
from .errors import DataError, NumericalError, UsageError
from .figures import save_bic_path_figure, save_item_recovery_figure, save_roc_figure
from .model import ResponseMatrix
from .quadrature import build_grid
from .regpath import select_k as run_select_k
from .regpath import two_stage_path
from .simulate import SimDesign, generate
from .study import run_study as run_study_grid
from .study import aggregate_and_export

THREADS_ENV = "CLLMIX_THREADS"


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _fit_options(starts, seed):
    return FitOptions(n_starts=starts, seed=seed)


@click.group(name="cllmix")
def cli():
    """Latent-class DIF analysis under the complementary log-log model."""


@cli.command()
@click.option("--design", type=click.Choice(["A", "B"]), required=True,
              help="Benchmark design: A has 10 DIF items, B none.")
@click.option("--n", type=int, required=True, help="Number of respondents.")
@click.option("--pi", type=float, required=True, help="Focal class proportion in (0,1).")
@click.option("--j", "n_items", type=int, default=25, show_default=True, help="Number of items.")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--out", type=click.Path(), required=True, help="Output CSV path.")
def simulate(design, n, pi, n_items, seed, out):
    """Simulate a dataset; writes the CSV and a .truth.json beside it."""
    cell = SimDesign(design=design, n=n, pi_focal=pi, n_items=n_items, seed=seed)
    data, truth = generate(cell)
    width = len(str(n_items))
    named = ResponseMatrix(
        data=data.data,
        item_names=tuple(f"item{j + 1:0{width}d}" for j in range(n_items)),
    )
    io.write_responses(named, out)
    truth_path = Path(out).with_suffix(".truth.json")
    io.write_truth(truth, truth_path)
    click.echo(f"wrote {n}x{n_items} design-{design} dataset to {out}")
    click.echo(f"wrote generating truth to {truth_path}")


@cli.command()
@click.option("--data", type=click.Path(), required=True, help="Response CSV.")
@click.option("--k", type=int, required=True, help="Number of focal classes.")
@click.option("--lambda", "lam", type=float, default=0.0, show_default=True,
              help="L1 penalty level (total scale); ignored with --support.")
@click.option("--support", "support_path", type=click.Path(), default=None,
              help="JSON support file for a constrained (unpenalized) fit.")
@click.option("--starts", type=int, default=5, show_default=True, help="Random starts.")
@click.option("--seed", type=int, default=0, show_default=True, help="Fit seed.")
@click.option("--grid-points", type=int, default=61, show_default=True,
              help="Quadrature nodes.")
@click.option("--out", type=click.Path(), required=True, help="Output result JSON.")
def fit(data, k, lam, support_path, starts, seed, grid_points, out):
    """Single penalized fit at a fixed lambda, or constrained fit on a support."""
    responses = io.read_responses(data)
    grid = build_grid(grid_points)
    opts = _fit_options(starts, seed)
    if support_path is not None:
        support = io.read_support(support_path)
        result = fit_constrained(responses, k, support, grid, opts)
    else:
        result = fit_penalized(responses, k, lam, grid, opts)
    io.write_fit(result, out)
    click.echo(f"loglik {result.loglik:.4f}  support size {len(result.support)}  "
               f"iterations {result.n_outer_iters}  converged {result.converged}")
    click.echo(f"wrote fit to {out}")
    if not result.converged:
        click.echo("warning: fit did not converge; result flagged", err=True)
        return 3
    return 0


@cli.command(name="path")
@click.option("--data", type=click.Path(), required=True, help="Response CSV.")
@click.option("--k", type=int, required=True, help="Number of focal classes.")
@click.option("--m", type=int, default=30, show_default=True, help="Lambda grid size.")
@click.option("--starts", type=int, default=5, show_default=True, help="Random starts.")
@click.option("--seed", type=int, default=0, show_default=True, help="Fit seed.")
@click.option("--grid-points", type=int, default=61, show_default=True,
              help="Quadrature nodes.")
@click.option("--out", type=click.Path(), required=True, help="Output path JSON.")
def path_cmd(data, k, m, starts, seed, grid_points, out):
    """Two-stage lambda path with BIC selection; renders the BIC curve."""
    responses = io.read_responses(data)
    grid = build_grid(grid_points)
    result = two_stage_path(responses, k, m, grid, _fit_options(starts, seed))
    io.write_fit(result, out)
    click.echo("lambda        support  BIC           converged")
    for rec in result.records:
        bic_txt = f"{rec.bic:.2f}" if rec.bic is not None else "failed"
        click.echo(f"{rec.lam:<12.5g}  {len(rec.support):<7d}  {bic_txt:<12s}  "
                   f"{rec.penalized_fit.converged}")
    fig_path = Path(out).with_suffix(".bic.png")
    save_bic_path_figure(result, fig_path)
    click.echo(f"wrote path to {out} and BIC curve to {fig_path}")
    if result.selected_index is None:
        click.echo("error: no admissible path point", err=True)
        return 3
    sel = result.records[result.selected_index]
    items = sorted({j + 1 for j, _ in sel.support})
    click.echo(f"selected lambda {sel.lam:.5g} with BIC {sel.bic:.2f}; "
               f"DIF items (1-based): {items if items else 'none'}")
    return 0


@cli.command(name="select-k")
@click.option("--data", type=click.Path(), required=True, help="Response CSV.")
@click.option("--k-max", type=int, required=True, help="Largest number of focal classes.")
@click.option("--m", type=int, default=30, show_default=True, help="Lambda grid size.")
@click.option("--starts", type=int, default=5, show_default=True, help="Random starts.")
@click.option("--seed", type=int, default=0, show_default=True, help="Fit seed.")
@click.option("--grid-points", type=int, default=61, show_default=True,
              help="Quadrature nodes.")
@click.option("--out", type=click.Path(), required=True, help="Output JSON.")
def select_k_cmd(data, k_max, m, starts, seed, grid_points, out):
    """Run paths for K = 0..k-max focal classes and compare their BICs."""
    if k_max < 0:
        raise UsageError("--k-max must be >= 0")
    responses = io.read_responses(data)
    grid = build_grid(grid_points)
    result = run_select_k(responses, range(k_max + 1), m, grid,
                          _fit_options(starts, seed))
    io.write_fit(result, out)
    click.echo("classes  selected-lambda  BIC")
    for k in sorted(result.paths):
        p = result.paths[k]
        if p.selected_index is None:
            click.echo(f"{k + 1:<7d}  -                failed")
            continue
        rec = p.records[p.selected_index]
        click.echo(f"{k + 1:<7d}  {rec.lam:<15.5g}  {rec.bic:.2f}")
    click.echo(f"selected {result.best_k + 1} classes (K={result.best_k} focal)")
    click.echo(f"wrote selection to {out}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(), required=True,
              help="Study manifest file.")
@click.option("--threads", type=int, default=None,
              help=f"Worker processes [default: ${THREADS_ENV} or 1].")
@click.option("--reps", type=int, default=None,
              help="Override the manifest replication count.")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render figures alongside the CSV exports.")
def study(manifest_path, threads, reps, figures):
    """Run (or resume) the full replication grid from a manifest."""
    manifest = io.read_manifest(manifest_path)
    threads = threads if threads is not None else _default_threads()
    summary = run_study_grid(manifest, threads=threads, n_reps=reps,
                             figures=figures, echo=click.echo)
    click.echo(f"study complete: {summary['ran']} ran, {summary['skipped']} resumed, "
               f"{len(summary['failures'])} failed; outputs in {manifest.output_dir}")
    if summary["failures"]:
        click.echo("warning: some replications failed; aggregates use the rest", err=True)
        return 3
    return 0


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(), required=True,
              help="Study manifest file.")
@click.option("--reps", type=int, default=None,
              help="Override the manifest replication count.")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render figures alongside the CSV exports.")
def metrics(manifest_path, reps, figures):
    """Recompute aggregates and exports from stored replication files."""
    manifest = io.read_manifest(manifest_path)
    cells = aggregate_and_export(manifest, reps, figures=figures)
    click.echo(f"recomputed {len(cells)} cell report(s) into {manifest.output_dir}")


@cli.command()
@click.option("--report", "report_path", type=click.Path(), required=True,
              help="Study report JSON.")
@click.option("--style", type=click.Choice(io.EXPORT_STYLES), required=True,
              help="Export layout.")
@click.option("--cell", type=int, default=None,
              help="Cell index to export (required for roc).")
@click.option("--out", type=click.Path(), required=True, help="Output CSV.")
@click.option("--figure/--no-figure", default=True, show_default=True,
              help="Render the matching figure beside the CSV.")
def export(report_path, style, cell, out, figure):
    """Re-export one table style (and its figure) from a stored report."""
    cells = io.read_study_report(report_path)
    if cell is not None:
        if not 0 <= cell < len(cells):
            raise UsageError(f"--cell must be in [0, {len(cells) - 1}]")
        cells = [cells[cell]]
    if style == "roc" and len(cells) != 1:
        raise UsageError("roc export needs --cell to pick a single cell")
    io.export_tables(cells if len(cells) > 1 else cells[0], style, out)
    click.echo(f"wrote {style} export to {out}")
    if figure:
        base = Path(out).with_suffix("")
        if style == "itemgrid":
            for metric in ("bias", "rmse"):
                target = Path(f"{base}_{metric}.png")
                save_item_recovery_figure(cells, metric, target)
                click.echo(f"wrote figure {target}")
        elif style == "roc":
            target = Path(f"{base}.png")
            save_roc_figure(cells, target)
            click.echo(f"wrote figure {target}")


def main(argv=None) -> int:
    """Programmatic entry point returning the process exit code."""
    try:
        rv = cli.main(args=argv, prog_name="cllmix", standalone_mode=False)
        return int(rv) if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except UsageError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
