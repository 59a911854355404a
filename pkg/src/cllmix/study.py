"""Replication study runner: a seeded grid of simulate-fit-select tasks.

Each (cell, replication) task derives its own RNG streams from the
master seed, so results are independent of scheduling order and worker
count. Completed replications are persisted as JSON files and skipped
on re-run, making interrupted studies resumable.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .em import class_posteriors
from .errors import CllmixError, DataError
from .figures import render_study_figures
from .metrics import ReplicationRecord, aggregate
from .quadrature import build_grid
from .regpath import two_stage_path
from .simulate import generate

REP_DIR = "reps"


def replication_seeds(master_seed: int, cell_index: int, rep_index: int) -> dict:
    """Two derived 64-bit seeds (data generation, fitting) per task."""
    ss = np.random.SeedSequence([int(master_seed), int(cell_index), int(rep_index)])
    data_seed, fit_seed = (int(x) for x in ss.generate_state(2, np.uint64))
    return {"data": data_seed, "fit": fit_seed}


def rep_filename(cell_index: int, rep_index: int) -> str:
    return f"rep_c{cell_index:02d}_r{rep_index:03d}.json"


def run_replication(manifest: io.StudyManifest, cell_index: int, rep_index: int):
    """One full replication: simulate, run the two-stage path, and collect
    the selected model with its posterior class probabilities."""
    seeds = replication_seeds(manifest.master_seed, cell_index, rep_index)
    design = replace(manifest.designs[cell_index], seed=seeds["data"])
    data, truth = generate(design)
    opts = replace(manifest.fit_options, seed=seeds["fit"])
    grid = build_grid(manifest.grid_points)
    path = two_stage_path(data, manifest.k_fit, manifest.path_m, grid, opts)
    selected = path.selected_model
    posterior = class_posteriors(selected.params, data, grid)
    record = ReplicationRecord(
        truth=truth, estimate=selected, design=design,
        replication_index=rep_index, class_posterior=posterior,
    )
    return record, seeds


def _worker(args):
    manifest, cell_index, rep_index = args
    record, seeds = run_replication(manifest, cell_index, rep_index)
    return cell_index, rep_index, io.rep_to_dict(record, cell_index, seeds)


def _load_cell_records(reps_dir: Path, cell_index: int, n_reps: int):
    records = []
    for ri in range(n_reps):
        path = reps_dir / rep_filename(cell_index, ri)
        if path.exists():
            ci, record = io.read_rep(path)
            if ci != cell_index:
                raise DataError(f"{path}: cell index mismatch")
            records.append(record)
    return records


def aggregate_and_export(manifest: io.StudyManifest, n_reps: int | None = None,
                         figures: bool = True) -> list:
    """Aggregate stored replication files into per-cell reports and write
    the report JSON, CSV tables, and (optionally) rendered figures."""
    n_reps = n_reps or manifest.n_replications
    out = Path(manifest.output_dir)
    reps_dir = out / REP_DIR
    cells = []
    for ci, design in enumerate(manifest.designs):
        records = _load_cell_records(reps_dir, ci, n_reps)
        if not records:
            raise DataError(f"no replication files found for cell {ci} in {reps_dir}")
        cells.append((design, aggregate(records)))
    io.write_study_report(cells, out / "report.json")
    io.export_tables(cells, "table2", out / "table2.csv")
    io.export_tables(cells, "table3", out / "table3.csv")
    io.export_tables(cells, "itemgrid", out / "itemgrid.csv")
    for ci, cell in enumerate(cells):
        io.export_tables(cell, "roc", out / f"roc_cell{ci}.csv")
    if figures:
        render_study_figures(cells, out / "figures")
    return cells


def run_study(manifest: io.StudyManifest, threads: int = 1,
              n_reps: int | None = None, figures: bool = True,
              echo=None) -> dict:
    """Run (or resume) the full replication grid, then aggregate.

    Returns a summary dict with scheduling counts and any failures. The
    written outputs depend only on the manifest and seeds, never on the
    worker count.
    """
    echo = echo or (lambda msg: None)
    n_reps = n_reps or manifest.n_replications
    out = Path(manifest.output_dir)
    reps_dir = out / REP_DIR
    reps_dir.mkdir(parents=True, exist_ok=True)

    tasks = [(ci, ri) for ci in range(len(manifest.designs)) for ri in range(n_reps)]
    pending = [(ci, ri) for ci, ri in tasks
               if not (reps_dir / rep_filename(ci, ri)).exists()]
    skipped = len(tasks) - len(pending)
    if skipped:
        echo(f"resuming: {skipped} completed replication(s) found, {len(pending)} to run")

    failures = []
    if threads <= 1:
        for ci, ri in pending:
            try:
                _, _, payload = _worker((manifest, ci, ri))
                io._dump(payload, reps_dir / rep_filename(ci, ri))
                echo(f"cell {ci} rep {ri}: done")
            except CllmixError as exc:
                failures.append((ci, ri, str(exc)))
                echo(f"cell {ci} rep {ri}: FAILED ({exc})")
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_worker, (manifest, ci, ri)): (ci, ri)
                       for ci, ri in pending}
            for fut in as_completed(futures):
                ci, ri = futures[fut]
                try:
                    _, _, payload = fut.result()
                    io._dump(payload, reps_dir / rep_filename(ci, ri))
                    echo(f"cell {ci} rep {ri}: done")
                except CllmixError as exc:
                    failures.append((ci, ri, str(exc)))
                    echo(f"cell {ci} rep {ri}: FAILED ({exc})")

    cells = aggregate_and_export(manifest, n_reps, figures=figures)
    return {
        "n_cells": len(manifest.designs),
        "n_reps": n_reps,
        "ran": len(pending) - len(failures),
        "skipped": skipped,
        "failures": sorted(failures),
        "cells": cells,
    }
