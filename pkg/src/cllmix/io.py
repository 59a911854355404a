"""File formats: response CSV, JSON result/manifest schemas, and table exports.

All result files are JSON with a ``schema`` tag of the form
``cllmix/<kind>/<version>``; reading a file written under a different
version raises SchemaVersionError. Floats are serialized with Python's
shortest round-trippable repr, so read(write(x)) reproduces x exactly.
Stored (item, class) index pairs are 0-based; table exports and printed
summaries number items from 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em import FitOptions, FitResult
from .errors import DataError, SchemaVersionError, UsageError
from .metrics import AggregateReport, ReplicationRecord
from .model import ModelParams, ResponseMatrix
from .regpath import PathRecord, PathResult, SelectKResult
from .simulate import SimDesign, SimTruth

SCHEMA_VERSION = 1
MANIFEST_HEADER = f"cllmix-manifest v{SCHEMA_VERSION}"

EXPORT_STYLES = ("table2", "table3", "itemgrid", "roc")


def _tag(kind):
    return f"cllmix/{kind}/{SCHEMA_VERSION}"


def _check_schema(obj, kind, path):
    tag = obj.get("schema", "")
    parts = str(tag).split("/")
    if len(parts) != 3 or parts[0] != "cllmix" or parts[1] != kind:
        raise DataError(f"{path}: expected a cllmix/{kind} file, found schema {tag!r}")
    if parts[2] != str(SCHEMA_VERSION):
        raise SchemaVersionError(
            f"{path}: schema version {parts[2]} is not supported (this build reads version {SCHEMA_VERSION})"
        )


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Response CSV
# ---------------------------------------------------------------------------


def read_responses(path) -> ResponseMatrix:
    """Parse a response CSV: optional header of item names, then rows of
    comma-separated 0/1 cells. Errors carry 1-based row/column locations
    (rows counted over data lines)."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    lines = p.read_text(encoding="utf-8").splitlines()
    while lines and lines[-1].strip() == "":
        lines.pop()
    if not lines:
        raise DataError(f"{p}: empty file")
    def _numeric(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    first = [c.strip() for c in lines[0].split(",")]
    # a header must contain at least one non-numeric name; numeric first
    # rows are data (and get cell-level validation)
    has_header = not all(_numeric(c) for c in first)
    names = tuple(first) if has_header else None
    data_lines = lines[1:] if has_header else lines
    if not data_lines:
        raise DataError(f"{p}: no data rows")
    n_cols = len(first)
    rows = []
    for r, line in enumerate(data_lines, start=1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != n_cols:
            raise DataError(f"{p}: row {r} has {len(cells)} cells, expected {n_cols}")
        row = []
        for c, cell in enumerate(cells, start=1):
            if cell not in ("0", "1"):
                raise DataError(f"{p}: row {r}, column {c}: expected 0 or 1, got {cell!r}")
            row.append(int(cell))
        rows.append(row)
    return ResponseMatrix(data=np.array(rows, dtype=np.int8), item_names=names)


def write_responses(matrix: ResponseMatrix, path) -> None:
    lines = []
    if matrix.item_names is not None:
        lines.append(",".join(matrix.item_names))
    for row in matrix.data:
        lines.append(",".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Parameter / result schemas
# ---------------------------------------------------------------------------


def params_to_dict(p: ModelParams) -> dict:
    return {
        "n_items": p.n_items, "n_focal": p.n_focal,
        "d": p.d.tolist(), "delta": p.delta.tolist(), "nu": p.nu.tolist(),
        "mu": p.mu.tolist(), "sigma": p.sigma.tolist(),
    }


def params_from_dict(obj) -> ModelParams:
    return ModelParams(
        n_items=obj["n_items"], n_focal=obj["n_focal"],
        d=np.array(obj["d"], dtype=float),
        delta=np.array(obj["delta"], dtype=float).reshape(obj["n_items"], obj["n_focal"]),
        nu=np.array(obj["nu"], dtype=float),
        mu=np.array(obj["mu"], dtype=float),
        sigma=np.array(obj["sigma"], dtype=float),
    )


def fit_to_dict(fit: FitResult) -> dict:
    return {
        "schema": _tag("fit"),
        "params": params_to_dict(fit.params),
        "loglik": fit.loglik,
        "penalized_objective": fit.penalized_objective,
        "support": [list(p) for p in fit.support],
        "n_outer_iters": fit.n_outer_iters,
        "converged": fit.converged,
        "trace": list(fit.trace),
        "start_index": fit.start_index,
        "lam": fit.lam,
        "trace_loglik": list(fit.trace_loglik),
        "line_search_exhausted": list(fit.line_search_exhausted),
        "surrogate_decreased": list(fit.surrogate_decreased),
        "collapsed_classes": list(fit.collapsed_classes),
        "final_alpha": fit.final_alpha,
    }


def fit_from_dict(obj) -> FitResult:
    return FitResult(
        params=params_from_dict(obj["params"]),
        loglik=obj["loglik"],
        penalized_objective=obj["penalized_objective"],
        support=tuple(tuple(p) for p in obj["support"]),
        n_outer_iters=obj["n_outer_iters"],
        converged=obj["converged"],
        trace=tuple(obj["trace"]),
        start_index=obj["start_index"],
        lam=obj["lam"],
        trace_loglik=tuple(obj["trace_loglik"]),
        line_search_exhausted=tuple(obj["line_search_exhausted"]),
        surrogate_decreased=tuple(obj["surrogate_decreased"]),
        collapsed_classes=tuple(obj["collapsed_classes"]),
        final_alpha=obj.get("final_alpha", 0.0),
    )


def path_to_dict(path_result: PathResult) -> dict:
    return {
        "schema": _tag("path"),
        "lambdas": list(path_result.lambdas),
        "selected_index": path_result.selected_index,
        "records": [
            {
                "lam": rec.lam,
                "penalized_fit": fit_to_dict(rec.penalized_fit),
                "support": [list(p) for p in rec.support],
                "refit": fit_to_dict(rec.refit) if rec.refit is not None else None,
                "bic": rec.bic,
            }
            for rec in path_result.records
        ],
    }


def path_from_dict(obj) -> PathResult:
    records = tuple(
        PathRecord(
            lam=rec["lam"],
            penalized_fit=fit_from_dict(rec["penalized_fit"]),
            support=tuple(tuple(p) for p in rec["support"]),
            refit=fit_from_dict(rec["refit"]) if rec["refit"] is not None else None,
            bic=rec["bic"],
        )
        for rec in obj["records"]
    )
    return PathResult(lambdas=tuple(obj["lambdas"]), records=records,
                      selected_index=obj["selected_index"])


def selectk_to_dict(res: SelectKResult) -> dict:
    return {
        "schema": _tag("selectk"),
        "best_k": res.best_k,
        "paths": {str(k): path_to_dict(v) for k, v in res.paths.items()},
    }


def selectk_from_dict(obj) -> SelectKResult:
    return SelectKResult(
        paths={int(k): path_from_dict(v) for k, v in obj["paths"].items()},
        best_k=obj["best_k"],
    )


def write_fit(result, path) -> None:
    """Serialize a FitResult, PathResult, or SelectKResult to JSON."""
    if isinstance(result, FitResult):
        _dump(fit_to_dict(result), path)
    elif isinstance(result, PathResult):
        _dump(path_to_dict(result), path)
    elif isinstance(result, SelectKResult):
        _dump(selectk_to_dict(result), path)
    else:
        raise UsageError(f"cannot serialize {type(result).__name__}")


def read_fit(path):
    """Load whichever result type the file holds."""
    obj = _load(path)
    tag = str(obj.get("schema", ""))
    kind = tag.split("/")[1] if tag.count("/") == 2 else ""
    if kind not in ("fit", "path", "selectk"):
        raise DataError(f"{path}: not a result file (schema {tag!r})")
    _check_schema(obj, kind, path)
    if kind == "fit":
        return fit_from_dict(obj)
    if kind == "path":
        return path_from_dict(obj)
    return selectk_from_dict(obj)


# ---------------------------------------------------------------------------
# Simulation truth, designs, supports
# ---------------------------------------------------------------------------


def design_to_dict(design: SimDesign) -> dict:
    return {
        "design": design.design, "n": design.n, "pi_focal": design.pi_focal,
        "n_items": design.n_items, "n_dif_items": design.n_dif_items,
        "dif_range": list(design.dif_range), "d_range": list(design.d_range),
        "focal_mu": design.focal_mu, "focal_sigma": design.focal_sigma,
        "seed": design.seed,
    }


def design_from_dict(obj) -> SimDesign:
    return SimDesign(
        design=obj["design"], n=obj["n"], pi_focal=obj["pi_focal"],
        n_items=obj.get("n_items", 25), n_dif_items=obj.get("n_dif_items"),
        dif_range=tuple(obj.get("dif_range", (0.5, 1.5))),
        d_range=tuple(obj.get("d_range", (-2.0, 2.0))),
        focal_mu=obj.get("focal_mu", 0.75), focal_sigma=obj.get("focal_sigma", 0.8),
        seed=obj.get("seed", 0),
    )


def truth_to_dict(truth: SimTruth) -> dict:
    return {
        "schema": _tag("truth"),
        "params": params_to_dict(truth.params),
        "class_labels": truth.class_labels.tolist(),
        "thetas": truth.thetas.tolist(),
    }


def truth_from_dict(obj) -> SimTruth:
    return SimTruth(
        params=params_from_dict(obj["params"]),
        class_labels=np.array(obj["class_labels"], dtype=int),
        thetas=np.array(obj["thetas"], dtype=float),
    )


def write_truth(truth: SimTruth, path) -> None:
    _dump(truth_to_dict(truth), path)


def read_truth(path) -> SimTruth:
    obj = _load(path)
    _check_schema(obj, "truth", path)
    return truth_from_dict(obj)


def write_support(support, path) -> None:
    _dump({"schema": _tag("support"), "pairs": [list(p) for p in sorted(support)]}, path)


def read_support(path) -> frozenset:
    obj = _load(path)
    _check_schema(obj, "support", path)
    return frozenset((int(j), int(m)) for j, m in obj["pairs"])


# ---------------------------------------------------------------------------
# Study manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyManifest:
    """Replication study definition: the design grid and fit settings."""

    designs: tuple
    n_replications: int
    k_fit: int
    path_m: int
    master_seed: int
    output_dir: str
    fit_options: FitOptions
    grid_points: int = 61

    def __post_init__(self):
        if not self.designs:
            raise UsageError("manifest needs at least one design cell")
        if self.n_replications < 1:
            raise UsageError("n_replications must be >= 1")
        if self.k_fit < 0 or self.path_m < 2:
            raise UsageError("k_fit must be >= 0 and path_m >= 2")
        object.__setattr__(self, "designs", tuple(self.designs))


def options_to_dict(opts: FitOptions) -> dict:
    return {
        "max_outer_iter": opts.max_outer_iter, "tol": opts.tol,
        "n_starts": opts.n_starts, "seed": opts.seed, "step_init": opts.step_init,
        "candidate_set": sorted(list(p) for p in opts.candidate_set) if opts.candidate_set else None,
        "lambda_scale": opts.lambda_scale,
    }


def options_from_dict(obj) -> FitOptions:
    cand = obj.get("candidate_set")
    return FitOptions(
        max_outer_iter=obj.get("max_outer_iter", 500),
        tol=obj.get("tol", 1e-7),
        n_starts=obj.get("n_starts", 5),
        seed=obj.get("seed", 0),
        step_init=obj.get("step_init", 0.1),
        candidate_set=frozenset(tuple(p) for p in cand) if cand else None,
        lambda_scale=obj.get("lambda_scale", "total"),
    )


def manifest_to_text(manifest: StudyManifest) -> str:
    body = {
        "designs": [design_to_dict(d) for d in manifest.designs],
        "n_replications": manifest.n_replications,
        "k_fit": manifest.k_fit,
        "path_m": manifest.path_m,
        "master_seed": manifest.master_seed,
        "output_dir": manifest.output_dir,
        "fit_options": options_to_dict(manifest.fit_options),
        "grid_points": manifest.grid_points,
    }
    return MANIFEST_HEADER + "\n" + json.dumps(body, indent=1, sort_keys=True) + "\n"


def write_manifest(manifest: StudyManifest, path) -> None:
    Path(path).write_text(manifest_to_text(manifest), encoding="utf-8")


def read_manifest(path) -> StudyManifest:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    text = p.read_text(encoding="utf-8")
    lines = text.split("\n", 1)
    header = lines[0].strip()
    if not header.startswith("cllmix-manifest"):
        raise DataError(f"{p}: missing 'cllmix-manifest v<N>' header line")
    if header != MANIFEST_HEADER:
        raise SchemaVersionError(f"{p}: unsupported manifest version {header!r}")
    if len(lines) < 2 or not lines[1].strip():
        raise DataError(f"{p}: manifest body is empty")
    try:
        body = json.loads(lines[1])
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid manifest JSON ({exc})") from exc
    try:
        return StudyManifest(
            designs=tuple(design_from_dict(d) for d in body["designs"]),
            n_replications=body["n_replications"],
            k_fit=body["k_fit"],
            path_m=body.get("path_m", 30),
            master_seed=body["master_seed"],
            output_dir=body["output_dir"],
            fit_options=options_from_dict(body.get("fit_options", {})),
            grid_points=body.get("grid_points", 61),
        )
    except KeyError as exc:
        raise DataError(f"{p}: manifest is missing required field {exc}") from exc


# ---------------------------------------------------------------------------
# Replication records and aggregate reports
# ---------------------------------------------------------------------------


def rep_to_dict(record: ReplicationRecord, cell_index: int, seeds: dict) -> dict:
    return {
        "schema": _tag("rep"),
        "cell_index": cell_index,
        "replication_index": record.replication_index,
        "design": design_to_dict(record.design),
        "seeds": dict(seeds),
        "truth": truth_to_dict(record.truth),
        "fit": fit_to_dict(record.estimate),
        "class_posterior": record.class_posterior.tolist(),
    }


def rep_from_dict(obj) -> tuple[int, ReplicationRecord]:
    record = ReplicationRecord(
        truth=truth_from_dict(obj["truth"]),
        estimate=fit_from_dict(obj["fit"]),
        design=design_from_dict(obj["design"]),
        replication_index=obj["replication_index"],
        class_posterior=np.array(obj["class_posterior"], dtype=float),
    )
    return obj["cell_index"], record


def write_rep(record: ReplicationRecord, cell_index: int, seeds: dict, path) -> None:
    _dump(rep_to_dict(record, cell_index, seeds), path)


def read_rep(path) -> tuple[int, ReplicationRecord]:
    obj = _load(path)
    _check_schema(obj, "rep", path)
    return rep_from_dict(obj)


def report_to_dict(report: AggregateReport) -> dict:
    return {
        "d_bias": report.d_bias.tolist(), "d_rmse": report.d_rmse.tolist(),
        "delta_bias": report.delta_bias.tolist(), "delta_rmse": report.delta_rmse.tolist(),
        "pi_bias": report.pi_bias, "pi_rmse": report.pi_rmse,
        "mu1_bias": report.mu1_bias, "mu1_rmse": report.mu1_rmse,
        "sigma1_bias": report.sigma1_bias, "sigma1_rmse": report.sigma1_rmse,
        "tpr": report.tpr, "fpr": report.fpr,
        "classification_error": report.classification_error,
        "auc": report.auc, "naive_error": report.naive_error,
        "n_reps": report.n_reps,
        "roc_points": report.roc_points.tolist(),
    }


def report_from_dict(obj) -> AggregateReport:
    return AggregateReport(
        d_bias=np.array(obj["d_bias"]), d_rmse=np.array(obj["d_rmse"]),
        delta_bias=np.array(obj["delta_bias"]), delta_rmse=np.array(obj["delta_rmse"]),
        pi_bias=obj["pi_bias"], pi_rmse=obj["pi_rmse"],
        mu1_bias=obj["mu1_bias"], mu1_rmse=obj["mu1_rmse"],
        sigma1_bias=obj["sigma1_bias"], sigma1_rmse=obj["sigma1_rmse"],
        tpr=obj["tpr"], fpr=obj["fpr"],
        classification_error=obj["classification_error"],
        auc=obj["auc"], naive_error=obj["naive_error"],
        n_reps=obj["n_reps"],
        roc_points=np.array(obj["roc_points"], dtype=float).reshape(-1, 2),
    )


def write_study_report(cells, path) -> None:
    """``cells`` is a sequence of (SimDesign, AggregateReport) pairs."""
    _dump({
        "schema": _tag("report"),
        "cells": [
            {"design": design_to_dict(d), "report": report_to_dict(r)} for d, r in cells
        ],
    }, path)


def read_study_report(path) -> list:
    obj = _load(path)
    _check_schema(obj, "report", path)
    return [
        (design_from_dict(c["design"]), report_from_dict(c["report"]))
        for c in obj["cells"]
    ]


# ---------------------------------------------------------------------------
# Table exports
# ---------------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return "NA"
    x = float(x)
    return "NA" if np.isnan(x) else repr(x)


def _as_cells(report):
    if isinstance(report, AggregateReport):
        raise UsageError("export_tables needs (SimDesign, AggregateReport) pairs")
    if isinstance(report, tuple) and len(report) == 2 and isinstance(report[1], AggregateReport):
        return [report]
    return list(report)


def export_tables(report, style: str, path) -> None:
    """Write one CSV in the requested style from (design, report) cells.

    ``table2`` holds structural-parameter bias/RMSE long-format rows,
    ``table3`` the classification and detection metrics, ``itemgrid``
    per-item bias/RMSE rows (items numbered from 1), and ``roc`` the
    pooled ROC staircase of a single cell.
    """
    cells = _as_cells(report)
    if style not in EXPORT_STYLES:
        raise UsageError(f"style must be one of {EXPORT_STYLES}, got {style!r}")
    if not cells:
        raise UsageError("no cells to export")
    lines = []
    if style == "table2":
        missing = [
            f"{d.design}/N={d.n}/pi={d.pi_focal}" for d, r in cells
            if any(np.isnan([r.pi_bias, r.mu1_bias, r.sigma1_bias]))
        ]
        if missing:
            raise UsageError(f"incomplete report for cells: {', '.join(missing)}")
        lines.append("design,n,pi,parameter,bias,rmse")
        for d, r in cells:
            for name, b, m in (("pi", r.pi_bias, r.pi_rmse),
                               ("mu1", r.mu1_bias, r.mu1_rmse),
                               ("sigma1", r.sigma1_bias, r.sigma1_rmse)):
                lines.append(f"{d.design},{d.n},{_fmt(d.pi_focal)},{name},{_fmt(b)},{_fmt(m)}")
    elif style == "table3":
        lines.append("design,n,pi,metric,value")
        for d, r in cells:
            rows = (("classification_error", r.classification_error), ("auc", r.auc),
                    ("tpr", r.tpr), ("fpr", r.fpr), ("naive_error", r.naive_error))
            for name, v in rows:
                lines.append(f"{d.design},{d.n},{_fmt(d.pi_focal)},{name},{_fmt(v)}")
    elif style == "itemgrid":
        lines.append("design,n,pi,parameter,item,bias,rmse")
        for d, r in cells:
            for j in range(r.d_bias.size):
                lines.append(f"{d.design},{d.n},{_fmt(d.pi_focal)},d,{j + 1},"
                             f"{_fmt(r.d_bias[j])},{_fmt(r.d_rmse[j])}")
            for j in range(r.delta_bias.size):
                lines.append(f"{d.design},{d.n},{_fmt(d.pi_focal)},delta,{j + 1},"
                             f"{_fmt(r.delta_bias[j])},{_fmt(r.delta_rmse[j])}")
    elif style == "roc":
        if len(cells) != 1:
            raise UsageError("roc export takes exactly one cell")
        _, r = cells[0]
        if r.roc_points.size == 0:
            raise UsageError("incomplete report: no ROC points")
        lines.append("fpr,tpr")
        for fpr, tpr in r.roc_points:
            lines.append(f"{_fmt(fpr)},{_fmt(tpr)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
