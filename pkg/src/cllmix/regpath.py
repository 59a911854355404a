"""Two-stage penalize-then-refit path with BIC selection over lambda and K.

The grid starts at the smallest lambda that keeps every DIF coordinate
at zero (a KKT bound evaluated at the impact-only fit) and descends
geometrically over three decades. Each path point is fit penalized,
its support extracted, then refit without the penalty on that support;
BIC is computed from the refit.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .em import FitOptions, FitResult, e_step, fit_constrained, fit_penalized, gradients
from .errors import NumericalError, UsageError
from .model import ResponseMatrix
from .quadrature import QuadratureGrid

DEFAULT_PATH_POINTS = 30
LAMBDA_SPAN = 1e-3  # smallest lambda_grid value relative to lambda_max

# The path sweep covers [PATH_BOTTOM_SCALE, PATH_TOP_SCALE] * lambda_max.
# The top extension matters because the penalized problem is nonconvex:
# solutions carrying DIF structure stay active above the KKT bound of the
# impact-only stationary point, and the cleanest sparse supports live there.
PATH_TOP_SCALE = 3.0
PATH_BOTTOM_SCALE = 0.02


@dataclass(frozen=True)
class PathRecord:
    """One lambda's penalized fit, extracted support, refit, and BIC."""

    lam: float
    penalized_fit: FitResult
    support: tuple
    refit: FitResult | None
    bic: float | None


@dataclass(frozen=True)
class PathResult:
    """Full lambda path; ``selected_index`` is None only if every refit failed."""

    lambdas: tuple
    records: tuple
    selected_index: int | None

    @property
    def selected_model(self) -> FitResult:
        if self.selected_index is None:
            raise NumericalError("no admissible path point was found")
        return self.records[self.selected_index].refit

    @property
    def selected_lambda(self) -> float:
        if self.selected_index is None:
            raise NumericalError("no admissible path point was found")
        return self.records[self.selected_index].lam


@dataclass(frozen=True)
class SelectKResult:
    """Per-K paths plus the K whose selected model minimizes BIC."""

    paths: dict
    best_k: int

    @property
    def best_path(self) -> PathResult:
        return self.paths[self.best_k]


LAMBDA_MAX_ESCALATION = 1.8
LAMBDA_MAX_PROBES = 8


def _lambda_max(responses, n_focal, grid, opts):
    """Smallest total-scale lambda that keeps every DIF coordinate at zero.

    Starts from the KKT bound N * max |grad_delta| at the impact-only fit.
    That bound is only local in this nonconvex problem (solutions in other
    basins can stay active above it), so it is escalated until a fit at
    the candidate value actually returns an empty support.
    """
    impact = fit_constrained(responses, n_focal, frozenset(), grid, opts)
    _, stats = e_step(impact.params, responses, grid)
    g = gradients(impact.params, stats, grid)
    lam_max = max(responses.n_respondents * float(np.max(np.abs(g.delta))), 1e-10)
    for _ in range(LAMBDA_MAX_PROBES):
        probe = fit_penalized(responses, n_focal, lam_max, grid, opts)
        if not probe.support:
            break
        lam_max *= LAMBDA_MAX_ESCALATION
    return lam_max, impact


def lambda_grid(responses: ResponseMatrix, n_focal: int, n_points: int,
                grid: QuadratureGrid, opts: FitOptions | None = None) -> np.ndarray:
    """Descending geometric lambda grid from the KKT zero-support bound.

    lambda_max is the smallest penalty for which the proximal fixed point
    at the impact-only fit keeps every DIF coordinate at zero; below the
    returned minimum the penalty is effectively off.
    """
    if n_points < 2:
        raise UsageError("n_points must be >= 2")
    if n_focal < 1:
        raise UsageError("lambda grid requires at least one focal class")
    opts = opts or FitOptions()
    lam_max, _ = _lambda_max(responses, n_focal, grid, opts)
    return np.geomspace(lam_max, LAMBDA_SPAN * lam_max, n_points)


def bic(refit: FitResult, n_respondents: int) -> float:
    """BIC = -2 loglik + log(N) * card, counting free parameters only:
    J difficulties, the selected DIF entries, K proportions, and the
    focal locations and scales."""
    p = refit.params
    card = p.n_items + len(refit.support) + 3 * p.n_focal
    return -2.0 * refit.loglik + np.log(n_respondents) * card


def _impact_only_path(responses, grid, opts):
    fit = fit_constrained(responses, 0, frozenset(), grid, opts)
    record = PathRecord(lam=0.0, penalized_fit=fit, support=(),
                        refit=fit, bic=bic(fit, responses.n_respondents))
    return PathResult(lambdas=(0.0,), records=(record,), selected_index=0)


def _refit_record(responses, n_focal, lam, pen, grid, opts):
    try:
        refit = fit_constrained(responses, n_focal, frozenset(pen.support),
                                grid, opts, warm_start=pen.params)
        b = bic(refit, responses.n_respondents)
        if not np.isfinite(b):
            refit, b = None, None
    except NumericalError:
        refit, b = None, None
    return PathRecord(lam=float(lam), penalized_fit=pen,
                      support=pen.support, refit=refit, bic=b)


def _carry(opts, fit):
    """Options for a warm continuation: keep the equilibrium step size so
    the next fit does not stall on a cold initial step."""
    return replace(opts, step_init=max(fit.final_alpha, opts.step_init))


def two_stage_path(responses: ResponseMatrix, n_focal: int,
                   n_lambdas: int = DEFAULT_PATH_POINTS,
                   grid: QuadratureGrid | None = None,
                   opts: FitOptions | None = None,
                   warm_starts: bool = True) -> PathResult:
    """Penalize-then-refit over a geometric lambda sweep, with BIC
    selecting the final model and ties broken toward larger lambda.

    The sweep is bidirectional: a descending pass warm-starts each
    penalized fit from the previous solution (and its refit), then an
    ascending pass carries dense-support solutions back up, replacing a
    record whenever it finds a lower penalized objective at that lambda.
    The upward pass is what reaches sparse supports that coexist with the
    impact-only solution above its own activation threshold.

    With ``warm_starts=False`` every lambda is fit cold (order-independent,
    used for diagnostics). With no focal classes the path degenerates to
    the single unpenalized fit.
    """
    opts = opts or FitOptions()
    if grid is None:
        raise UsageError("a quadrature grid is required")
    if n_focal == 0:
        return _impact_only_path(responses, grid, opts)
    if n_lambdas < 2:
        raise UsageError("n_lambdas must be >= 2")
    lam_max, _ = _lambda_max(responses, n_focal, grid, opts)
    lams = np.geomspace(PATH_TOP_SCALE * lam_max, PATH_BOTTOM_SCALE * lam_max, n_lambdas)
    n = responses.n_respondents

    if not warm_starts:
        records = [
            _refit_record(responses, n_focal, lam,
                          fit_penalized(responses, n_focal, float(lam), grid, opts),
                          grid, opts)
            for lam in lams
        ]
    else:
        # descending pass: cold multi-start at the top, then dual warm
        # candidates (previous penalized solution and its refit)
        records = []
        candidates = [None]
        run_opts = opts
        for lam in lams:
            fits = [
                fit_penalized(responses, n_focal, float(lam), grid,
                              run_opts if w is not None else opts, warm_start=w)
                for w in candidates
            ]
            pen = min(fits, key=lambda f: f.penalized_objective)
            rec = _refit_record(responses, n_focal, lam, pen, grid, _carry(opts, pen))
            records.append(rec)
            run_opts = _carry(opts, pen)
            candidates = [pen.params]
            if rec.refit is not None:
                candidates.append(rec.refit.params)
        # ascending pass: strip items off the densest solution and keep
        # whichever solution is better at each lambda
        prev = records[-1].penalized_fit
        for m in range(n_lambdas - 2, -1, -1):
            pen_up = fit_penalized(responses, n_focal, float(lams[m]), grid,
                                   _carry(opts, prev), warm_start=prev.params)
            if pen_up.penalized_objective < records[m].penalized_fit.penalized_objective:
                records[m] = _refit_record(responses, n_focal, lams[m], pen_up,
                                           grid, _carry(opts, pen_up))
            prev = records[m].penalized_fit

    selected = None
    for i, rec in enumerate(records):
        if rec.bic is None:
            continue
        if selected is None or rec.bic < records[selected].bic:
            selected = i
    return PathResult(lambdas=tuple(float(x) for x in lams),
                      records=tuple(records), selected_index=selected)


def select_k(responses: ResponseMatrix, k_candidates,
             n_lambdas: int = DEFAULT_PATH_POINTS,
             grid: QuadratureGrid | None = None,
             opts: FitOptions | None = None) -> SelectKResult:
    """Run a full path for every candidate number of focal classes and
    return the K whose selected model has the smallest BIC."""
    ks = sorted(set(int(k) for k in k_candidates))
    if not ks:
        raise UsageError("k_candidates must be non-empty")
    if any(k < 0 for k in ks):
        raise UsageError("k_candidates must be non-negative")
    paths = {}
    best_k, best_bic = None, None
    for k in ks:
        path = two_stage_path(responses, k, n_lambdas, grid, opts)
        paths[k] = path
        if path.selected_index is None:
            continue
        b = path.records[path.selected_index].bic
        if best_bic is None or b < best_bic:
            best_k, best_bic = k, b
    if best_k is None:
        raise NumericalError("no candidate K produced an admissible fit")
    return SelectKResult(paths=paths, best_k=best_k)
