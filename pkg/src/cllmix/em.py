"""Proximal EM engine for penalized and support-constrained fits.

Each outer iteration runs an E-step over (class, node) cells, a
closed-form class-proportion update, and one gradient/proximal block
over (d, delta, mu, sigma) with a shared backtracking step size. DIF
coordinates receive soft-thresholded proximal updates in penalized
mode and plain gradient steps (restricted to the support) in
constrained mode. The engine minimizes the per-respondent mean of the
penalized objective; reported objectives are converted back to total
scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UsageError
from .likelihood import item_probability_tensors
from .model import (
    DELTA_CLIP,
    EULER_GAMMA,
    MU_BOUND,
    SIGMA_FLOOR,
    ModelParams,
    ResponseMatrix,
    cll_score,
)
from .quadrature import QuadratureGrid

# Line search constants: step growth across outer iterations, maximum
# halvings per search, and the relative allowance in the acceptance test.
LS_GROWTH = 1.15
LS_MAX_HALVINGS = 40
LS_EPS_ALLOW = 5e-3

# A focal class whose proportion stays below this for 10 consecutive
# iterations has its location/scale frozen to avoid degenerate drift.
COLLAPSE_NU = 1e-3
COLLAPSE_PATIENCE = 10

INIT_JITTER_SD = 0.25
INIT_PBAR_CLAMP = 0.01


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorWeights:
    """Joint posterior mass over (class, node) per respondent; shape (N, K+1, G)."""

    w: np.ndarray


@dataclass(frozen=True)
class EStepSufficientStats:
    """Aggregated posterior mass S (K+1, G) and success mass O (J, K+1, G)."""

    S: np.ndarray
    O: np.ndarray


@dataclass(frozen=True)
class GradientBundle:
    """Gradients of the negative expected complete-data log-likelihood."""

    d: np.ndarray
    delta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class LineSearchOutcome:
    accepted: object
    alpha: float
    objective: float
    exhausted: bool


@dataclass(frozen=True)
class FitOptions:
    """Convergence and initialization controls for a single fit."""

    max_outer_iter: int = 500
    tol: float = 1e-7
    n_starts: int = 5
    seed: int = 0
    step_init: float = 0.1
    candidate_set: frozenset | None = None
    lambda_scale: str = "total"

    def __post_init__(self):
        if self.max_outer_iter < 1:
            raise UsageError("max_outer_iter must be >= 1")
        if self.tol <= 0 or self.step_init <= 0:
            raise UsageError("tol and step_init must be > 0")
        if self.n_starts < 1:
            raise UsageError("n_starts must be >= 1")
        if self.lambda_scale not in ("total", "per_respondent"):
            raise UsageError("lambda_scale must be 'total' or 'per_respondent'")
        if self.candidate_set is not None:
            object.__setattr__(
                self, "candidate_set",
                frozenset((int(j), int(m)) for j, m in self.candidate_set),
            )


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus objective and iteration diagnostics.

    ``trace`` holds the per-respondent-scale penalized objective at the
    start of every outer iteration (including the final state), and
    ``trace_loglik`` the matching observed log-likelihood totals.
    ``surrogate_decreased[t]`` records whether iteration t's accepted
    M-step strictly decreased the smooth part of the surrogate, the
    condition under which EM guarantees observed log-likelihood ascent.
    """

    params: ModelParams
    loglik: float
    penalized_objective: float
    support: tuple
    n_outer_iters: int
    converged: bool
    trace: tuple
    start_index: int
    lam: float = 0.0
    trace_loglik: tuple = ()
    line_search_exhausted: tuple = ()
    surrogate_decreased: tuple = ()
    collapsed_classes: tuple = ()
    final_alpha: float = 0.0


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def _joint_and_stats(y, nu, grid, logp, log1mp):
    """Posterior weights and sufficient statistics for the current tensors.

    Returns (w_flat, S, O, lse) with w_flat shaped (N, (K+1)*G).
    """
    C, G, J = logp.shape
    with np.errstate(divide="ignore"):
        log_nu = np.log(nu)
    base = log_nu[:, None] + np.log(grid.weights)[None, :] + log1mp.sum(axis=2)
    slope = (logp - log1mp).reshape(C * G, J)
    ll = y @ slope.T + base.reshape(-1)[None, :]
    m = np.max(ll, axis=1)
    with np.errstate(under="ignore"):
        lse = m + np.log(np.sum(np.exp(ll - m[:, None]), axis=1))
    if not np.all(np.isfinite(lse)):
        bad = int(np.flatnonzero(~np.isfinite(lse))[0])
        raise NumericalError(f"non-finite posterior normalizer for respondent {bad}")
    with np.errstate(under="ignore"):
        w_flat = np.exp(ll - lse[:, None])
    S = w_flat.sum(axis=0).reshape(C, G)
    O = (y.T @ w_flat).reshape(J, C, G)
    return w_flat, S, O, lse


def e_step(params: ModelParams, responses: ResponseMatrix, grid: QuadratureGrid):
    """Posterior weights over (class, node) and their sufficient statistics."""
    if params.n_items != responses.n_items:
        raise UsageError("params/responses item dimensions disagree")
    _, logp, log1mp = item_probability_tensors(
        params.d, params.delta, params.mu, params.sigma, grid
    )
    y = responses.data.astype(float)
    w_flat, S, O, _ = _joint_and_stats(y, params.nu, grid, logp, log1mp)
    C, G = params.n_classes, grid.n_nodes
    w = w_flat.reshape(responses.n_respondents, C, G)
    return PosteriorWeights(w=w), EStepSufficientStats(S=S, O=O)


def m_step_nu(stats: EStepSufficientStats, n_respondents: int) -> np.ndarray:
    """Closed-form class proportion update (1/N) sum_i sum_q w_iq^(k)."""
    return stats.S.sum(axis=1) / n_respondents


def class_posteriors(params: ModelParams, responses: ResponseMatrix, grid: QuadratureGrid) -> np.ndarray:
    """Posterior class membership probabilities, shape (N, K+1)."""
    weights, _ = e_step(params, responses, grid)
    return weights.w.sum(axis=2)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def _score_tensor(d, delta, mu, sigma, grid):
    """Score factor s(z) at every (class, node, item) cell, shape (K+1, G, J)."""
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float).reshape(d.size, -1)
    shift = d[None, :] + np.concatenate([np.zeros((d.size, 1)), delta], axis=1).T
    theta = mu[:, None] + sigma[:, None] * grid.nodes[None, :]
    z = theta[:, :, None] - shift[:, None, :]
    return cll_score(z)


def _gradient_arrays(d, delta, mu, sigma, S, O, grid, n):
    """Raw gradient arrays of -Q/n; signs follow the objective derivation.

    With z = mu_k + sigma_k*rho_q - d_j - delta_jk the chain factors are
    dz/dd = dz/ddelta = -1, dz/dmu = +1, dz/dsigma = rho_q, which gives
    a positive sign on the item gradients and a negative sign on the
    structural ones.
    """
    P, _, _ = item_probability_tensors(d, delta, mu, sigma, grid)
    sfac = _score_tensor(d, delta, mu, sigma, grid)
    D = O - np.moveaxis(P, 2, 0) * S[None, :, :]
    T = D * np.moveaxis(sfac, 2, 0)  # (J, K+1, G)
    grad_d = T.sum(axis=(1, 2)) / n
    K = delta.shape[1] if np.ndim(delta) == 2 else 0
    if K:
        focal = T[:, 1:, :]
        grad_delta = focal.sum(axis=2) / n
        grad_mu = -focal.sum(axis=(0, 2)) / n
        grad_sigma = -(focal * grid.nodes[None, None, :]).sum(axis=(0, 2)) / n
    else:
        grad_delta = np.zeros((d.size, 0))
        grad_mu = np.zeros(0)
        grad_sigma = np.zeros(0)
    return grad_d, grad_delta, grad_mu, grad_sigma


def gradients(params: ModelParams, stats: EStepSufficientStats, grid: QuadratureGrid,
              flip_item_signs: bool = False) -> GradientBundle:
    """Gradient bundle of the negative expected complete-data log-likelihood.

    ``flip_item_signs`` negates the d/delta components; it exists only as
    a diagnostic to compare against the alternative sign convention and
    must stay False for fitting.
    """
    n = float(stats.S.sum())
    gd, gdelta, gmu, gsigma = _gradient_arrays(
        params.d, params.delta, params.mu, params.sigma, stats.S, stats.O, grid, n
    )
    if flip_item_signs:
        gd, gdelta = -gd, -gdelta
    return GradientBundle(d=gd, delta=gdelta, mu=gmu, sigma=gsigma)


# ---------------------------------------------------------------------------
# Proximal update and line search
# ---------------------------------------------------------------------------


def soft_threshold(x, tau):
    """Elementwise S_tau(x) = sign(x) * max(|x| - tau, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def _candidate_mask(n_items, n_focal, candidate_set):
    if candidate_set is None:
        return np.ones((n_items, n_focal), dtype=bool)
    mask = np.zeros((n_items, n_focal), dtype=bool)
    for j, m in candidate_set:
        if not (0 <= j < n_items and 0 <= m < n_focal):
            raise UsageError(f"candidate pair {(j, m)} out of range")
        mask[j, m] = True
    return mask


def prox_update(delta, grad_delta, alpha, lam, candidate_set=None):
    """Soft-thresholded gradient step on the DIF matrix, clipped to the box.

    ``lam`` must be on the same scale as ``grad_delta``; pairs outside the
    candidate set are pinned to zero.
    """
    if alpha <= 0:
        raise UsageError("alpha must be > 0")
    if lam < 0:
        raise UsageError("lambda must be >= 0")
    delta = np.asarray(delta, dtype=float)
    mask = _candidate_mask(delta.shape[0], delta.shape[1], candidate_set)
    out = soft_threshold(delta - alpha * np.asarray(grad_delta, dtype=float), alpha * lam)
    out = np.clip(out, -DELTA_CLIP, DELTA_CLIP)
    out[~mask] = 0.0
    return out


def line_search(current_objective, propose, alpha_init,
                max_halvings: int = LS_MAX_HALVINGS,
                eps_allow: float = LS_EPS_ALLOW) -> LineSearchOutcome:
    """Backtracking search: inflate the carried step by 1.15, then halve
    until the objective passes the relaxed acceptance test.

    ``propose(alpha)`` must return (candidate, objective). On exhaustion
    the outcome carries ``accepted=None`` and the caller keeps its
    current parameters.
    """
    if alpha_init <= 0:
        raise UsageError("alpha_init must be > 0")
    bound = current_objective + eps_allow * (abs(current_objective) + 1.0)
    alpha = alpha_init * LS_GROWTH
    for _ in range(max_halvings + 1):
        candidate, objective = propose(alpha)
        if objective <= bound:
            return LineSearchOutcome(accepted=candidate, alpha=alpha,
                                     objective=objective, exhausted=False)
        alpha *= 0.5
    return LineSearchOutcome(accepted=None, alpha=alpha_init,
                             objective=current_objective, exhausted=True)


# ---------------------------------------------------------------------------
# Fit driver
# ---------------------------------------------------------------------------


@dataclass
class _State:
    d: np.ndarray
    delta: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


def _initial_state(y, n_focal, start_index, seed):
    """Difficulty init inverts the CLL at the reference-class mean ability;
    focal locations are staggered at +/-0.5; later starts add seeded jitter."""
    n, J = y.shape
    pbar = np.clip(y.mean(axis=0), INIT_PBAR_CLAMP, 1.0 - INIT_PBAR_CLAMP)
    d = EULER_GAMMA - np.log(-np.log(1.0 - pbar))
    K = n_focal
    nu = np.full(K + 1, 1.0 / (K + 1))
    mu = np.zeros(K + 1)
    for k in range(1, K + 1):
        mu[k] = 0.5 if k % 2 == 1 else -0.5
    sigma = np.ones(K + 1)
    delta = np.zeros((J, K))
    if start_index > 0:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(start_index)]))
        d = d + rng.normal(0.0, INIT_JITTER_SD, size=J)
        if K:
            mu[1:] = np.clip(mu[1:] + rng.normal(0.0, INIT_JITTER_SD, size=K),
                             -MU_BOUND, MU_BOUND)
    return _State(d=d, delta=delta, nu=nu, mu=mu, sigma=sigma)


def _item_surrogate(O, S, logp, log1mp, n):
    """Smooth part of the M-step objective: -Q_items / n."""
    lp = np.moveaxis(logp, 2, 0)
    l1 = np.moveaxis(log1mp, 2, 0)
    return -(np.sum(O * lp) + np.sum((S[None, :, :] - O) * l1)) / n


@dataclass
class _RunOutput:
    state: _State
    loglik: float
    objective: float
    converged: bool
    n_updates: int
    trace: list
    trace_loglik: list
    ls_exhausted: list
    surrogate_decreased: list
    collapsed: list
    final_alpha: float


def _run_em(y, grid, opts, state, lam_int, mask, penalized):
    """Single EM run from one initialization. ``mask`` marks the DIF
    coordinates that may move; off-mask entries stay exactly zero."""
    n, J = y.shape
    K = state.delta.shape[1]
    alpha = opts.step_init
    trace, trace_loglik, ls_flags, surr_dec = [], [], [], []
    collapse_run = np.zeros(K, dtype=int)
    frozen = np.zeros(K, dtype=bool)
    converged = False
    n_updates = 0
    state.delta[~mask] = 0.0
    # the allowance in the line search permits occasional small objective
    # increases, so the last iterate need not be the best one seen
    best = None

    for it in range(opts.max_outer_iter + 1):
        _, logp, log1mp = item_probability_tensors(
            state.d, state.delta, state.mu, state.sigma, grid
        )
        _, S, O, lse = _joint_and_stats(y, state.nu, grid, logp, log1mp)
        loglik = float(lse.sum())
        f_obs = -loglik / n + lam_int * float(np.abs(state.delta).sum())
        trace.append(f_obs)
        trace_loglik.append(loglik)
        if best is None or f_obs < best[0]:
            best = (f_obs, loglik, _State(d=state.d.copy(), delta=state.delta.copy(),
                                          nu=state.nu.copy(), mu=state.mu.copy(),
                                          sigma=state.sigma.copy()))
        if it > 0 and abs(trace[-2] - f_obs) <= opts.tol * (abs(trace[-2]) + 1.0):
            converged = True
            break
        if it == opts.max_outer_iter:
            break

        # closed-form proportion update
        state.nu = S.sum(axis=1) / n
        for k in range(K):
            if state.nu[k + 1] < COLLAPSE_NU:
                collapse_run[k] += 1
            else:
                collapse_run[k] = 0
            if collapse_run[k] >= COLLAPSE_PATIENCE:
                frozen[k] = True

        # gradient/proximal block with shared step size
        n_float = float(S.sum())
        gd, gdelta, gmu, gsigma = _gradient_arrays(
            state.d, state.delta, state.mu, state.sigma, S, O, grid, n_float
        )
        if K:
            gdelta[~mask] = 0.0
            gmu[frozen] = 0.0
            gsigma[frozen] = 0.0
        pen_old = lam_int * float(np.abs(state.delta).sum())
        f_items_old = _item_surrogate(O, S, logp, log1mp, n_float) + pen_old

        def propose(a):
            d_t = state.d - a * gd
            if K:
                if penalized:
                    delta_t = soft_threshold(state.delta - a * gdelta, a * lam_int)
                else:
                    delta_t = state.delta - a * gdelta
                delta_t = np.clip(delta_t, -DELTA_CLIP, DELTA_CLIP)
                delta_t[~mask] = 0.0
                mu_t = state.mu.copy()
                mu_t[1:] = np.clip(state.mu[1:] - a * gmu, -MU_BOUND, MU_BOUND)
                sigma_t = state.sigma.copy()
                sigma_t[1:] = np.maximum(state.sigma[1:] - a * gsigma, SIGMA_FLOOR)
            else:
                delta_t, mu_t, sigma_t = state.delta, state.mu, state.sigma
            _, logp_t, log1mp_t = item_probability_tensors(d_t, delta_t, mu_t, sigma_t, grid)
            f_t = (_item_surrogate(O, S, logp_t, log1mp_t, n_float)
                   + lam_int * float(np.abs(delta_t).sum()))
            return _State(d=d_t, delta=delta_t, nu=state.nu, mu=mu_t, sigma=sigma_t), f_t

        outcome = line_search(f_items_old, propose, alpha)
        ls_flags.append(bool(outcome.exhausted))
        if outcome.exhausted:
            surr_dec.append(False)
        else:
            new_state = outcome.accepted
            pen_new = lam_int * float(np.abs(new_state.delta).sum())
            surr_dec.append(bool(outcome.objective - pen_new <= f_items_old - pen_old))
            state = new_state
            # carry the accepted step forward, but decay it when the step
            # was accepted on the allowance alone: growing the step after
            # non-descent acceptances locks the search into a limit cycle
            # above the stable-step ridge and stalls convergence
            if outcome.objective <= f_items_old:
                alpha = outcome.alpha
            else:
                alpha = outcome.alpha * 0.5
        n_updates += 1

    f_best, loglik_best, state_best = best
    collapsed = [k + 1 for k in range(K) if state_best.nu[k + 1] < COLLAPSE_NU]
    return _RunOutput(
        state=state_best, loglik=loglik_best, objective=f_best,
        converged=converged, n_updates=n_updates, trace=trace,
        trace_loglik=trace_loglik, ls_exhausted=ls_flags,
        surrogate_decreased=surr_dec, collapsed=collapsed,
        final_alpha=alpha,
    )


def _order_classes(state: _State):
    """Relabel focal classes by descending proportion (stable on ties)."""
    K = state.delta.shape[1]
    if K < 2:
        return state, np.arange(K)
    order = np.argsort(-state.nu[1:], kind="stable")
    nu = state.nu.copy()
    mu = state.mu.copy()
    sigma = state.sigma.copy()
    nu[1:] = state.nu[1:][order]
    mu[1:] = state.mu[1:][order]
    sigma[1:] = state.sigma[1:][order]
    return _State(d=state.d, delta=state.delta[:, order], nu=nu, mu=mu, sigma=sigma), order


def _result_from_run(run: _RunOutput, start_index, lam_total, n):
    state, order = _order_classes(run.state)
    params = ModelParams(
        n_items=state.d.size, n_focal=state.delta.shape[1],
        d=state.d, delta=state.delta, nu=state.nu, mu=state.mu, sigma=state.sigma,
    )
    remap = {int(old) + 1: new + 1 for new, old in enumerate(order)}
    collapsed = tuple(sorted(remap[k] for k in run.collapsed))
    j, m = np.nonzero(params.delta)
    support = tuple(sorted(zip(j.tolist(), m.tolist())))
    pen_obj = -run.loglik + lam_total * float(np.abs(params.delta).sum())
    return FitResult(
        params=params, loglik=run.loglik, penalized_objective=pen_obj,
        support=support, n_outer_iters=run.n_updates, converged=run.converged,
        trace=tuple(run.trace), start_index=start_index, lam=lam_total,
        trace_loglik=tuple(run.trace_loglik),
        line_search_exhausted=tuple(run.ls_exhausted),
        surrogate_decreased=tuple(run.surrogate_decreased),
        collapsed_classes=collapsed,
        final_alpha=run.final_alpha,
    )


def _state_from_params(params: ModelParams) -> _State:
    return _State(
        d=params.d.copy(), delta=params.delta.copy(), nu=params.nu.copy(),
        mu=params.mu.copy(), sigma=params.sigma.copy(),
    )


def _lam_internal(lam, n, opts):
    if lam < 0:
        raise UsageError("lambda must be >= 0")
    return lam / n if opts.lambda_scale == "total" else lam


def _lam_total(lam, n, opts):
    return lam if opts.lambda_scale == "total" else lam * n


# Activated coordinates below this magnitude trigger a zero-sweep polish:
# near the KKT activation boundary, transit through high-gradient regions
# can latch a coordinate at a tiny value even when the zero solution is
# at least as good.
SWEEP_DELTA = 0.05


def _zero_sweep(y, grid, opts, run, lam_int, mask, n_focal):
    small = (run.state.delta != 0.0) & (np.abs(run.state.delta) < SWEEP_DELTA)
    if not small.any():
        return run
    state = _State(d=run.state.d.copy(), delta=run.state.delta.copy(),
                   nu=run.state.nu.copy(), mu=run.state.mu.copy(),
                   sigma=run.state.sigma.copy())
    state.delta[small] = 0.0
    # pin the swept coordinates so boundary coordinates cannot latch again,
    # then keep whichever solution has the better penalized objective
    swept = _run_em(y, grid, opts, state, lam_int, mask & ~small, True)
    return swept if swept.objective <= run.objective else run


def _drive_fit(responses, n_focal, lam, grid, opts, mask, penalized, warm_start):
    y = responses.data.astype(float)
    n = responses.n_respondents
    lam_int = _lam_internal(lam, n, opts)
    lam_total = _lam_total(lam, n, opts)
    if warm_start is not None:
        if warm_start.n_items != responses.n_items or warm_start.n_focal != n_focal:
            raise UsageError("warm start dimensions disagree with the requested fit")
        run = _run_em(y, grid, opts, _state_from_params(warm_start), lam_int, mask, penalized)
        if penalized:
            run = _zero_sweep(y, grid, opts, run, lam_int, mask, n_focal)
        return _result_from_run(run, 0, lam_total, n)
    best = None
    for s in range(opts.n_starts):
        init = _initial_state(y, n_focal, s, opts.seed)
        run = _run_em(y, grid, opts, init, lam_int, mask, penalized)
        if best is None or run.objective < best[1].objective:
            best = (s, run)
    start_index, run = best
    if penalized:
        run = _zero_sweep(y, grid, opts, run, lam_int, mask, n_focal)
    return _result_from_run(run, start_index, lam_total, n)


def fit_penalized(responses: ResponseMatrix, n_focal: int, lam: float,
                  grid: QuadratureGrid, opts: FitOptions | None = None,
                  warm_start: ModelParams | None = None) -> FitResult:
    """L1-penalized fit: multi-start proximal EM, classes ordered by
    proportion on exit. With ``warm_start`` a single run is performed."""
    opts = opts or FitOptions()
    mask = _candidate_mask(responses.n_items, n_focal, opts.candidate_set)
    return _drive_fit(responses, n_focal, lam, grid, opts, mask, True, warm_start)


def fit_constrained(responses: ResponseMatrix, n_focal: int, support,
                    grid: QuadratureGrid, opts: FitOptions | None = None,
                    warm_start: ModelParams | None = None) -> FitResult:
    """Unpenalized fit with off-support DIF pinned to zero throughout."""
    opts = opts or FitOptions()
    mask = _candidate_mask(responses.n_items, n_focal, frozenset(support))
    return _drive_fit(responses, n_focal, 0.0, grid, opts, mask, False, warm_start)
