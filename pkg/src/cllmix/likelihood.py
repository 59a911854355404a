"""Marginal likelihood of the mixture CLL model under fixed quadrature.

The per-respondent contribution is a log-sum-exp over (class, node)
cells: the inner item product is accumulated as a sum of log
probabilities, which stays finite for long tests where the direct
product would underflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UsageError
from .model import PROB_FLOOR, ModelParams, ResponseMatrix
from .quadrature import QuadratureGrid, all_class_nodes


@dataclass(frozen=True)
class LikelihoodValue:
    """Total marginal log-likelihood and its per-respondent decomposition."""

    loglik: float
    per_respondent: np.ndarray


def item_probability_tensors(d, delta, mu, sigma, grid):
    """Clamped response probabilities and their logs at every class node.

    Returns (P, logP, log1mP), each shaped (K+1, G, J).
    """
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float).reshape(d.size, -1)
    theta = all_class_nodes(grid, mu, sigma)  # (K+1, G)
    shift = d[None, :] + np.concatenate([np.zeros((d.size, 1)), delta], axis=1).T
    z = theta[:, :, None] - shift[:, None, :]
    with np.errstate(under="ignore", over="ignore"):
        p = -np.expm1(-np.exp(z))
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return p, np.log(p), np.log1p(-p)


def _check_dims(params: ModelParams, responses: ResponseMatrix):
    if params.n_items != responses.n_items:
        raise UsageError(
            f"params expect {params.n_items} items but responses have {responses.n_items}"
        )


def log_joint_matrix(params: ModelParams, responses: ResponseMatrix, grid: QuadratureGrid):
    """Log joint mass of each (class, node) cell per respondent.

    Returns (ll, lse): ll has shape (N, (K+1)*G) with entries
    log[nu_k * omega_q * prod_j Bern(Y_ij | P_jk(theta_q^k))], and lse is
    the per-respondent log-sum-exp, i.e. the marginal log-likelihood
    contribution. Cells of classes with nu_k = 0 are -inf.
    """
    _check_dims(params, responses)
    C, G = params.n_classes, grid.n_nodes
    _, logp, log1mp = item_probability_tensors(
        params.d, params.delta, params.mu, params.sigma, grid
    )
    with np.errstate(divide="ignore"):
        log_nu = np.log(params.nu)
    base = log_nu[:, None] + np.log(grid.weights)[None, :] + log1mp.sum(axis=2)
    slope = (logp - log1mp).reshape(C * G, params.n_items)
    y = responses.data.astype(float)
    ll = y @ slope.T + base.reshape(-1)[None, :]
    m = np.max(ll, axis=1)
    with np.errstate(under="ignore"):
        lse = m + np.log(np.sum(np.exp(ll - m[:, None]), axis=1))
    if not np.all(np.isfinite(lse)):
        bad = int(np.flatnonzero(~np.isfinite(lse))[0])
        raise NumericalError(f"non-finite marginal likelihood for respondent {bad}")
    return ll, lse


def marginal_loglik(params: ModelParams, responses: ResponseMatrix, grid: QuadratureGrid) -> LikelihoodValue:
    """Total and per-respondent marginal log-likelihood."""
    _, lse = log_joint_matrix(params, responses, grid)
    return LikelihoodValue(loglik=float(lse.sum()), per_respondent=lse)


def penalty_value(params: ModelParams) -> float:
    """Entrywise absolute sum of the DIF matrix."""
    return float(np.abs(params.delta).sum())


def penalized_objective(params: ModelParams, responses: ResponseMatrix, grid: QuadratureGrid, lam: float) -> float:
    """Negative marginal log-likelihood plus lam * sum |delta| (total scale)."""
    if lam < 0:
        raise UsageError(f"lambda must be >= 0, got {lam}")
    value = marginal_loglik(params, responses, grid)
    return -value.loglik + lam * penalty_value(params)
