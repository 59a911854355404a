"""Core measurement model: CLL link, Gumbel densities, and parameter containers.

The item response function is F(theta - d_j - delta_jk) with the
complementary log-log link F(z) = 1 - exp(-exp(z)). Class-conditional
latent traits follow Gumbel(mu_k, sigma_k) distributions, with the
reference class pinned at mu_0 = 0, sigma_0 = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

EULER_GAMMA = 0.5772156649015329

# Probabilities are clamped away from {0, 1} so that log-likelihood terms
# and score factors stay finite everywhere.
PROB_FLOOR = 1e-12

# DIF estimates are clipped to this box to keep the score factor finite
# at extreme values of the CLL argument.
DELTA_CLIP = 3.0

# Guards against mixture degeneracy during estimation.
SIGMA_FLOOR = 0.05
MU_BOUND = 4.0


def _check_finite(name, x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{name} must be finite, got {x!r}")
    return arr


def cll_prob(z):
    """Complementary log-log response probability F(z) = 1 - exp(-exp(z)).

    Accepts scalars or arrays; the result is clamped to
    [PROB_FLOOR, 1 - PROB_FLOOR] for downstream log safety.
    """
    arr = _check_finite("z", z)
    p = -np.expm1(-np.exp(arr))
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(p) if np.isscalar(z) or np.ndim(z) == 0 else p


def cll_score(z):
    """Score factor s(z) = exp(z - exp(z)) / [F(z)(1 - F(z))] with clamped F.

    This is the derivative of the log-odds of F; it multiplies the
    residual (Y - F) in every gradient of the expected complete-data
    log-likelihood. It tends to 1 as z -> -inf and decays to 0 in the
    upper tail because the numerator vanishes double-exponentially.
    """
    arr = _check_finite("z", z)
    p = np.clip(-np.expm1(-np.exp(arr)), PROB_FLOOR, 1.0 - PROB_FLOOR)
    with np.errstate(under="ignore"):
        num = np.exp(arr - np.exp(arr))
    s = num / (p * (1.0 - p))
    return float(s) if np.isscalar(z) or np.ndim(z) == 0 else s


def gumbel_pdf(theta, mu, sigma):
    """Gumbel density (1/sigma) exp(-z - exp(-z)) with z = (theta - mu)/sigma."""
    if sigma <= 0:
        raise UsageError(f"sigma must be > 0, got {sigma}")
    t = _check_finite("theta", theta)
    z = (t - mu) / sigma
    with np.errstate(under="ignore"):
        out = np.exp(-z - np.exp(-z)) / sigma
    return float(out) if np.ndim(theta) == 0 else out


def gumbel_sample(mu, sigma, rng, size=None):
    """Draw Gumbel(mu, sigma) variates by inverse CDF: mu - sigma*log(-log(U)).

    Inverse-CDF sampling keeps the draw a deterministic function of the
    supplied random stream, which replication seeding relies on.
    """
    if sigma <= 0:
        raise UsageError(f"sigma must be > 0, got {sigma}")
    u = rng.random(size)
    return mu - sigma * np.log(-np.log(u))


def irf(theta, d_j, delta_jk):
    """Response probability for an item with difficulty d_j and DIF shift delta_jk."""
    t = _check_finite("theta", theta)
    d = _check_finite("d_j", d_j)
    dd = _check_finite("delta_jk", delta_jk)
    return cll_prob(t - d - dd)


@dataclass(frozen=True)
class ModelParams:
    """All free parameters of the mixture CLL model.

    Focal classes are indexed k = 1..K; the reference class k = 0 is pinned
    by mu[0] = 0, sigma[0] = 1 and carries no DIF column. ``delta`` has one
    column per focal class, so delta[j, m] is the shift for item j in focal
    class m+1.
    """

    n_items: int
    n_focal: int
    d: np.ndarray
    delta: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        J, K = int(self.n_items), int(self.n_focal)
        if J < 1:
            raise UsageError(f"n_items must be >= 1, got {J}")
        if K < 0:
            raise UsageError(f"n_focal must be >= 0, got {K}")
        d = _check_finite("d", self.d)
        delta = _check_finite("delta", self.delta).reshape(J, K) if K else np.zeros((J, 0))
        nu = _check_finite("nu", self.nu)
        mu = _check_finite("mu", self.mu)
        sigma = _check_finite("sigma", self.sigma)
        if d.shape != (J,):
            raise UsageError(f"d must have shape ({J},), got {d.shape}")
        if K and delta.shape != (J, K):
            raise UsageError(f"delta must have shape ({J}, {K}), got {delta.shape}")
        if nu.shape != (K + 1,) or mu.shape != (K + 1,) or sigma.shape != (K + 1,):
            raise UsageError(f"nu/mu/sigma must have shape ({K + 1},)")
        if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
            raise UsageError(f"nu must be on the simplex, got {nu}")
        if mu[0] != 0.0 or sigma[0] != 1.0:
            raise UsageError("reference class requires mu[0] == 0 and sigma[0] == 1")
        if np.any(np.abs(delta) > DELTA_CLIP):
            raise UsageError(f"|delta| entries must be <= {DELTA_CLIP}")
        if np.any(sigma < SIGMA_FLOOR):
            raise UsageError(f"sigma entries must be >= {SIGMA_FLOOR}")
        for name, arr in (("d", d), ("delta", delta), ("nu", nu), ("mu", mu), ("sigma", sigma)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n_items", J)
        object.__setattr__(self, "n_focal", K)

    @property
    def n_classes(self):
        return self.n_focal + 1

    def support(self):
        """Set of (item, focal) index pairs with nonzero DIF."""
        j, m = np.nonzero(self.delta)
        return frozenset(zip(j.tolist(), m.tolist()))

    def replace(self, **kwargs):
        """New ModelParams with the given fields replaced (re-validated)."""
        fields = dict(
            n_items=self.n_items, n_focal=self.n_focal, d=self.d, delta=self.delta,
            nu=self.nu, mu=self.mu, sigma=self.sigma,
        )
        fields.update(kwargs)
        return ModelParams(**fields)


@dataclass(frozen=True)
class ResponseMatrix:
    """N x J binary response data. Entries must be exactly 0 or 1."""

    data: np.ndarray
    item_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise UsageError(f"responses must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise UsageError("responses must contain only 0/1 entries")
        arr = arr.astype(np.int8)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        if self.item_names is not None:
            names = tuple(str(s) for s in self.item_names)
            if len(names) != arr.shape[1]:
                raise UsageError("item_names length must match the number of columns")
            object.__setattr__(self, "item_names", names)

    @property
    def n_respondents(self):
        return self.data.shape[0]

    @property
    def n_items(self):
        return self.data.shape[1]
