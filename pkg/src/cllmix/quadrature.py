"""Fixed quadrature grid for integrating over the latent trait.

A single standardized grid of G nodes spans (-8, 8) with weights
proportional to the standard Gumbel density at each node. Class-specific
integrals use the affine transform theta = mu_k + sigma_k * rho, which
keeps the weights identical across classes and makes joint shifts of
(mu_k, delta_.k) leave the likelihood exactly invariant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

GRID_HALF_WIDTH = 8.0
DEFAULT_GRID_POINTS = 61


@dataclass(frozen=True)
class QuadratureGrid:
    """Standardized nodes and normalized Gumbel weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 3:
            raise UsageError("grid needs matching 1-D nodes/weights with >= 3 points")
        if np.any(np.diff(nodes) <= 0):
            raise UsageError("nodes must be strictly increasing")
        if nodes[0] <= -GRID_HALF_WIDTH or nodes[-1] >= GRID_HALF_WIDTH:
            raise UsageError("nodes must lie strictly inside the open interval")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise UsageError("weights must be positive and sum to 1")
        for name, arr in (("nodes", nodes), ("weights", weights)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self):
        return self.nodes.size


def build_grid(n_nodes: int = DEFAULT_GRID_POINTS) -> QuadratureGrid:
    """Evenly spaced nodes on (-8, 8), endpoints excluded, with standard
    Gumbel weights normalized to sum to one."""
    if n_nodes < 3:
        raise UsageError(f"n_nodes must be >= 3, got {n_nodes}")
    q = np.arange(1, n_nodes + 1, dtype=float)
    nodes = -GRID_HALF_WIDTH + 2.0 * GRID_HALF_WIDTH * q / (n_nodes + 1)
    with np.errstate(under="ignore"):
        weights = np.exp(-nodes - np.exp(-nodes))
    # the density underflows float64 deep in the lower tail; keep weights
    # strictly positive with a negligible floor before normalizing
    weights = np.maximum(weights, 1e-300)
    weights /= weights.sum()
    return QuadratureGrid(nodes=nodes, weights=weights)


def class_nodes(grid: QuadratureGrid, mu_k: float, sigma_k: float) -> np.ndarray:
    """Latent-trait nodes for a class with location mu_k and scale sigma_k."""
    if sigma_k <= 0:
        raise UsageError(f"sigma_k must be > 0, got {sigma_k}")
    return mu_k + sigma_k * grid.nodes


def all_class_nodes(grid: QuadratureGrid, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """(K+1) x G matrix of class-specific nodes."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise UsageError("all sigma entries must be > 0")
    return mu[:, None] + sigma[:, None] * grid.nodes[None, :]
