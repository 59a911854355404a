"""Data generation for the two benchmark designs and arbitrary models.

Design A draws DIF shifts on the first block of items; Design B shares
the impact structure but is DIF-free. All sampling is inverse-CDF from
one seeded stream, so a design cell is fully reproducible from its seed
alone and independent of scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .model import ModelParams, ResponseMatrix, cll_prob

DESIGN_DIF_ITEMS = {"A": 10, "B": 0}


@dataclass(frozen=True)
class SimDesign:
    """One simulation cell: design, sample size, and generator settings."""

    design: str
    n: int
    pi_focal: float
    n_items: int = 25
    n_dif_items: int | None = None
    dif_range: tuple = (0.5, 1.5)
    d_range: tuple = (-2.0, 2.0)
    focal_mu: float = 0.75
    focal_sigma: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.design not in ("A", "B", "custom"):
            raise UsageError(f"design must be A, B, or custom, got {self.design!r}")
        if self.n < 1 or self.n_items < 1:
            raise UsageError("n and n_items must be >= 1")
        if not 0.0 < self.pi_focal < 1.0:
            raise UsageError(f"pi_focal must be in (0, 1), got {self.pi_focal}")
        if not (self.dif_range[0] < self.dif_range[1] and self.d_range[0] < self.d_range[1]):
            raise UsageError("parameter ranges must be ordered")
        if self.focal_sigma <= 0:
            raise UsageError("focal_sigma must be > 0")
        if self.n_dif_items is None:
            default = min(DESIGN_DIF_ITEMS.get(self.design, 0), self.n_items)
            object.__setattr__(self, "n_dif_items", default)
        if self.design == "B" and self.n_dif_items != 0:
            raise UsageError("design B is DIF-free; n_dif_items must be 0")
        if not 0 <= self.n_dif_items <= self.n_items:
            raise UsageError("n_dif_items must lie in [0, n_items]")


@dataclass(frozen=True)
class SimTruth:
    """Generating parameters plus the latent draws behind one dataset."""

    params: ModelParams
    class_labels: np.ndarray
    thetas: np.ndarray


def _sample_responses(params: ModelParams, n: int, rng) -> tuple[ResponseMatrix, SimTruth]:
    """Shared sampling pipeline: class labels, traits, then responses,
    each via inverse CDF on fresh uniforms."""
    cum = np.cumsum(params.nu)
    labels = np.searchsorted(cum, rng.random(n), side="right")
    labels = np.minimum(labels, params.n_focal)  # guard against cum[-1] < 1 rounding
    u = rng.random(n)
    thetas = params.mu[labels] - params.sigma[labels] * np.log(-np.log(u))
    delta_full = np.concatenate([np.zeros((params.n_items, 1)), params.delta], axis=1)
    shift = params.d[None, :] + delta_full[:, labels].T
    probs = cll_prob(thetas[:, None] - shift)
    y = (rng.random((n, params.n_items)) < probs).astype(np.int8)
    return ResponseMatrix(data=y), SimTruth(params=params, class_labels=labels, thetas=thetas)


def generate(design: SimDesign) -> tuple[ResponseMatrix, SimTruth]:
    """Simulate one dataset from Design A or B; item parameters are drawn
    fresh from the design's ranges on every call (per-replication draws)."""
    if design.design not in ("A", "B"):
        raise UsageError("generate handles designs A and B; use generate_custom otherwise")
    rng = np.random.default_rng(np.random.SeedSequence(int(design.seed)))
    J = design.n_items
    d = rng.uniform(design.d_range[0], design.d_range[1], size=J)
    delta = np.zeros((J, 1))
    if design.n_dif_items:
        delta[: design.n_dif_items, 0] = rng.uniform(
            design.dif_range[0], design.dif_range[1], size=design.n_dif_items
        )
    params = ModelParams(
        n_items=J, n_focal=1, d=d, delta=delta,
        nu=np.array([1.0 - design.pi_focal, design.pi_focal]),
        mu=np.array([0.0, design.focal_mu]),
        sigma=np.array([1.0, design.focal_sigma]),
    )
    return _sample_responses(params, design.n, rng)


def generate_custom(params: ModelParams, n: int, seed: int) -> tuple[ResponseMatrix, SimTruth]:
    """Simulate from arbitrary model parameters (parametric bootstrap)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    return _sample_responses(params, n, rng)
