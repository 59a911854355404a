import numpy as np
import pytest

from cllmix import ModelParams, ResponseMatrix, build_grid


@pytest.fixture(scope="session")
def grid61():
    return build_grid(61)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(rng, n_items=5, n_focal=1, delta_scale=1.0):
    """In-range random model parameters for property tests."""
    d = rng.uniform(-1.5, 1.5, n_items)
    delta = rng.uniform(-delta_scale, delta_scale, (n_items, n_focal))
    raw = rng.uniform(0.2, 1.0, n_focal + 1)
    nu = raw / raw.sum()
    nu[0] = 1.0 - nu[1:].sum()
    mu = np.concatenate([[0.0], rng.uniform(-1.0, 1.0, n_focal)])
    sigma = np.concatenate([[1.0], rng.uniform(0.6, 1.4, n_focal)])
    return ModelParams(n_items=n_items, n_focal=n_focal, d=d, delta=delta,
                       nu=nu, mu=mu, sigma=sigma)


def random_responses(rng, n=50, n_items=5):
    return ResponseMatrix(data=(rng.random((n, n_items)) < rng.uniform(0.2, 0.8, n_items)).astype(np.int8))
