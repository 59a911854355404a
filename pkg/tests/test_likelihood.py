"""Tests for the marginal likelihood and its invariances."""
import numpy as np
import pytest

from cllmix import ModelParams, ResponseMatrix, build_grid, marginal_loglik, penalized_objective
from cllmix.errors import UsageError
from conftest import random_params, random_responses


def _single_item_params(d0=0.0, n_focal=0):
    return ModelParams(
        n_items=1, n_focal=n_focal,
        d=np.array([d0]),
        delta=np.zeros((1, n_focal)),
        nu=np.ones(n_focal + 1) / (n_focal + 1) if n_focal else np.array([1.0]),
        mu=np.zeros(n_focal + 1),
        sigma=np.ones(n_focal + 1),
    )


class TestMarginalLoglik:
    def test_single_item_against_direct_sum(self, grid61):
        """One item, one respondent answering 1: the marginal is the
        61-term weighted sum of link values, computed here directly."""
        params = _single_item_params()
        resp = ResponseMatrix(data=np.array([[1]]))
        expected = np.log(np.sum(grid61.weights * (1 - np.exp(-np.exp(grid61.nodes)))))
        got = marginal_loglik(params, resp, grid61).loglik
        assert got == pytest.approx(expected, abs=1e-10)

    def test_zero_weight_class_matches_k0(self, grid61, rng):
        resp = random_responses(rng, n=40, n_items=6)
        p0 = random_params(rng, n_items=6, n_focal=0)
        p1 = ModelParams(
            n_items=6, n_focal=1, d=p0.d, delta=np.zeros((6, 1)),
            nu=np.array([1.0, 0.0]), mu=np.array([0.0, 0.5]), sigma=np.array([1.0, 0.8]),
        )
        l0 = marginal_loglik(p0, resp, grid61).loglik
        l1 = marginal_loglik(p1, resp, grid61).loglik
        assert l1 == pytest.approx(l0, abs=1e-9)

    def test_duplicating_respondents_doubles(self, grid61, rng):
        params = random_params(rng, n_items=4)
        resp = random_responses(rng, n=15, n_items=4)
        doubled = ResponseMatrix(data=np.vstack([resp.data, resp.data]))
        l1 = marginal_loglik(params, resp, grid61)
        l2 = marginal_loglik(params, doubled, grid61)
        assert l2.loglik == pytest.approx(2 * l1.loglik, abs=1e-9)

    def test_per_respondent_sums_to_total(self, grid61, rng):
        params = random_params(rng)
        resp = random_responses(rng)
        v = marginal_loglik(params, resp, grid61)
        assert v.loglik == pytest.approx(v.per_respondent.sum(), abs=1e-9)
        assert np.all(v.per_respondent <= 0)

    def test_dimension_mismatch(self, grid61, rng):
        params = random_params(rng, n_items=5)
        resp = random_responses(rng, n_items=4)
        with pytest.raises(UsageError):
            marginal_loglik(params, resp, grid61)

    def test_dif_damage_is_monotone(self, grid61):
        """Raising a DIF shift lowers the success probability, so the
        likelihood of an all-correct record strictly drops."""
        resp = ResponseMatrix(data=np.ones((5, 1), dtype=np.int8))
        values = []
        for shift in (0.0, 0.5, 1.0, 2.0):
            p = ModelParams(n_items=1, n_focal=1, d=np.array([0.0]),
                            delta=np.array([[shift]]), nu=np.array([0.5, 0.5]),
                            mu=np.array([0.0, 0.0]), sigma=np.array([1.0, 1.0]))
            values.append(marginal_loglik(p, resp, grid61).loglik)
        assert all(a > b for a, b in zip(values, values[1:]))


class TestPenalizedObjective:
    def test_lambda_zero(self, grid61, rng):
        params = random_params(rng)
        resp = random_responses(rng)
        assert penalized_objective(params, resp, grid61, 0.0) == pytest.approx(
            -marginal_loglik(params, resp, grid61).loglik)

    def test_zero_delta_independent_of_lambda(self, grid61, rng):
        params = random_params(rng, delta_scale=0.0)
        resp = random_responses(rng)
        a = penalized_objective(params, resp, grid61, 0.0)
        b = penalized_objective(params, resp, grid61, 13.7)
        assert a == b

    def test_penalty_arithmetic(self, grid61, rng):
        resp = random_responses(rng, n_items=2)
        params = ModelParams(n_items=2, n_focal=1, d=np.zeros(2),
                             delta=np.array([[0.5], [0.0]]), nu=np.array([0.6, 0.4]),
                             mu=np.array([0.0, 0.3]), sigma=np.array([1.0, 1.0]))
        base = -marginal_loglik(params, resp, grid61).loglik
        assert penalized_objective(params, resp, grid61, 1.0) == pytest.approx(base + 0.5)

    def test_negative_lambda_rejected(self, grid61, rng):
        with pytest.raises(UsageError):
            penalized_objective(random_params(rng), random_responses(rng), grid61, -1.0)


class TestInvariances:
    def test_anchor_shift(self, grid61, rng):
        """mu_k and the whole DIF column can trade a constant without
        changing the marginal likelihood (exact under transformed nodes)."""
        params = random_params(rng, n_items=8, n_focal=1)
        resp = random_responses(rng, n=120, n_items=8)
        base = marginal_loglik(params, resp, grid61).loglik
        for c in (-1.0, -0.3, 0.3, 1.0):
            shifted = params.replace(mu=params.mu + np.array([0.0, c]),
                                     delta=params.delta + c)
            got = marginal_loglik(shifted, resp, grid61).loglik
            assert abs(got - base) < 1e-10

    def test_focal_swap(self, grid61, rng):
        params = random_params(rng, n_items=6, n_focal=2)
        resp = random_responses(rng, n=30, n_items=6)
        swapped = params.replace(
            nu=params.nu[[0, 2, 1]], mu=params.mu[[0, 2, 1]],
            sigma=params.sigma[[0, 2, 1]], delta=params.delta[:, [1, 0]],
        )
        a = marginal_loglik(params, resp, grid61).loglik
        b = marginal_loglik(swapped, resp, grid61).loglik
        assert abs(a - b) < 1e-12
