"""Tests for the data generators."""
import numpy as np
import pytest

from cllmix import ModelParams, SimDesign, build_grid, generate, generate_custom
from cllmix.errors import UsageError
from cllmix.model import cll_prob


class TestSimDesign:
    def test_design_a_defaults(self):
        d = SimDesign(design="A", n=100, pi_focal=0.3)
        assert d.n_dif_items == 10
        assert d.n_items == 25

    def test_design_b_defaults(self):
        assert SimDesign(design="B", n=100, pi_focal=0.3).n_dif_items == 0

    def test_design_b_rejects_dif_items(self):
        with pytest.raises(UsageError):
            SimDesign(design="B", n=100, pi_focal=0.3, n_dif_items=5)

    def test_pi_bounds(self):
        with pytest.raises(UsageError):
            SimDesign(design="A", n=100, pi_focal=0.0)
        with pytest.raises(UsageError):
            SimDesign(design="A", n=100, pi_focal=1.0)

    def test_range_order(self):
        with pytest.raises(UsageError):
            SimDesign(design="A", n=100, pi_focal=0.3, d_range=(2.0, -2.0))

    def test_unknown_design(self):
        with pytest.raises(UsageError):
            SimDesign(design="C", n=100, pi_focal=0.3)


class TestGenerate:
    def test_design_b_no_dif(self):
        _, truth = generate(SimDesign(design="B", n=50, pi_focal=0.3, seed=1))
        assert np.all(truth.params.delta == 0)

    def test_design_a_dif_block(self):
        _, truth = generate(SimDesign(design="A", n=50, pi_focal=0.3, seed=1))
        nonzero = truth.params.delta[:, 0] != 0
        assert nonzero.sum() == 10
        assert np.all(nonzero[:10])
        vals = truth.params.delta[:10, 0]
        assert np.all((vals > 0.5) & (vals < 1.5))

    def test_focal_share_near_pi(self):
        _, truth = generate(SimDesign(design="A", n=3000, pi_focal=0.3, seed=5))
        share = truth.class_labels.mean()
        assert abs(share - 0.3) < 3 * np.sqrt(0.3 * 0.7 / 3000)

    def test_deterministic(self):
        d = SimDesign(design="B", n=80, pi_focal=0.2, seed=99)
        a, ta = generate(d)
        b, tb = generate(d)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(ta.thetas, tb.thetas)

    def test_custom_design_rejected(self):
        with pytest.raises(UsageError):
            generate(SimDesign(design="custom", n=10, pi_focal=0.5))

    def test_item_difficulties_fresh_per_seed(self):
        _, t1 = generate(SimDesign(design="A", n=20, pi_focal=0.3, seed=1))
        _, t2 = generate(SimDesign(design="A", n=20, pi_focal=0.3, seed=2))
        assert not np.array_equal(t1.params.d, t2.params.d)


class TestGenerateCustom:
    def _params(self, **kw):
        base = dict(n_items=4, n_focal=1, d=np.zeros(4), delta=np.zeros((4, 1)),
                    nu=np.array([1.0, 0.0]), mu=np.array([0.0, 0.5]),
                    sigma=np.array([1.0, 1.0]))
        base.update(kw)
        return ModelParams(**base)

    def test_degenerate_mixture_all_reference(self):
        _, truth = generate_custom(self._params(), 200, seed=3)
        assert np.all(truth.class_labels == 0)

    def test_easy_item_probability(self):
        params = self._params(d=np.array([-5.0, 0.0, 0.0, 0.0]))
        data, _ = generate_custom(params, 4000, seed=4)
        # cll_prob(5) is within 1e-12 of 1, so the easy item is nearly always correct
        assert data.data[:, 0].mean() > 0.99

    def test_seed_determinism(self):
        params = self._params(nu=np.array([0.6, 0.4]))
        a, _ = generate_custom(params, 100, seed=11)
        b, _ = generate_custom(params, 100, seed=11)
        assert np.array_equal(a.data, b.data)

    def test_quadrature_consistency(self, grid61):
        """Reference-class observed proportion correct converges to the
        quadrature-weighted link values."""
        params = ModelParams(n_items=5, n_focal=0, d=np.array([-1.0, -0.5, 0.0, 0.5, 1.0]),
                             delta=np.zeros((5, 0)), nu=np.array([1.0]),
                             mu=np.array([0.0]), sigma=np.array([1.0]))
        data, truth = generate_custom(params, 20000, seed=8)
        expected = np.array([
            (grid61.weights * cll_prob(grid61.nodes - dj)).sum() for dj in params.d
        ])
        observed = data.data.mean(axis=0)
        assert np.max(np.abs(observed - expected)) < 0.01
