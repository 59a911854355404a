"""Tests for file formats: response CSV, result JSON, manifests, exports."""
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cllmix import FitOptions, ModelParams, ResponseMatrix, SimDesign, build_grid, fit_penalized
from cllmix import io
from cllmix.errors import DataError, SchemaVersionError, UsageError
from cllmix.metrics import AggregateReport
from conftest import random_responses


class TestResponsesCsv:
    def test_round_trip_no_header(self, tmp_path):
        m = ResponseMatrix(data=np.array([[1, 0, 1], [0, 0, 1]]))
        path = tmp_path / "r.csv"
        io.write_responses(m, path)
        back = io.read_responses(path)
        assert np.array_equal(back.data, m.data)
        assert back.item_names is None

    def test_round_trip_with_header(self, tmp_path):
        m = ResponseMatrix(data=np.array([[1, 0], [0, 1]]), item_names=("i1", "i2"))
        path = tmp_path / "r.csv"
        io.write_responses(m, path)
        back = io.read_responses(path)
        assert back.item_names == ("i1", "i2")
        assert np.array_equal(back.data, m.data)

    def test_plain_parse(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,0,1\n0,0,1\n")
        m = io.read_responses(path)
        assert m.data.shape == (2, 3)

    def test_crlf(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_bytes(b"a,b\r\n1,0\r\n0,1\r\n")
        m = io.read_responses(path)
        assert m.item_names == ("a", "b")
        assert m.data.shape == (2, 2)

    def test_nonbinary_cell_location(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("2,0\n")
        with pytest.raises(DataError, match=r"row 1, column 1"):
            io.read_responses(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,0,1\n0,0\n")
        with pytest.raises(DataError, match=r"row 2 has 2 cells, expected 3"):
            io.read_responses(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            io.read_responses(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            io.read_responses(tmp_path / "nope.csv")

    def test_header_only(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b,c\n")
        with pytest.raises(DataError, match="no data rows"):
            io.read_responses(path)


def _fit_result(rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    resp = random_responses(rng, n=40, n_items=4)
    grid = build_grid(21)
    return fit_penalized(resp, 1, 1.0, grid, FitOptions(n_starts=1, seed=7, max_outer_iter=40))


def _fits_equal(a, b):
    assert np.array_equal(a.params.d, b.params.d)
    assert np.array_equal(a.params.delta, b.params.delta)
    assert np.array_equal(a.params.nu, b.params.nu)
    assert np.array_equal(a.params.mu, b.params.mu)
    assert np.array_equal(a.params.sigma, b.params.sigma)
    assert a.loglik == b.loglik
    assert a.penalized_objective == b.penalized_objective
    assert a.support == b.support
    assert a.n_outer_iters == b.n_outer_iters
    assert a.converged == b.converged
    assert a.trace == b.trace
    assert a.trace_loglik == b.trace_loglik
    assert a.start_index == b.start_index
    assert a.lam == b.lam
    assert a.final_alpha == b.final_alpha
    assert tuple(a.line_search_exhausted) == tuple(b.line_search_exhausted)
    assert tuple(a.surrogate_decreased) == tuple(b.surrogate_decreased)
    assert a.collapsed_classes == b.collapsed_classes


class TestResultSerialization:
    def test_fit_round_trip(self, tmp_path):
        fit = _fit_result()
        path = tmp_path / "fit.json"
        io.write_fit(fit, path)
        back = io.read_fit(path)
        _fits_equal(fit, back)

    def test_path_round_trip(self, tmp_path):
        from cllmix import SimDesign, generate, two_stage_path
        data, _ = generate(SimDesign(design="A", n=150, pi_focal=0.3, n_items=6,
                                     n_dif_items=2, seed=3))
        grid = build_grid(21)
        pr = two_stage_path(data, 1, 4, grid, FitOptions(n_starts=1, seed=2, max_outer_iter=60))
        path = tmp_path / "path.json"
        io.write_fit(pr, path)
        back = io.read_fit(path)
        assert back.lambdas == pr.lambdas
        assert back.selected_index == pr.selected_index
        assert len(back.records) == len(pr.records)
        for ra, rb in zip(pr.records, back.records):
            assert ra.lam == rb.lam
            assert ra.support == rb.support
            assert ra.bic == rb.bic
            _fits_equal(ra.penalized_fit, rb.penalized_fit)

    def test_selectk_round_trip(self, tmp_path):
        from cllmix import SimDesign, generate, select_k
        data, _ = generate(SimDesign(design="A", n=120, pi_focal=0.3, n_items=5,
                                     n_dif_items=2, seed=9))
        grid = build_grid(21)
        res = select_k(data, [0, 1], 3, grid,
                       FitOptions(n_starts=1, seed=1, max_outer_iter=60))
        path = tmp_path / "sel.json"
        io.write_fit(res, path)
        back = io.read_fit(path)
        assert back.best_k == res.best_k
        assert set(back.paths) == set(res.paths)
        for k in res.paths:
            assert back.paths[k].selected_index == res.paths[k].selected_index

    def test_schema_version_rejected(self, tmp_path):
        fit = _fit_result()
        path = tmp_path / "fit.json"
        io.write_fit(fit, path)
        obj = json.loads(path.read_text())
        obj["schema"] = "cllmix/fit/99"
        path.write_text(json.dumps(obj))
        with pytest.raises(SchemaVersionError):
            io.read_fit(path)

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text(json.dumps({"schema": "cllmix/banana/1"}))
        with pytest.raises(DataError):
            io.read_fit(path)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False,
                              min_value=-2, max_value=2), min_size=3, max_size=3))
    def test_params_float_round_trip(self, d):
        """Shortest-repr serialization reproduces doubles bit-for-bit."""
        p = ModelParams(n_items=3, n_focal=0, d=np.array(d), delta=np.zeros((3, 0)),
                        nu=np.array([1.0]), mu=np.array([0.0]), sigma=np.array([1.0]))
        back = io.params_from_dict(json.loads(json.dumps(io.params_to_dict(p))))
        assert np.array_equal(back.d, p.d)


class TestSupportFiles:
    def test_round_trip(self, tmp_path):
        support = {(0, 0), (4, 0), (2, 1)}
        path = tmp_path / "s.json"
        io.write_support(support, path)
        assert io.read_support(path) == frozenset(support)


class TestManifest:
    def _manifest(self, tmp_path):
        return io.StudyManifest(
            designs=(SimDesign(design="A", n=100, pi_focal=0.3, n_items=6, n_dif_items=2),
                     SimDesign(design="B", n=100, pi_focal=0.1, n_items=6)),
            n_replications=2, k_fit=1, path_m=4, master_seed=99,
            output_dir=str(tmp_path / "out"), fit_options=FitOptions(n_starts=1, seed=0),
            grid_points=21,
        )

    def test_round_trip(self, tmp_path):
        m = self._manifest(tmp_path)
        path = tmp_path / "study.manifest"
        io.write_manifest(m, path)
        back = io.read_manifest(path)
        assert back.designs == m.designs
        assert back.n_replications == m.n_replications
        assert back.k_fit == m.k_fit
        assert back.master_seed == m.master_seed
        assert back.fit_options == m.fit_options
        assert back.grid_points == m.grid_points

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.manifest"
        path.write_text('{"designs": []}')
        with pytest.raises(DataError, match="header"):
            io.read_manifest(path)

    def test_version_checked(self, tmp_path):
        m = self._manifest(tmp_path)
        path = tmp_path / "study.manifest"
        io.write_manifest(m, path)
        text = path.read_text().replace("v1", "v9")
        path.write_text(text)
        with pytest.raises(SchemaVersionError):
            io.read_manifest(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.manifest"
        path.write_text(io.MANIFEST_HEADER + '\n{"designs": [{"design": "A", "n": 10, "pi_focal": 0.3}]}')
        with pytest.raises(DataError, match="missing required field"):
            io.read_manifest(path)


def _report(J=4, with_tpr=True):
    rng = np.random.default_rng(0)
    return AggregateReport(
        d_bias=rng.normal(0, 0.01, J), d_rmse=np.abs(rng.normal(0, 0.1, J)) + 0.05,
        delta_bias=rng.normal(0, 0.05, J), delta_rmse=np.abs(rng.normal(0, 0.1, J)) + 0.1,
        pi_bias=0.01, pi_rmse=0.04, mu1_bias=-0.005, mu1_rmse=0.09,
        sigma1_bias=0.002, sigma1_rmse=0.10,
        tpr=0.9 if with_tpr else None, fpr=0.05, classification_error=0.18,
        auc=0.86, naive_error=0.3, n_reps=5,
        roc_points=np.array([[0.0, 0.0], [0.2, 0.7], [1.0, 1.0]]),
    )


class TestExports:
    def _cell(self, design="A", with_tpr=True):
        d = SimDesign(design=design, n=100, pi_focal=0.3, n_items=4,
                      n_dif_items=2 if design == "A" else 0)
        return (d, _report(with_tpr=with_tpr))

    def test_table2_shape(self, tmp_path):
        cells = [self._cell(), self._cell("B", with_tpr=False)]
        out = tmp_path / "t2.csv"
        io.export_tables(cells, "table2", out)
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "design,n,pi,parameter,bias,rmse"
        assert len(lines) == 1 + 2 * 3  # two cells x three structural parameters

    def test_table3_na_for_missing_tpr(self, tmp_path):
        out = tmp_path / "t3.csv"
        io.export_tables([self._cell("B", with_tpr=False)], "table3", out)
        text = out.read_text()
        assert "tpr,NA" in text

    def test_itemgrid_shape(self, tmp_path):
        out = tmp_path / "ig.csv"
        io.export_tables([self._cell()], "itemgrid", out)
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 1 + 4 + 4  # header + J rows for d + J rows for delta
        assert lines[1].startswith("A,100,0.3,d,1,")

    def test_roc_staircase(self, tmp_path):
        out = tmp_path / "roc.csv"
        io.export_tables(self._cell(), "roc", out)
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "fpr,tpr"
        pts = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        assert np.all(np.diff(pts[:, 0]) >= 0)
        assert np.all(np.diff(pts[:, 1]) >= 0)

    def test_roc_needs_single_cell(self, tmp_path):
        with pytest.raises(UsageError):
            io.export_tables([self._cell(), self._cell()], "roc", tmp_path / "x.csv")

    def test_unknown_style(self, tmp_path):
        with pytest.raises(UsageError):
            io.export_tables([self._cell()], "table9", tmp_path / "x.csv")

    def test_cell_values_round_trip_precision(self, tmp_path):
        design, report = self._cell()
        out = tmp_path / "t2.csv"
        io.export_tables([(design, report)], "table2", out)
        row = out.read_text().strip().split("\n")[1].split(",")
        assert float(row[4]) == report.pi_bias

    def test_report_round_trip(self, tmp_path):
        cells = [self._cell(), self._cell("B", with_tpr=False)]
        path = tmp_path / "report.json"
        io.write_study_report(cells, path)
        back = io.read_study_report(path)
        assert len(back) == 2
        assert back[0][0] == cells[0][0]
        assert np.array_equal(back[0][1].d_bias, cells[0][1].d_bias)
        assert back[1][1].tpr is None
        assert np.array_equal(back[0][1].roc_points, cells[0][1].roc_points)
