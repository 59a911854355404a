"""Tests for the replication study runner."""
import numpy as np
import pytest

from cllmix import FitOptions, SimDesign
from cllmix import io
from cllmix.study import aggregate_and_export, rep_filename, replication_seeds, run_replication, run_study


def _manifest(tmp_path, reps=2):
    return io.StudyManifest(
        designs=(SimDesign(design="A", n=120, pi_focal=0.3, n_items=6, n_dif_items=2),),
        n_replications=reps, k_fit=1, path_m=4, master_seed=4242,
        output_dir=str(tmp_path / "out"),
        fit_options=FitOptions(n_starts=1, seed=0, max_outer_iter=80),
        grid_points=21,
    )


class TestSeeds:
    def test_deterministic_and_distinct(self):
        a = replication_seeds(1, 0, 0)
        b = replication_seeds(1, 0, 0)
        c = replication_seeds(1, 0, 1)
        d = replication_seeds(1, 1, 0)
        assert a == b
        assert a != c and a != d and c != d


class TestRunReplication:
    def test_returns_complete_record(self, tmp_path):
        manifest = _manifest(tmp_path)
        record, seeds = run_replication(manifest, 0, 0)
        assert record.replication_index == 0
        assert record.class_posterior.shape == (120, 2)
        assert set(seeds) == {"data", "fit"}
        # same task twice is bit-identical
        record2, _ = run_replication(manifest, 0, 0)
        assert np.array_equal(record.class_posterior, record2.class_posterior)
        assert record.estimate.loglik == record2.estimate.loglik


class TestRunStudy:
    def test_outputs_and_resume(self, tmp_path):
        manifest = _manifest(tmp_path)
        summary = run_study(manifest, threads=1, figures=False)
        assert summary["ran"] == 2 and summary["skipped"] == 0
        out = tmp_path / "out"
        reps = out / "reps"
        assert (reps / rep_filename(0, 0)).exists()
        assert (out / "report.json").exists()
        assert (out / "table2.csv").exists()
        assert (out / "table3.csv").exists()
        assert (out / "itemgrid.csv").exists()
        assert (out / "roc_cell0.csv").exists()
        contents = {p.name: p.read_bytes() for p in out.rglob("*") if p.is_file()}

        # idempotent re-run: everything is skipped, outputs identical
        summary2 = run_study(manifest, threads=1, figures=False)
        assert summary2["ran"] == 0 and summary2["skipped"] == 2
        for p in out.rglob("*"):
            if p.is_file():
                assert p.read_bytes() == contents[p.name]

        # delete one replication: only that one is recomputed
        (reps / rep_filename(0, 1)).unlink()
        summary3 = run_study(manifest, threads=1, figures=False)
        assert summary3["ran"] == 1 and summary3["skipped"] == 1
        assert (reps / rep_filename(0, 1)).read_bytes() == contents[rep_filename(0, 1)]

    def test_thread_count_invariance(self, tmp_path):
        m1 = _manifest(tmp_path)
        out2 = str(tmp_path / "out2")
        m2 = io.StudyManifest(designs=m1.designs, n_replications=m1.n_replications,
                              k_fit=m1.k_fit, path_m=m1.path_m, master_seed=m1.master_seed,
                              output_dir=out2, fit_options=m1.fit_options,
                              grid_points=m1.grid_points)
        run_study(m1, threads=1, figures=False)
        run_study(m2, threads=2, figures=False)
        files1 = sorted(p for p in (tmp_path / "out").rglob("*") if p.is_file())
        files2 = sorted(p for p in (tmp_path / "out2").rglob("*") if p.is_file())
        assert [p.name for p in files1] == [p.name for p in files2]
        for a, b in zip(files1, files2):
            assert a.read_bytes() == b.read_bytes(), a.name

    def test_figures_rendered(self, tmp_path):
        manifest = _manifest(tmp_path)
        run_study(manifest, threads=1, figures=True)
        figs = list((tmp_path / "out" / "figures").glob("*.png"))
        names = {p.name for p in figs}
        assert "items_bias_A_N120.png" in names
        assert "items_rmse_A_N120.png" in names
        assert "roc_A.png" in names
        assert all(p.stat().st_size > 1000 for p in figs)

    def test_metrics_recompute_matches(self, tmp_path):
        manifest = _manifest(tmp_path)
        run_study(manifest, threads=1, figures=False)
        report_path = tmp_path / "out" / "report.json"
        before = report_path.read_bytes()
        aggregate_and_export(manifest, figures=False)
        assert report_path.read_bytes() == before
