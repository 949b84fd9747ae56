"""Tests for the Markdown run report."""

from src.tools.report import build_report, summary_rows, write_report
from src.utils.persistence import write_json, write_manifest


SPECTRAL = {
    "model": "spectral",
    "d": 3,
    "C0": 0.252731,
    "C0_minus_Ce": 1.0 / 6.0,
    "gamma_kernel_average": 1.0 / 3.0,
    "gamma_kernel_sup": 0.99,
    "infrared": {"value": None, "converged": False},
}


def store_run(root, name, summary, complete=True):
    run_dir = root / "runs" / name
    artifact = write_json(run_dir / "summary.json", summary)
    if complete:
        write_manifest(run_dir, [artifact], {"model": summary.get("model")}, 1)
    return run_dir


class TestSummaryRows:
    """Rows per model."""

    def test_spectral_rows(self):
        """Exact constants pass; an unsettled infrared integral fails."""
        rows = {q: (v, s) for q, v, s in summary_rows(SPECTRAL)}
        assert rows["C(0) - C(e)"][1] == "pass"
        assert rows["gamma kernel average"][1] == "pass"
        assert rows["infrared integral"] == ("n/a", "FAIL")

    def test_unknown_model(self):
        """Unknown models contribute no rows."""
        assert summary_rows({"model": "other"}) == []

    def test_skipped_estimators(self):
        """Refused estimators are listed with their message."""
        rows = summary_rows({"model": "other", "skipped": {"diffusivity": {"message": "too few replicas"}}})
        assert rows == [("diffusivity (skipped)", "too few replicas", "")]

    def test_estimate_formatting(self):
        """Estimates print as value ± stderr."""
        summary = {
            "model": "field", "kind": "lattice_gaussian", "replicas": 2,
            "neighbour_variance": {"value": 0.5, "stderr": 0.01}, "neighbour_variance_exact": 0.5,
        }
        rows = {q: v for q, v, _ in summary_rows(summary)}
        assert rows["neighbour variance"] == "0.5 ± 0.01"

    def test_non_stationary_start_has_no_verdict(self):
        """An empty-start run is labelled and not judged against the lower bound."""
        diffusivity = {
            "per_coordinate": [{"value": 0.4, "stderr": 0.1}],
            "trace": {"value": 0.4, "stderr": 0.1},
            "lower_bound_ok": False,
        }
        base = {"model": "tsaw", "replicas": 4, "horizon": 20.0, "diffusivity": diffusivity}
        stationary = {q: s for q, _, s in summary_rows({**base, "stationary": True})}
        empty = {q: s for q, _, s in summary_rows({**base, "stationary": False})}
        assert stationary["sigma^2 per coordinate"] == "FAIL"
        assert "sigma^2 per coordinate" not in empty
        assert empty["sigma^2 per coordinate (non-stationary start)"] == ""

    def test_fock_crosscheck_row(self):
        """The decomposed sigma^2 is judged against the Monte Carlo value by |z| <= 3."""
        kv = {
            "tilde_resolvent": {"decreasing": True, "cauchy_gap": 0.001},
            "sigma2": 2.5,
            "crosscheck": {"z": 4.2, "consistent": False},
        }
        summary = {
            "model": "fock", "checks": {"adjoint": 1e-14}, "halfinv_nabla_sup": 1.0,
            "norm_scan": {"blocks": {}}, "kv": kv,
        }
        rows = {q: (v, s) for q, v, s in summary_rows(summary)}
        assert rows["sigma^2 vs Monte Carlo z"] == ("4.2", "FAIL")


class TestBuildReport:
    """Report over stored runs."""

    def test_no_runs(self, tmp_path):
        """An empty output directory says so."""
        assert "No runs found." in build_report(tmp_path)

    def test_complete_and_incomplete(self, tmp_path):
        """Runs without a valid manifest are marked incomplete."""
        store_run(tmp_path, "spectral-a-1", SPECTRAL)
        store_run(tmp_path, "spectral-b-2", SPECTRAL, complete=False)
        text = build_report(tmp_path)
        assert "## spectral-a-1\n" in text
        assert "## spectral-b-2 (incomplete)" in text

    def test_tampered_artifact(self, tmp_path):
        """A changed artifact invalidates the manifest."""
        run_dir = store_run(tmp_path, "spectral-a-1", SPECTRAL)
        write_json(run_dir / "summary.json", {**SPECTRAL, "C0": 0.3})
        assert "(incomplete)" in build_report(tmp_path)

    def test_report_is_a_function_of_artifacts(self, tmp_path):
        """Writing twice gives the same text."""
        store_run(tmp_path, "spectral-a-1", SPECTRAL)
        first = write_report(tmp_path).read_text(encoding="utf-8")
        second = write_report(tmp_path).read_text(encoding="utf-8")
        assert first == second
        assert (tmp_path / "reports" / "report.md").exists()
