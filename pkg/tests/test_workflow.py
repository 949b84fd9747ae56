"""Tests for the LangGraph experiment workflow."""

from pathlib import Path

import pytest

from src.graph.state import create_initial_state
from src.graph.workflow import (
    _reference_measurements,
    create_workflow,
    route_model,
    run_experiment,
    run_fock_node,
    run_spectral_node,
    should_write_report,
    validate_config_node,
)
from src.schemas.presets import preset_config
from src.schemas.run import RunConfig
from src.utils.errors import ConfigError
from src.utils.persistence import is_complete, read_json, write_json, write_manifest


def spectral_config(tmp_path: Path) -> RunConfig:
    return RunConfig.model_validate({
        "model": "spectral",
        "geometry": {"d": 3},
        "spectral": {"ladder": [16, 32]},
        "seed": 1,
        "output_dir": str(tmp_path),
    })


def tsaw_config(tmp_path: Path, **rate) -> RunConfig:
    data = preset_config("gaussian-d3")
    data.update({"replicas": 2, "horizon": 1.0, "seed": 4, "output_dir": str(tmp_path)})
    data["geometry"] = {"d": 3, "L": 8}
    if rate:
        data["rate"] = rate
    return RunConfig.model_validate(data)


def fock_config(tmp_path: Path, **fock) -> RunConfig:
    data = preset_config("gaussian-d3")
    data.update({"model": "fock", "seed": 2, "output_dir": str(tmp_path / "out"), "geometry": {"d": 1}})
    data["fock"] = {
        "L_f": 4, "n_max": 2, "scan_degrees": [0, 1], "lambda_schedule": [1.0, 0.3],
        "truncation_check": False, **fock,
    }
    return RunConfig.model_validate(data)


def store_reference(tmp_path: Path, config: RunConfig, stationary: bool = True) -> Path:
    run_dir = tmp_path / "reference"
    summary = {
        "model": "tsaw",
        "stationary": stationary,
        "gamma": config.rate.gamma,
        "s4": config.rate.s4,
        "quadratic_variation": [{"value": 2.6, "stderr": 0.05}],
        "diffusivity": {"per_coordinate": [{"value": 2.4, "stderr": 0.2}]},
    }
    artifact = write_json(run_dir / "summary.json", summary)
    write_manifest(run_dir, [artifact], {"model": "tsaw"}, 1)
    return run_dir


class TestExperimentState:
    """Initial state creation."""

    def test_create_initial_state(self, tmp_path):
        """A fresh state carries the config and empty outputs."""
        config = spectral_config(tmp_path)
        state = create_initial_state(config, write_report=False)

        assert state["config"] is config
        assert state["write_report"] is False
        assert state["records"] == []
        assert state["summary"] == {}
        assert state["errors"] == []
        assert state["current_step"] == "initialized"

    def test_create_initial_state_defaults(self, tmp_path):
        """The report is written by default."""
        state = create_initial_state(spectral_config(tmp_path))
        assert state["write_report"] is True
        assert state["condition_report"] is None


class TestWorkflowLogic:
    """Conditional edges."""

    def test_route_to_model(self, tmp_path):
        """Validated configs go to their model node."""
        state = create_initial_state(tsaw_config(tmp_path))
        state["current_step"] = "config_validated"
        assert route_model(state) == "tsaw"

    def test_route_stops_on_invalid(self, tmp_path):
        """Invalid configs end the run."""
        state = create_initial_state(tsaw_config(tmp_path))
        state["current_step"] = "config_invalid"
        assert route_model(state) == "end"

    def test_report_after_success(self, tmp_path):
        """A finished model node leads to the report."""
        state = create_initial_state(spectral_config(tmp_path))
        state["current_step"] = "spectral_done"
        assert should_write_report(state) == "report"

    def test_no_report_after_failure(self, tmp_path):
        """Failed runs skip the report."""
        state = create_initial_state(spectral_config(tmp_path))
        state["current_step"] = "tsaw_failed"
        assert should_write_report(state) == "end"

    def test_report_opt_out(self, tmp_path):
        """write_report=False skips the report."""
        state = create_initial_state(spectral_config(tmp_path), write_report=False)
        state["current_step"] = "spectral_done"
        assert should_write_report(state) == "end"


class TestNodes:
    """Individual node behaviour."""

    async def test_validate_without_rate(self, tmp_path):
        """Configs without a rate pass straight through."""
        result = await validate_config_node(create_initial_state(spectral_config(tmp_path)))
        assert result["current_step"] == "config_validated"
        assert "validate_config" in result["completed_steps"]

    async def test_validate_good_rate(self, tmp_path):
        """The Gaussian preset passes and stores the condition report."""
        result = await validate_config_node(create_initial_state(tsaw_config(tmp_path)))
        assert result["current_step"] == "config_validated"
        assert result["condition_report"]["ellipticity"] is True

    async def test_validate_bad_rate(self, tmp_path):
        """w = 1 + u fails ellipticity."""
        config = tsaw_config(tmp_path, gamma=1.0, s_coeffs=[], r_mode="linear")
        result = await validate_config_node(create_initial_state(config))
        assert result["current_step"] == "config_invalid"
        assert "ellipticity" in result["errors"][0]

    async def test_spectral_node(self, tmp_path):
        """The spectral node writes a complete run directory."""
        result = await run_spectral_node(create_initial_state(spectral_config(tmp_path)))
        assert result["current_step"] == "spectral_done"
        run_dir = Path(result["run_dir"])
        assert run_dir.name == "spectral-custom-1"
        assert is_complete(run_dir)
        assert read_json(run_dir / "summary.json")["C0_minus_Ce"] == pytest.approx(1.0 / 6.0, abs=1e-8)


class TestFockReference:
    """Measured QV rate and diffusivity from a stored tsaw run."""

    def test_no_reference(self, tmp_path):
        """Without a reference only the configured QV rate is passed on."""
        found = _reference_measurements(fock_config(tmp_path, qv_rate=3.0, qv_stderr=0.1))
        assert found == {"qv_rate": 3.0, "qv_stderr": 0.1, "measured": None}

    def test_explicit_qv_rate_wins(self, tmp_path):
        """A configured QV rate overrides the recorded one; the diffusivity still comes along."""
        base = fock_config(tmp_path)
        ref = store_reference(tmp_path, base)
        found = _reference_measurements(fock_config(tmp_path, reference_run=str(ref), qv_rate=3.0))
        assert found["qv_rate"] == 3.0
        assert found["measured"] == {"value": 2.4, "stderr": 0.2}

    async def test_fock_node_crosscheck(self, tmp_path):
        """The fock node feeds the recorded QV rate into sigma^2 and reports the z-score."""
        base = fock_config(tmp_path)
        ref = store_reference(tmp_path, base)
        result = await run_fock_node(create_initial_state(fock_config(tmp_path, reference_run=str(ref))))
        assert result["current_step"] == "fock_done"
        kv = result["summary"]["kv"]
        assert kv["qv_rate"] == 2.6
        assert kv["sigma2_stderr"] == 0.05
        assert kv["crosscheck"]["measured"] == 2.4
        assert is_complete(Path(result["run_dir"]))

    async def test_non_stationary_reference_refused(self, tmp_path):
        """Empty-start runs are not a reference for the stationary variance."""
        base = fock_config(tmp_path)
        ref = store_reference(tmp_path, base, stationary=False)
        result = await run_fock_node(create_initial_state(fock_config(tmp_path, reference_run=str(ref))))
        assert result["current_step"] == "fock_failed"
        assert "stationary" in result["errors"][0]

    def test_incomplete_reference_refused(self, tmp_path):
        """A directory without a manifest is refused."""
        with pytest.raises(ConfigError):
            _reference_measurements(fock_config(tmp_path, reference_run=str(tmp_path / "missing")))


class TestWorkflowExecution:
    """End-to-end runs through the compiled graph."""

    def test_create_workflow(self):
        """The graph compiles with every node."""
        graph = create_workflow().get_graph()
        for name in ("validate_config", "run_spectral", "run_fock", "run_tsaw", "run_srbp", "run_field",
                     "write_report"):
            assert name in graph.nodes

    async def test_spectral_experiment(self, tmp_path):
        """A spectral run ends with the report."""
        final = await run_experiment(spectral_config(tmp_path))
        assert final["errors"] == []
        assert final["completed_steps"] == ["validate_config", "run_spectral", "write_report"]
        assert (tmp_path / "reports" / "report.md").exists()

    async def test_tsaw_experiment(self, tmp_path):
        """A two-replica walk writes records, series, events and a manifest."""
        final = await run_experiment(tsaw_config(tmp_path), write_report=False)
        assert final["errors"] == []
        assert len(final["records"]) == 2
        run_dir = Path(final["run_dir"])
        assert run_dir.name == "tsaw-gaussian-d3-4"
        assert (run_dir / "records" / "replica_0001.json").exists()
        assert (run_dir / "series" / "replica_0000.csv").exists()
        assert (run_dir / "events" / "replica_0000.npz").exists()
        assert is_complete(run_dir)
        assert "diffusivity" in final["summary"]["skipped"]
        assert not (tmp_path / "reports" / "report.md").exists()

    async def test_invalid_rate_stops(self, tmp_path):
        """A failing rate function never reaches the simulator."""
        final = await run_experiment(tsaw_config(tmp_path, gamma=1.0, s_coeffs=[], r_mode="linear"))
        assert final["current_step"] == "config_invalid"
        assert final["records"] == []
        assert not (tmp_path / "runs").exists()
