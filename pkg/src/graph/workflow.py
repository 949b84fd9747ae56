"""LangGraph workflow definition for experiment orchestration."""

from pathlib import Path
from typing import Any, Dict

from langgraph.graph import StateGraph, END

from .state import ExperimentState, create_initial_state
from ..runners import FieldRunner, SrbpRunner, TsawRunner, run_directory
from ..schemas.model import RateFunction
from ..schemas.run import RunConfig
from ..tools.fock import MomentumGrid, assemble_polymer, assembly_from_rate, fock_summary
from ..tools.model_core import check_conditions
from ..tools.report import write_report
from ..tools.spectral import spectral_table, tsaw_variational_bound
from ..utils.config import settings
from ..utils.logger import get_logger
from ..utils.errors import ConfigError
from ..utils.persistence import is_complete, read_json, write_json, write_manifest

logger = get_logger(__name__)

RUNNERS = {"tsaw": TsawRunner, "srbp": SrbpRunner, "field": FieldRunner}


def _write_summary(config: RunConfig, summary: Dict[str, Any]) -> Path:
    """Persist a deterministic (non-replica) run: summary.json, then the manifest."""
    run_dir = run_directory(config)
    artifact = write_json(run_dir / "summary.json", summary)
    write_manifest(run_dir, [artifact], config.model_dump(mode="json"), config.seed)
    return run_dir


def _output_base(config: RunConfig) -> Path:
    return Path(config.output_dir) if config.output_dir else settings.output_dir


def _reference_measurements(config: RunConfig) -> Dict[str, Any]:
    """
    QV rate and measured diffusivity for the Fock variance cross-check.

    Without a reference run only the configured qv_rate is used. A reference
    run must be a complete stationary tsaw run with the same rate function;
    an explicit qv_rate still wins over the one it recorded.
    """
    opts = config.fock
    found: Dict[str, Any] = {"qv_rate": opts.qv_rate, "qv_stderr": opts.qv_stderr, "measured": None}
    if opts.reference_run is None:
        return found

    run_dir = Path(opts.reference_run)
    if not is_complete(run_dir):
        raise ConfigError("reference run is missing or incomplete", {"path": str(run_dir)})
    ref = read_json(run_dir / "summary.json")
    if ref.get("model") != "tsaw" or not ref.get("stationary", False):
        raise ConfigError("reference run must be a stationary tsaw run", {"path": str(run_dir)})
    if abs(ref["gamma"] - config.rate.gamma) > 1e-12 or abs(ref["s4"] - config.rate.s4) > 1e-12:
        raise ConfigError(
            "reference run used another rate function",
            {"reference": [ref["gamma"], ref["s4"]], "config": [config.rate.gamma, config.rate.s4]},
        )

    l = opts.direction
    try:
        qv = ref["quadratic_variation"][l]
        sigma2 = ref["diffusivity"]["per_coordinate"][l]
    except (KeyError, IndexError):
        raise ConfigError("reference run has no quadratic variation or diffusivity along the axis", {"direction": l})

    if opts.qv_rate is None:
        found["qv_rate"], found["qv_stderr"] = qv["value"], qv["stderr"]
    found["measured"] = {"value": sigma2["value"], "stderr": sigma2["stderr"]}
    return found


# === Node Functions ===

async def validate_config_node(state: ExperimentState) -> Dict[str, Any]:
    """
    Node 1: Check the rate function before anything is simulated.

    Reads: config
    Writes: condition_report, logs, current_step, completed_steps
    """
    logger.info("Executing: validate_config_node")
    config = state["config"]

    if not isinstance(config.rate, RateFunction):
        return {
            "logs": ["No rate function to check"],
            "current_step": "config_validated",
            "completed_steps": state.get("completed_steps", []) + ["validate_config"],
        }

    try:
        report = check_conditions(config.rate)
        if not report.all_passed:
            failed = [k for k in ("ellipticity", "convexity", "gaussian_domination", "r_entire")
                      if not getattr(report, k)]
            return {
                "condition_report": report.model_dump(),
                "errors": [f"Rate function fails: {', '.join(failed)}"],
                "current_step": "config_invalid",
            }
        return {
            "condition_report": report.model_dump(),
            "logs": [f"Rate conditions passed (inf w = {report.inf_w:.6g})"],
            "current_step": "config_validated",
            "completed_steps": state.get("completed_steps", []) + ["validate_config"],
        }

    except Exception as e:
        logger.error(f"Config validation failed: {e}")
        return {
            "errors": [f"Config validation failed: {str(e)}"],
            "current_step": "config_invalid",
        }


def _simulation_node(model: str):
    async def node(state: ExperimentState) -> Dict[str, Any]:
        logger.info(f"Executing: run_{model}_node")
        config = state["config"]
        try:
            runner = RUNNERS[model]()
            records = await runner.run(config, save_to_file=True)
            return {
                "records": records,
                "summary": runner.summary,
                "run_dir": str(run_directory(config)),
                "logs": runner.logger.get_logs(),
                "current_step": f"{model}_done",
                "completed_steps": state.get("completed_steps", []) + [f"run_{model}"],
            }

        except Exception as e:
            logger.error(f"{model} run failed: {e}")
            return {
                "errors": [f"{model} run failed: {str(e)}"],
                "current_step": f"{model}_failed",
            }

    node.__name__ = f"run_{model}_node"
    node.__doc__ = f"Simulate the {model} replicas with {RUNNERS[model].__name__}."
    return node


run_tsaw_node = _simulation_node("tsaw")
run_srbp_node = _simulation_node("srbp")
run_field_node = _simulation_node("field")


async def run_spectral_node(state: ExperimentState) -> Dict[str, Any]:
    """
    Node 2b: Tabulate the spectral constants.

    Reads: config
    Writes: summary, run_dir, logs, current_step, completed_steps
    """
    logger.info("Executing: run_spectral_node")
    config = state["config"]
    opts = config.spectral
    d = config.geometry.d

    try:
        points = [p for p in opts.green_points if len(p) == d] or None
        summary = {"model": "spectral", **spectral_table(d, opts.ladder, points, config.potential)}
        if isinstance(config.rate, RateFunction) and d >= 3:
            summary["tsaw_variational_bound"] = tsaw_variational_bound(
                config.rate.gamma, d, 0, config.stiffness, opts.ladder
            )
        run_dir = _write_summary(config, summary)
        return {
            "summary": summary,
            "run_dir": str(run_dir),
            "logs": [f"Spectral table written (C0 = {summary['C0']:.6f})"],
            "current_step": "spectral_done",
            "completed_steps": state.get("completed_steps", []) + ["run_spectral"],
        }

    except Exception as e:
        logger.error(f"Spectral run failed: {e}")
        return {
            "errors": [f"Spectral run failed: {str(e)}"],
            "current_step": "spectral_failed",
        }


async def run_fock_node(state: ExperimentState) -> Dict[str, Any]:
    """
    Node 2c: Fock-space structure checks, norm scan and resolvent variance.

    Reads: config
    Writes: summary, run_dir, logs, current_step, completed_steps
    """
    logger.info("Executing: run_fock_node")
    config = state["config"]
    opts = config.fock

    try:
        if opts.variant == "lattice":
            reference = _reference_measurements(config)
            grid = MomentumGrid.lattice(config.geometry.d, opts.L_f, opts.stiffness)
            assembly = assembly_from_rate(config.rate, grid, opts.n_max)
        else:
            reference = {}
            assembly = assemble_polymer(config.potential, opts.L_f, opts.n_max, opts.box)

        summary = {
            "model": "fock",
            **fock_summary(
                assembly,
                opts.lambda_schedule,
                l=opts.direction,
                scan_degrees=[n for n in opts.scan_degrees if n < opts.n_max],
                truncation_check=opts.truncation_check,
                **reference,
            ),
        }
        run_dir = _write_summary(config, summary)
        return {
            "summary": summary,
            "run_dir": str(run_dir),
            "logs": [f"Fock checks written (dims = {summary['dims']})"],
            "current_step": "fock_done",
            "completed_steps": state.get("completed_steps", []) + ["run_fock"],
        }

    except Exception as e:
        logger.error(f"Fock run failed: {e}")
        return {
            "errors": [f"Fock run failed: {str(e)}"],
            "current_step": "fock_failed",
        }


async def write_report_node(state: ExperimentState) -> Dict[str, Any]:
    """
    Node 3: Regenerate the Markdown report from stored artifacts.

    Reads: config
    Writes: report_path, logs, current_step, completed_steps
    """
    logger.info("Executing: write_report_node")
    try:
        path = write_report(_output_base(state["config"]))
        return {
            "report_path": str(path),
            "logs": [f"Report written to {path}"],
            "current_step": "report_written",
            "completed_steps": state.get("completed_steps", []) + ["write_report"],
        }

    except Exception as e:
        logger.error(f"Report generation failed: {e}")
        return {
            "errors": [f"Report generation failed: {str(e)}"],
            "current_step": "report_failed",
        }


# === Conditional Edges ===

def route_model(state: ExperimentState) -> str:
    """Dispatch to the model node, or stop when validation failed."""
    if state.get("current_step") == "config_invalid":
        return "end"
    return state["config"].model


def should_write_report(state: ExperimentState) -> str:
    """Write the report unless the run failed or the caller opted out."""
    if state.get("current_step", "").endswith("_failed") or not state.get("write_report", True):
        return "end"
    return "report"


# === Workflow Creation ===

def create_workflow() -> StateGraph:
    """
    Create the LangGraph workflow for one experiment.

    Graph Structure:

    [START] --> validate_config --+--> run_spectral --+
                                  +--> run_fock ------+
                                  +--> run_tsaw ------+--> write_report --> [END]
                                  +--> run_srbp ------+
                                  +--> run_field -----+

    Returns:
        Compiled StateGraph
    """
    workflow = StateGraph(ExperimentState)

    workflow.add_node("validate_config", validate_config_node)
    workflow.add_node("run_spectral", run_spectral_node)
    workflow.add_node("run_fock", run_fock_node)
    workflow.add_node("run_tsaw", run_tsaw_node)
    workflow.add_node("run_srbp", run_srbp_node)
    workflow.add_node("run_field", run_field_node)
    workflow.add_node("write_report", write_report_node)

    workflow.set_entry_point("validate_config")
    workflow.add_conditional_edges(
        "validate_config",
        route_model,
        {
            "spectral": "run_spectral",
            "fock": "run_fock",
            "tsaw": "run_tsaw",
            "srbp": "run_srbp",
            "field": "run_field",
            "end": END,
        },
    )
    for node in ("run_spectral", "run_fock", "run_tsaw", "run_srbp", "run_field"):
        workflow.add_conditional_edges(node, should_write_report, {"report": "write_report", "end": END})
    workflow.add_edge("write_report", END)

    return workflow.compile()


# === Experiment Execution ===

async def run_experiment(config: RunConfig, write_report: bool = True) -> ExperimentState:
    """
    Execute one experiment end to end.

    Args:
        config: Validated run configuration
        write_report: Regenerate the Markdown report afterwards

    Returns:
        Final ExperimentState
    """
    initial_state = create_initial_state(config, write_report=write_report)
    workflow = create_workflow()

    logger.info(f"Starting {config.model} experiment (preset={config.preset})")
    final_state = await workflow.ainvoke(initial_state)

    logger.info(f"Experiment complete. Steps: {final_state.get('completed_steps', [])}")
    if final_state.get("errors"):
        logger.warning(f"Errors encountered: {final_state['errors']}")
    return final_state
