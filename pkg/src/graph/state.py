"""LangGraph state definition for the experiment workflow."""

from typing import Any, Dict, List, Optional, TypedDict, Annotated
from operator import add

from ..schemas.run import RunConfig, RunRecord


class ExperimentState(TypedDict):
    """
    State object passed between nodes of the experiment workflow.

    The validation node fills the condition report, exactly one model node
    fills records and summary, and the report node writes the Markdown table.
    """

    # === Input Configuration ===
    config: RunConfig  # Validated run configuration
    write_report: bool  # Regenerate the Markdown report at the end

    # === Validation Output ===
    condition_report: Optional[Dict[str, Any]]  # Rate-function checks (tsaw/fock/gibbs runs)

    # === Model Node Output ===
    records: List[RunRecord]  # One record per replica (simulation runs)
    summary: Dict[str, Any]  # Verified quantities of the run
    run_dir: Optional[str]  # Where the artifacts were written

    # === Report Output ===
    report_path: Optional[str]

    # === Execution Metadata ===
    errors: Annotated[List[str], add]  # Errors accumulated during execution
    logs: Annotated[List[str], add]  # Log messages from nodes and runners
    current_step: str  # Current execution step
    completed_steps: List[str]  # List of completed steps


def create_initial_state(config: RunConfig, write_report: bool = True) -> ExperimentState:
    """
    Create initial state for one experiment.

    Args:
        config: Validated run configuration
        write_report: Whether to regenerate the report after the run

    Returns:
        Initialized ExperimentState
    """
    return ExperimentState(
        config=config,
        write_report=write_report,
        condition_report=None,
        records=[],
        summary={},
        run_dir=None,
        report_path=None,
        errors=[],
        logs=[],
        current_step="initialized",
        completed_steps=[],
    )
