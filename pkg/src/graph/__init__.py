"""LangGraph workflow and state management."""

from .state import ExperimentState, create_initial_state
from .workflow import create_workflow, run_experiment

__all__ = ["ExperimentState", "create_initial_state", "create_workflow", "run_experiment"]
