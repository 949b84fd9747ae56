"""Replica runners for the simulation experiments."""

from .base import ReplicaRunner, run_directory
from .field import FieldRunner
from .srbp import SrbpRunner
from .tsaw import TsawRunner

__all__ = [
    "ReplicaRunner",
    "TsawRunner",
    "SrbpRunner",
    "FieldRunner",
    "run_directory",
]
