"""Settings, logging, errors, seeding and artifact persistence."""

from .config import settings
from .errors import LabError
from .logger import RunLogger, get_logger

__all__ = ["settings", "LabError", "RunLogger", "get_logger"]
