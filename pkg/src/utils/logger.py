"""Logging for simulation and verification runs."""

import logging
import sys
from typing import Any, Dict, List, Optional

from .config import settings

ROOT = "lab"
FORMAT = "%(asctime)s | %(levelname)-8s | pid=%(process)d | %(name)s | %(message)s"


def _root_handler() -> logging.Handler:
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter(fmt=FORMAT, datefmt="%H:%M:%S"))
    return handler


def get_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Logger under the shared "lab" hierarchy.

    Module names such as src.tools.walk_sim become lab.tools.walk_sim; the
    handler lives on the "lab" root only, so worker processes and repeated
    imports never duplicate output.

    Args:
        name: Logger name (usually __name__)
        level: Optional override of LOG_LEVEL for this logger
    """
    root = logging.getLogger(ROOT)
    if not root.handlers:
        root.addHandler(_root_handler())
        root.setLevel(getattr(logging, settings.log_level.upper(), logging.INFO))
        root.propagate = False

    short = name.split(".", 1)[1] if name.startswith("src.") else name
    logger = root if short == ROOT else logging.getLogger(f"{ROOT}.{short}")
    if level:
        logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    return logger


class RunLogger:
    """
    Key=value logger for one runner, with a copy of every line for the
    experiment state.

    Context given at construction or through `bind` is appended to each
    message, e.g. `[tsaw] Run finished | seed=7 | replicas=400`.
    """

    def __init__(self, component: str, **context: Any):
        self.component = component
        self.context: Dict[str, Any] = dict(context)
        self._logger = get_logger(f"runners.{component}")
        self.logs: List[str] = []

    def bind(self, **context: Any) -> "RunLogger":
        self.context.update(context)
        return self

    def _emit(self, level: int, message: str, context: Dict[str, Any], keep: bool = True) -> None:
        merged = {**self.context, **context}
        line = f"[{self.component}] {message}"
        if merged:
            line += " | " + " | ".join(f"{k}={v}" for k, v in merged.items())
        self._logger.log(level, line)
        if keep:
            self.logs.append(f"{logging.getLevelName(level)}: {line}")

    def info(self, message: str, **context: Any) -> None:
        self._emit(logging.INFO, message, context)

    def warning(self, message: str, **context: Any) -> None:
        self._emit(logging.WARNING, message, context)

    def error(self, message: str, **context: Any) -> None:
        self._emit(logging.ERROR, message, context)

    def debug(self, message: str, **context: Any) -> None:
        self._emit(logging.DEBUG, message, context, keep=False)

    def progress(self, done: int, total: int) -> None:
        """Replica progress at roughly every tenth of the run, and at the end."""
        step = max(1, total // 10)
        if done == total or done % step == 0:
            self._emit(logging.INFO, "Replicas done", {"done": f"{done}/{total}"})

    def get_logs(self) -> List[str]:
        """Copy of the kept lines (debug lines are not kept)."""
        return list(self.logs)
