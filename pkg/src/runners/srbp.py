"""
SRBP runner: polymer replicas, the variance window and the orthogonality check.
"""

from typing import Any, Dict, List

from ..schemas.run import RunConfig, RunRecord
from ..tools.polymer_sim import orthogonality_check, run_polymer
from ..tools.spectral import rho_squared
from ..tools.walk_sim import stationarity_ks
from .base import ReplicaRunner, guarded
from .tsaw import diffusivity_summary, lln_summary


def variance_window(config: RunConfig, diffusivity: Dict[str, Any]) -> Dict[str, Any]:
    """sigma^2 per coordinate against [1, 1 + rho^2], both widened by 3 stderr."""
    rho2 = rho_squared(config.potential)
    rows = []
    for est in diffusivity["per_coordinate"]:
        lo = 1.0 - 3.0 * est["stderr"]
        hi = 1.0 + rho2 + 3.0 * est["stderr"]
        rows.append({"value": est["value"], "low": lo, "high": hi, "inside": lo <= est["value"] <= hi})
    return {"rho_squared": rho2, "per_coordinate": rows, "passed": all(r["inside"] for r in rows)}


class SrbpRunner(ReplicaRunner):
    """Runs polymer replicas from a stationary (or empty) initial field."""

    name = "srbp"

    @staticmethod
    def simulate(config: RunConfig, replica: int) -> RunRecord:
        return run_polymer(config, replica)

    def summarize(self, config: RunConfig, records: List[RunRecord]) -> Dict[str, Any]:
        d = config.geometry.d
        summary: Dict[str, Any] = {
            "model": "srbp",
            "replicas": len(records),
            "horizon": config.horizon,
            "dt": config.dt,
            "amplitude": config.potential.amplitude,
            "width": config.potential.width,
            "wrapped": sum(r.wrap for r in records),
            "stationary": config.init == "stationary",
        }

        guarded(summary, "diffusivity", lambda: diffusivity_summary(config, records, 1.0))
        if "diffusivity" in summary:
            summary["lln"] = lln_summary(records, summary["diffusivity"]["trace"]["value"])
            if d >= 3 and config.init == "stationary":
                guarded(summary, "variance_window", lambda: variance_window(config, summary["diffusivity"]))

        if config.init == "stationary":
            guarded(summary, "stationarity", lambda: [stationarity_ks(records, l) for l in range(d)])
            guarded(summary, "orthogonality", lambda: orthogonality_check(records))
        return summary
