"""Named experiment presets, one per verification experiment."""

import copy
from typing import Any, Dict

from ..utils.errors import ConfigError


GAUSSIAN_RATE = {"gamma": 1.0, "s_coeffs": [0.0, 0.0, 0.25], "r_mode": "linear"}
GAUSSIAN_POTENTIAL = {"family": "gaussian", "amplitude": 1.0, "width": 1.0, "d": 3}

PRESETS: Dict[str, Dict[str, Any]] = {
    # Gaussian-mode TSAW on the 3d torus
    "gaussian-d3": {
        "model": "tsaw",
        "geometry": {"d": 3, "L": 32},
        "rate": GAUSSIAN_RATE,
        "horizon": 200.0,
        "replicas": 400,
        "init": "stationary",
    },
    # w = gamma with no local-time feedback: a simple random walk, trace 2 d gamma
    "simple-walk": {
        "model": "tsaw",
        "geometry": {"d": 3, "L": 32},
        "rate": {"gamma": 1.0, "s_coeffs": [], "r_mode": "linear"},
        "horizon": 200.0,
        "replicas": 400,
        "init": "empty",
        "tsaw": {"frozen": True},
    },
    "srbp-gauss-d3": {
        "model": "srbp",
        "geometry": {"d": 3, "box": 32.0, "grid": 64},
        "potential": GAUSSIAN_POTENTIAL,
        "horizon": 50.0,
        "dt": 0.01,
        "replicas": 400,
        "init": "stationary",
    },
    "d1-explore": {
        "model": "tsaw",
        "geometry": {"d": 1, "L": 1 << 16},
        "rate": GAUSSIAN_RATE,
        "horizon": 1000.0,
        "sample_every": 5.0,
        "replicas": 200,
        "init": "empty",
    },
}


def preset_config(name: str) -> Dict[str, Any]:
    """A fresh, mutable copy of a preset's config dictionary."""
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset: {name}", {"known": sorted(PRESETS)})
    data = copy.deepcopy(PRESETS[name])
    data["preset"] = name
    return data
