"""
Euler-Maruyama simulation of the self-repelling Brownian polymer.

The occupation measure is the list of past positions at step resolution, so
the self-interaction drift is the Riemann sum dt * sum_k F(X - X_k) over
past samples, truncated where V drops below 1e-12 and gathered through a
cell list. A stationary start adds -grad eta_0(X) from a continuum field.
"""

from collections import defaultdict
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..schemas.field import FieldSample
from ..schemas.model import Potential
from ..schemas.run import RunConfig, RunRecord
from ..utils.errors import ConfigError, EstimatorError
from ..utils.logger import get_logger
from ..utils.seeding import replica_rng, replica_seed_sequence
from .field_sampler import interpolate_gradient, sample_continuum_field
from .model_core import potential_eval, potential_force
from .stats import correlation, replica_mean

logger = get_logger(__name__)


class CellList:
    """Uniform grid of cells of side R_cut holding indices of past samples."""

    def __init__(self, d: int, cell: float):
        self.d = d
        self.cell = cell
        self.cells: Dict[tuple, List[int]] = defaultdict(list)
        self._stencil = list(product((-1, 0, 1), repeat=d))

    def key(self, x: np.ndarray) -> tuple:
        return tuple(int(v) for v in np.floor(x / self.cell))

    def insert(self, index: int, x: np.ndarray) -> None:
        self.cells[self.key(x)].append(index)

    def candidates(self, x: np.ndarray) -> List[int]:
        base = self.key(x)
        found: List[int] = []
        for shift in self._stencil:
            bucket = self.cells.get(tuple(b + s for b, s in zip(base, shift)))
            if bucket:
                found.extend(bucket)
        return found


class PolymerState:
    """Position, past samples and clock of one polymer."""

    def __init__(
        self,
        potential: Potential,
        dt: float,
        rng: np.random.Generator,
        init_field: Optional[FieldSample] = None,
        use_cells: bool = True,
    ):
        self.d = potential.d
        self.potential = potential
        self.dt = dt
        self.rng = rng
        self.init_field = init_field
        self.x = np.zeros(self.d)
        self.t = 0.0
        self.cutoff = potential.cutoff_radius
        self._past = np.empty((1024, self.d))
        self._times = np.empty(1024)
        self.n_past = 0
        self.cells = CellList(self.d, self.cutoff) if use_cells and self.cutoff > 0 else None

    @property
    def past(self) -> np.ndarray:
        return self._past[: self.n_past]

    @property
    def past_times(self) -> np.ndarray:
        return self._times[: self.n_past]

    def record_past(self) -> None:
        """Append the current (t, x); times stay strictly increasing."""
        if self.n_past == len(self._past):
            self._past = np.concatenate([self._past, np.empty_like(self._past)])
            self._times = np.concatenate([self._times, np.empty_like(self._times)])
        self._past[self.n_past] = self.x
        self._times[self.n_past] = self.t
        if self.cells is not None:
            self.cells.insert(self.n_past, self.x)
        self.n_past += 1


def interaction_drift(state: PolymerState, x: Optional[np.ndarray] = None, brute_force: bool = False) -> np.ndarray:
    """dt * sum_k F(x - X_k) over past samples within the cutoff radius."""
    x = state.x if x is None else np.asarray(x, dtype=float)
    if state.n_past == 0 or state.potential.amplitude == 0.0:
        return np.zeros(state.d)

    if brute_force or state.cells is None:
        z = x - state.past
    else:
        idx = state.cells.candidates(x)
        if not idx:
            return np.zeros(state.d)
        z = x - state._past[np.asarray(idx)]
        z = z[np.sum(z * z, axis=1) <= state.cutoff ** 2]
    return state.dt * np.sum(potential_force(state.potential, z), axis=0)


def field_drift(state: PolymerState, x: Optional[np.ndarray] = None) -> np.ndarray:
    """-grad eta_0(x) from the initial field; zero without one."""
    if state.init_field is None:
        return np.zeros(state.d)
    x = state.x if x is None else x
    return -interpolate_gradient(state.init_field, np.atleast_2d(x))[0]


def drift(state: PolymerState) -> np.ndarray:
    """Fixed-frame drift -grad eta_0(X) + dt sum_k F(X - X_k)."""
    return field_drift(state) + interaction_drift(state)


def interaction_energy(state: PolymerState, x: Optional[np.ndarray] = None) -> float:
    """dt * sum_k V(x - X_k): the head's interaction energy with its past."""
    x = state.x if x is None else np.asarray(x, dtype=float)
    if state.n_past == 0:
        return 0.0
    return float(state.dt * np.sum(potential_eval(state.potential, x - state.past)))


def em_step(state: PolymerState, noise: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    x <- x + drift dt + sqrt(dt) xi; the pre-step position joins the past.

    Returns (drift, Brownian increment) of the step.
    """
    b = drift(state)
    dB = np.sqrt(state.dt) * state.rng.standard_normal(state.d) if noise else np.zeros(state.d)
    state.record_past()
    state.x = state.x + b * state.dt + dB
    state.t += state.dt
    return b, dB


def initial_field(cfg: RunConfig, rng: np.random.Generator) -> Optional[FieldSample]:
    """Continuum Gaussian field for stationary starts; None for empty starts."""
    if cfg.init == "empty":
        return None
    seed = int(rng.integers(0, 2 ** 63 - 1))
    geometry = cfg.geometry
    return sample_continuum_field(geometry.d, geometry.box, geometry.grid, cfg.potential, seed)


def run_polymer(cfg: RunConfig, replica: int = 0) -> RunRecord:
    """
    Simulate one polymer replica to the horizon.

    Besides X(t) the record carries the Brownian path B(t) and the
    compensator integral int_0^t phi(eta(u)) du on the time grid, where
    phi is the drift, plus the gradient of eta at the particle at 0 and T.
    """
    if cfg.potential is None:
        raise ConfigError("srbp simulation needs a potential")

    rng = replica_rng(cfg.seed, replica)
    state = PolymerState(cfg.potential, cfg.dt, rng, init_field=initial_field(cfg, rng))
    d = state.d
    n_steps = int(round(cfg.horizon / cfg.dt))
    every = max(1, int(round(cfg.sample_every / cfg.dt)))

    times = [0.0]
    positions = [state.x.tolist()]
    B = np.zeros(d)
    comp = np.zeros(d)
    B_series = [B.tolist()]
    comp_series = [comp.tolist()]
    gradient_start = (-drift(state)).tolist()
    max_excursion = 0.0

    for step in range(1, n_steps + 1):
        b, dB = em_step(state)
        B = B + dB
        comp = comp + b * cfg.dt
        max_excursion = max(max_excursion, float(np.max(np.abs(state.x))))
        if step % every == 0 or step == n_steps:
            times.append(step * cfg.dt)
            positions.append(state.x.tolist())
            B_series.append(B.tolist())
            comp_series.append(comp.tolist())

    logger.debug(f"srbp replica {replica} done: steps={n_steps} past={state.n_past}")
    seq = replica_seed_sequence(cfg.seed, replica)
    return RunRecord(
        model="srbp",
        replica=replica,
        master_seed=cfg.seed,
        spawn_key=[int(v) for v in seq.spawn_key],
        config=cfg.model_dump(mode="json"),
        times=times,
        positions=positions,
        series={"B": B_series, "compensator": comp_series},
        horizon=cfg.horizon,
        n_events=n_steps,
        stationary=cfg.init == "stationary",
        wrap=max_excursion >= cfg.geometry.box / 4,
        gradient_start=gradient_start,
        gradient_end=(-drift(state)).tolist(),
        extras={"max_excursion": max_excursion, "cutoff_radius": state.cutoff},
    )


def orthogonality_check(records: Sequence[RunRecord], s_index: int = 0, t_index: int = -1) -> Dict[str, object]:
    """
    Correlation of B(t) - B(s) with int_s^t phi per coordinate, and the
    additive variance decomposition E(X(t)-X(s))^2 = (t-s) + E(int phi)^2 + 2 E[B int phi].
    """
    if len(records) < 2:
        raise EstimatorError("orthogonality check needs at least two replicas")

    d = len(records[0].positions[0])
    t = records[0].times[t_index]
    s = records[0].times[s_index]
    result: Dict[str, object] = {"s": s, "t": t, "replicas": len(records), "per_coordinate": []}

    for l in range(d):
        dB = np.array([r.series["B"][t_index][l] - r.series["B"][s_index][l] for r in records])
        dC = np.array([r.series["compensator"][t_index][l] - r.series["compensator"][s_index][l] for r in records])
        dX = np.array([r.positions[t_index][l] - r.positions[s_index][l] for r in records])

        msd = replica_mean(dX ** 2, "msd")
        excess = replica_mean(dX ** 2 - (t - s), "msd_excess")
        result["per_coordinate"].append({
            "corr": correlation(dB, dC),
            "msd": msd.model_dump(),
            "brownian": float(np.mean(dB ** 2)),
            "compensator": float(np.mean(dC ** 2)),
            "cross": float(2.0 * np.mean(dB * dC)),
            "residual": float(np.mean(dX ** 2) - np.mean(dB ** 2) - np.mean(dC ** 2) - 2.0 * np.mean(dB * dC)),
            "excess": excess.model_dump(),
            "lower_bound_ok": excess.value >= -3.0 * excess.stderr,
        })

    result["corr_threshold"] = 3.0 / np.sqrt(len(records))
    return result
