"""
Event-driven simulation of the true self-avoiding walk on a periodic torus.

While the walker sits at x its local time grows at unit rate, so the rate to
neighbour x + e at delay u after arrival is w(delta_e + u) with
delta_e = ell(x) - ell(x + e). Waiting times are drawn by inverting the
closed-form cumulative hazard; Ogata thinning is the alternative sampler.
The environment seen from the walker is never materialized: every
functional reads ell through shifted indices.
"""

import io
import zipfile
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from ..schemas.model import ClosureRate, RateFunction
from ..schemas.run import Estimate, RunConfig, RunRecord
from ..utils.errors import ConfigError, EventLogError, HazardError
from ..utils.logger import get_logger
from ..utils.persistence import atomic_write_bytes
from ..utils.seeding import replica_rng, replica_seed_sequence
from .field_sampler import sample_gff_lattice
from .model_core import rate_lower_bound
from .stats import correlation, ks_two_sample, replica_mean

logger = get_logger(__name__)

HAZARD_XTOL = 1e-12


def direction_offsets(d: int) -> np.ndarray:
    """Unit vectors ordered +e_1, -e_1, +e_2, -e_2, ...; shape (2d, d)."""
    offsets = np.zeros((2 * d, d), dtype=np.int64)
    for l in range(d):
        offsets[2 * l, l] = 1
        offsets[2 * l + 1, l] = -1
    return offsets


class RateModel:
    """
    Pre-computed polynomial pieces of a rate function for the event loop.

    Closure rates carry only their callable and a global cap; they support
    thinning but no closed-form hazard or compensator.
    """

    def __init__(self, rf: Union[RateFunction, ClosureRate], w_min: Optional[float] = None):
        self.rf = rf
        self.is_closure = isinstance(rf, ClosureRate)
        self.w_min = w_min if w_min is not None else rate_lower_bound(rf)
        if self.w_min <= 0.0:
            raise HazardError("rate lower bound must be positive", {"w_min": self.w_min})

        if self.is_closure:
            self.rate_cap = rf.rate_cap
            return

        w = rf.w_polynomial
        self.w = w.coef
        self.W = w.integ().coef
        self.S = rf.s_polynomial.integ().coef
        self.s = rf.s_polynomial.coef
        self.Rint = rf.r_polynomial.integ().coef
        self.r = rf.r_polynomial.coef
        roots = w.deriv().roots() if w.degree() > 1 else np.array([])
        self.critical = np.sort(roots[np.abs(roots.imag) < 1e-12].real)

    @property
    def mark_rate(self) -> float:
        """Base rate of the N/M split: min(gamma, inf w)."""
        return self.w_min

    def rate(self, u) -> np.ndarray:
        if self.is_closure:
            return self.rf(u)
        return P.polyval(u, self.w)

    def hazard(self, deltas: np.ndarray, u: float) -> float:
        """Cumulative hazard Lambda(u) = sum_e [W(delta_e + u) - W(delta_e)]."""
        return float(np.sum(P.polyval(deltas + u, self.W) - P.polyval(deltas, self.W)))

    def window_max(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Exact maximum of w on each interval [lo_j, hi_j]."""
        if self.is_closure:
            return np.full(len(lo), self.rate_cap)
        best = np.maximum(self.rate(lo), self.rate(hi))
        for c in self.critical:
            inside = (lo < c) & (c < hi)
            if np.any(inside):
                best = np.where(inside, np.maximum(best, P.polyval(c, self.w)), best)
        return best


class WalkerState:
    """Position, local-time field and clock of one walker."""

    def __init__(
        self,
        d: int,
        L: int,
        ell: np.ndarray,
        rng: np.random.Generator,
        frozen: bool = False,
    ):
        if ell.shape != (L,) * d:
            raise ConfigError("local-time field has the wrong shape", {"shape": list(ell.shape)})
        self.d = d
        self.L = L
        self.ell = ell
        self.rng = rng
        self.frozen = frozen
        self.site = np.zeros(d, dtype=np.int64)
        self.X = np.zeros(d, dtype=np.int64)
        self.t = 0.0
        self.offsets = direction_offsets(d)

    def _index(self, site: np.ndarray) -> tuple:
        return tuple(int(v) for v in np.mod(site, self.L))

    def deltas(self) -> np.ndarray:
        """delta_e = ell(x) - ell(x + e) for the 2d directions."""
        here = self.ell[self._index(self.site)]
        return np.array([here - self.ell[self._index(self.site + e)] for e in self.offsets])

    def gradients(self) -> np.ndarray:
        """eta(0) - eta(e_l) for l = 1..d."""
        return self.deltas()[0::2].copy()

    def advance(self, u: float) -> None:
        if not self.frozen:
            self.ell[self._index(self.site)] += u
        self.t += u

    def jump(self, direction: int) -> None:
        step = self.offsets[direction]
        self.site = np.mod(self.site + step, self.L)
        self.X = self.X + step


def next_event(state: WalkerState, model: RateModel) -> Tuple[float, int]:
    """
    Draw (waiting_time, direction) by inverting the cumulative hazard.

    Lambda(u) >= 2 d w_min u, so the root lies in [0, E / (2 d w_min)].
    Direction probabilities are proportional to w(delta_e + u).
    """
    if model.is_closure:
        return next_event_thinning(state, model)

    deltas = state.deltas()
    target = state.rng.exponential()

    if state.frozen:
        rates = model.rate(deltas)
        u = target / float(np.sum(rates))
    else:
        upper = target / (2 * state.d * model.w_min)
        top = model.hazard(deltas, upper)
        if not np.isfinite(top):
            raise HazardError("cumulative hazard overflowed", {"upper": upper})
        if top < target:
            upper = upper * (1.0 + 1e-9) + HAZARD_XTOL
        u = brentq(lambda v: model.hazard(deltas, v) - target, 0.0, upper, xtol=HAZARD_XTOL)
        rates = model.rate(deltas + u)

    return u, _choose(state.rng, rates)


def _choose(rng: np.random.Generator, rates: np.ndarray) -> int:
    cumulative = np.cumsum(rates)
    return int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))


def next_event_thinning(state: WalkerState, model: RateModel) -> Tuple[float, int]:
    """
    Ogata thinning against the exact local majorant of the total rate.

    The majorant on a window is the maximum of w over the window's endpoints
    and the real critical points of w inside it.
    """
    deltas = state.deltas()
    v = 0.0
    while True:
        current = model.rate(deltas if state.frozen else deltas + v)
        window = 2.0 / max(float(np.sum(current)), 1e-12)
        if state.frozen:
            bound = float(np.sum(current))
        else:
            bound = float(np.sum(model.window_max(deltas + v, deltas + v + window)))

        tau = state.rng.exponential() / bound
        if tau > window:
            v += window
            continue
        v += tau
        rates = model.rate(deltas if state.frozen else deltas + v)
        if state.rng.random() * bound <= float(np.sum(rates)):
            return v, _choose(state.rng, rates)


@dataclass
class EventLog:
    """Per-sojourn record: arrival deltas, sojourn length, exit direction and mark."""

    d: int
    frozen: bool
    deltas: List[np.ndarray] = dc_field(default_factory=list)
    waits: List[float] = dc_field(default_factory=list)
    directions: List[int] = dc_field(default_factory=list)
    marks: List[bool] = dc_field(default_factory=list)

    def append(self, deltas: np.ndarray, wait: float, direction: int, mark: bool) -> None:
        self.deltas.append(deltas)
        self.waits.append(wait)
        self.directions.append(direction)
        self.marks.append(mark)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            "deltas": np.asarray(self.deltas, dtype=float).reshape(-1, 2 * self.d),
            "waits": np.asarray(self.waits, dtype=float),
            "directions": np.asarray(self.directions, dtype=np.int64),
            "marks": np.asarray(self.marks, dtype=bool),
        }

    def save(self, path) -> Path:
        """Compressed npz event log with fixed entry timestamps, written atomically."""
        members = {"d": np.asarray(self.d), "frozen": np.asarray(self.frozen), **self.arrays()}
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w") as archive:
            for name, array in members.items():
                info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                payload = io.BytesIO()
                np.save(payload, array)
                archive.writestr(info, payload.getvalue())
        return atomic_write_bytes(Path(path), buffer.getvalue())

    @classmethod
    def load(cls, path) -> "EventLog":
        data = np.load(path)
        log = cls(d=int(data["d"]), frozen=bool(data["frozen"]))
        log.deltas = list(data["deltas"])
        log.waits = list(data["waits"])
        log.directions = list(data["directions"])
        log.marks = list(data["marks"])
        return log


def initial_local_time(cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    """Stationary start draws a free field of the configured stiffness; empty start is zero."""
    d, L = cfg.geometry.d, cfg.geometry.L
    if cfg.init == "empty":
        return np.zeros((L,) * d)
    field_seed = int(rng.integers(0, 2 ** 63 - 1))
    return sample_gff_lattice(d, L, field_seed, stiffness=cfg.stiffness).values.copy()


def simulate_walk(cfg: RunConfig, replica: int = 0) -> Tuple[RunRecord, Optional[EventLog]]:
    """
    Simulate one replica to the horizon.

    Returns the RunRecord and, when cfg.tsaw.keep_events is set, the event log.
    """
    if cfg.rate is None:
        raise ConfigError("tsaw simulation needs a rate function")

    d, L, T = cfg.geometry.d, cfg.geometry.L, cfg.horizon
    rng = replica_rng(cfg.seed, replica)
    model = RateModel(cfg.rate)
    state = WalkerState(d, L, initial_local_time(cfg, rng), rng, frozen=cfg.tsaw.frozen)
    sampler = next_event_thinning if cfg.tsaw.event_method == "thinning" else next_event

    log = EventLog(d=d, frozen=state.frozen) if cfg.tsaw.keep_events else None
    grid = cfg.time_grid()
    positions: List[List[float]] = []
    k = 0

    total_ell0 = float(np.sum(state.ell))
    gradient_start = state.gradients()
    jump_counts = np.zeros(2 * d, dtype=np.int64)
    expected_counts = np.zeros(2 * d)
    max_excursion = 0
    n_events = 0

    while state.t < T:
        deltas = state.deltas()
        u, direction = sampler(state, model)

        if state.t + u >= T:
            remaining = T - state.t
            if log is not None:
                log.append(deltas, remaining, -1, False)
            state.advance(remaining)
            break

        jump_time = state.t + u
        while k < len(grid) and grid[k] < jump_time:
            positions.append(state.X.astype(float).tolist())
            k += 1

        rates = model.rate(deltas if state.frozen else deltas + u)
        if state.frozen:
            expected_counts += rates / np.sum(rates)
        mark = bool(state.rng.random() * rates[direction] < model.mark_rate)

        state.advance(u)
        state.jump(direction)
        jump_counts[direction] += 1
        n_events += 1
        max_excursion = max(max_excursion, int(np.max(np.abs(state.X))))
        if log is not None:
            log.append(deltas, u, direction, mark)

    while k < len(grid):
        positions.append(state.X.astype(float).tolist())
        k += 1

    seq = replica_seed_sequence(cfg.seed, replica)
    record = RunRecord(
        model="tsaw",
        replica=replica,
        master_seed=cfg.seed,
        spawn_key=[int(v) for v in seq.spawn_key],
        config=cfg.model_dump(mode="json"),
        times=[float(t) for t in grid],
        positions=positions,
        horizon=T,
        n_events=n_events,
        stationary=cfg.init == "stationary",
        verified=not isinstance(cfg.rate, ClosureRate),
        wrap=max_excursion >= L / 4,
        gradient_start=gradient_start.tolist(),
        gradient_end=state.gradients().tolist(),
        jump_counts=jump_counts.tolist(),
        extras={
            "local_time_gain": float(np.sum(state.ell)) - total_ell0,
            "max_excursion": max_excursion,
            "mark_rate": model.mark_rate,
            "frozen": state.frozen,
            **({"expected_jump_counts": expected_counts.tolist()} if state.frozen else {}),
        },
    )

    if log is not None and not model.is_closure:
        record.compensator = compensator_decomposition(log, cfg.rate, record.displacement)
    return record, log


def run_trajectory(cfg: RunConfig, replica: int = 0) -> RunRecord:
    """Simulate one replica and return its RunRecord."""
    record, _ = simulate_walk(cfg, replica)
    return record


def compensator_decomposition(
    log: Optional[EventLog], rf: RateFunction, displacement: Sequence[float]
) -> Dict[str, List[float]]:
    """
    Split X(t) - X(0) into the compensator integrals and the N and M martingales.

    X is the trajectory displacement, taken from the recorded positions; the
    N and M parts are rebuilt from the event log alone, so the residual is
    zero only when the log replays the path.

    Each jump is an N-jump with probability mark_rate / w at the jump instant,
    so N has no compensator and M = (M-jumps) - int (phi_bar + phi_tilde).
    Between events eta(0) - eta(e) = delta_e + v grows linearly, so both
    integrals are differences of antiderivatives of s and r.
    """
    if log is None:
        raise EventLogError("compensator decomposition needs the event log")
    if isinstance(rf, ClosureRate):
        raise EventLogError("closure rates have no closed-form compensator")

    d = log.d
    displacement = np.asarray(displacement, dtype=float)
    if displacement.shape != (d,):
        raise EventLogError(
            "displacement does not match the log dimension", {"d": d, "shape": list(displacement.shape)}
        )
    arrays = log.arrays()
    deltas, waits, directions, marks = arrays["deltas"], arrays["waits"], arrays["directions"], arrays["marks"]
    S = rf.s_polynomial.integ().coef
    Rint = rf.r_polynomial.integ().coef
    s = rf.s_polynomial.coef
    r = rf.r_polynomial.coef

    def sojourn_integral(anti, direct, column):
        delta = deltas[:, column]
        if log.frozen:
            return waits * P.polyval(delta, direct)
        return P.polyval(delta + waits, anti) - P.polyval(delta, anti)

    offsets = direction_offsets(d)
    result: Dict[str, List[float]] = {k: [] for k in ("X", "bar", "tilde", "N", "M", "residual")}
    for l in range(d):
        bar = float(np.sum(sojourn_integral(S, s, 2 * l) - sojourn_integral(S, s, 2 * l + 1)))
        tilde = float(np.sum(sojourn_integral(Rint, r, 2 * l) - sojourn_integral(Rint, r, 2 * l + 1)))

        jumped = directions >= 0
        signs = np.where(jumped, offsets[np.where(jumped, directions, 0), l], 0)
        X = float(displacement[l])
        N = float(np.sum(signs[marks]))
        M = float(np.sum(signs[~marks])) - bar - tilde

        result["X"].append(X)
        result["bar"].append(bar)
        result["tilde"].append(tilde)
        result["N"].append(N)
        result["M"].append(M)
        result["residual"].append(X - bar - tilde - N - M)
    return result


def compensator_statistics(records: Sequence[RunRecord], l: int = 0) -> Dict[str, object]:
    """Cross moments E[N (bar + tilde)] and E[N M] across replicas, expected to vanish."""
    comps = [r.compensator for r in records if r.compensator is not None]
    if not comps:
        raise EventLogError("no record carries a compensator decomposition")
    N = np.array([c["N"][l] for c in comps])
    M = np.array([c["M"][l] for c in comps])
    phi = np.array([c["bar"][l] + c["tilde"][l] for c in comps])
    tilde = np.array([c["tilde"][l] for c in comps])
    horizon = records[0].horizon
    stats = {
        "N_phi": replica_mean(N * phi, "cross_moment").model_dump(),
        "N_M": replica_mean(N * M, "cross_moment").model_dump(),
        "max_residual": float(max(max(abs(v) for v in c["residual"]) for c in comps)),
    }
    if horizon > 0:
        stats["tilde_sq_rate"] = replica_mean(tilde ** 2 / horizon, "second_moment_rate").model_dump()
    return stats


def jump_quadratic_variation(records: Sequence[RunRecord], l: int = 0) -> Estimate:
    """Quadratic-variation rate of X_l: jumps along +e_l or -e_l per unit time, over replicas."""
    rates = [(r.jump_counts[2 * l] + r.jump_counts[2 * l + 1]) / r.horizon for r in records if r.horizon > 0]
    if not rates:
        raise ConfigError("quadratic variation needs records with a positive horizon")
    return replica_mean(rates, "qv_rate")


def stationarity_ks(records: Sequence[RunRecord], l: int = 0) -> Dict[str, float]:
    """KS test of eta(0,0) - eta(0,e_l) against eta(T,0) - eta(T,e_l) across replicas."""
    start = [r.gradient_start[l] for r in records]
    end = [r.gradient_end[l] for r in records]
    if np.array_equal(np.asarray(start), np.asarray(end)):
        return {"statistic": 0.0, "p_value": 1.0}
    return ks_two_sample(start, end)


def lln_check(record: RunRecord) -> float:
    """|X(T) - X(0)| / T; zero at T = 0."""
    if record.horizon == 0.0:
        return 0.0
    return float(np.linalg.norm(record.displacement) / record.horizon)


def _two_sample_z(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.sqrt(np.var(a, ddof=1) / len(a) + np.var(b, ddof=1) / len(b))
    return 0.0 if scale == 0.0 else float((np.mean(a) - np.mean(b)) / scale)


def _variance_z(a: np.ndarray, b: np.ndarray) -> float:
    def var_and_se(x):
        c = x - np.mean(x)
        v = np.mean(c ** 2)
        return v, np.sqrt(max(np.mean(c ** 4) - v * v, 0.0) / len(x))

    va, sa = var_and_se(a)
    vb, sb = var_and_se(b)
    scale = np.hypot(sa, sb)
    return 0.0 if scale == 0.0 else float((va - vb) / scale)


def yaglom_check(records: Sequence[RunRecord], l: int = 0) -> Dict[str, object]:
    """
    Compare forward statistics with those of the flipped time-reversed path.

    The reversed walk starts from -eta(T) and moves by -(X(T) - X(0)), so its
    starting gradient is -(eta(T,0) - eta(T,e_l)) and its jumps along +e_l are
    the forward jumps along -e_l. Each statistic is reported as a z-score.
    """
    g0 = np.array([r.gradient_start[l] for r in records])
    gT = np.array([r.gradient_end[l] for r in records])
    dx = np.array([r.displacement[l] if len(r.displacement) else 0.0 for r in records])
    plus = np.array([r.jump_counts[2 * l] for r in records], dtype=float)
    minus = np.array([r.jump_counts[2 * l + 1] for r in records], dtype=float)

    reversed_g0 = -gT
    stats = {
        "gradient_mean": {"forward": float(np.mean(g0)), "reversed": float(np.mean(reversed_g0)),
                          "z": _two_sample_z(g0, reversed_g0)},
        "gradient_variance": {"forward": float(np.var(g0)), "reversed": float(np.var(reversed_g0)),
                              "z": _variance_z(g0, reversed_g0)},
        # forward g0 * dX against reversed (-gT) * (-dX)
        "gradient_displacement": {"forward": float(np.mean(g0 * dx)), "reversed": float(np.mean(gT * dx)),
                                  "z": _two_sample_z(g0 * dx, gT * dx)},
        "jump_direction": {"forward": float(np.sum(plus)), "reversed": float(np.sum(minus)),
                           "z": _two_sample_z(plus, minus)},
    }
    stats["max_abs_z"] = float(max(abs(v["z"]) for v in stats.values() if isinstance(v, dict)))
    return stats
