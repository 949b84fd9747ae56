"""Tests for the event-driven TSAW simulator."""

import numpy as np
import pytest
from scipy.stats import chisquare

from src.schemas.model import ClosureRate, RateFunction
from src.schemas.run import RunConfig
from src.tools.stats import ks_two_sample
from src.tools.walk_sim import (
    EventLog,
    RateModel,
    WalkerState,
    compensator_decomposition,
    compensator_statistics,
    direction_offsets,
    jump_quadratic_variation,
    lln_check,
    next_event,
    next_event_thinning,
    run_trajectory,
    simulate_walk,
    stationarity_ks,
    yaglom_check,
)
from src.utils.errors import ConfigError, EventLogError, RateFunctionError


GAUSSIAN = RateFunction(gamma=1.0, s_coeffs=[0.0, 0.0, 0.25])
CONSTANT = RateFunction(gamma=1.0, r_mode="entire", r_coeffs=[])


def small_config(**overrides) -> RunConfig:
    data = {
        "model": "tsaw",
        "rate": GAUSSIAN.model_dump(),
        "geometry": {"d": 3, "L": 8},
        "horizon": 5.0,
        "sample_every": 1.0,
        "seed": 7,
    }
    data.update(overrides)
    return RunConfig.model_validate(data)


def draws(sampler, state, model, n):
    pairs = [sampler(state, model) for _ in range(n)]
    return np.array([u for u, _ in pairs]), np.array([e for _, e in pairs])


class TestRateModel:
    """Polynomial pieces and majorants."""

    def test_offsets(self):
        """+e_1, -e_1, +e_2, -e_2 ordering."""
        np.testing.assert_array_equal(direction_offsets(2), [[1, 0], [-1, 0], [0, 1], [0, -1]])

    def test_mark_rate(self):
        """The N/M split uses min(gamma, inf w)."""
        assert RateModel(GAUSSIAN).mark_rate == pytest.approx(0.25, abs=1e-6)

    def test_unbounded_rate_rejected(self):
        """w = 1 + u is not bounded away from zero."""
        with pytest.raises(RateFunctionError):
            RateModel(RateFunction(gamma=1.0))

    def test_hazard_vanishes_at_zero(self):
        """Lambda(0) = 0."""
        assert RateModel(GAUSSIAN).hazard(np.array([0.3, -0.1]), 0.0) == 0.0

    def test_window_max_dominates(self):
        """The window maximum bounds w on a dense grid of the window."""
        model = RateModel(GAUSSIAN)
        lo, hi = np.array([-2.0, -1.5, 0.2]), np.array([0.0, -0.5, 0.7])
        best = model.window_max(lo, hi)
        for j in range(3):
            grid = np.linspace(lo[j], hi[j], 501)
            assert best[j] >= np.max(model.rate(grid)) - 1e-12
        assert best[0] == pytest.approx(3.0)


class TestEventSampling:
    """Waiting times and exit directions."""

    def test_constant_rate_is_simple_walk(self):
        """w = gamma gives Exp(2 d gamma) waits and uniform directions."""
        state = WalkerState(3, 8, np.zeros((8, 8, 8)), np.random.default_rng(1))
        waits, dirs = draws(next_event, state, RateModel(CONSTANT), 4000)
        se = (1.0 / 6.0) / np.sqrt(len(waits))
        assert abs(waits.mean() - 1.0 / 6.0) < 4.0 * se
        assert chisquare(np.bincount(dirs, minlength=6)).pvalue > 1e-3

    def test_sampling_leaves_state_unchanged(self):
        """Drawing an event does not advance the walker."""
        ell = np.random.default_rng(2).normal(size=(8, 8, 8))
        state = WalkerState(3, 8, ell.copy(), np.random.default_rng(3))
        next_event(state, RateModel(GAUSSIAN))
        assert state.t == 0.0
        np.testing.assert_array_equal(state.ell, ell)

    def test_thinning_matches_inversion(self):
        """Both samplers draw the same waiting-time law."""
        ell = np.random.default_rng(4).normal(size=16)
        model = RateModel(GAUSSIAN)
        a, _ = draws(next_event, WalkerState(1, 16, ell.copy(), np.random.default_rng(5)), model, 1000)
        b, _ = draws(next_event_thinning, WalkerState(1, 16, ell.copy(), np.random.default_rng(6)), model, 1000)
        assert ks_two_sample(a, b)["p_value"] > 1e-3

    def test_closure_uses_thinning(self):
        """Closures are sampled against their cap."""
        rf = ClosureRate(gamma=1.0, fn=lambda u: np.ones_like(u), rate_cap=2.0)
        state = WalkerState(3, 8, np.zeros((8, 8, 8)), np.random.default_rng(8))
        waits, _ = draws(next_event, state, RateModel(rf), 2000)
        se = (1.0 / 6.0) / np.sqrt(len(waits))
        assert abs(waits.mean() - 1.0 / 6.0) < 4.0 * se

    def test_frozen_rate_is_constant_in_time(self):
        """Frozen sojourns are exponential with rate sum_e w(delta_e)."""
        ell = np.random.default_rng(9).normal(size=(8, 8, 8))
        state = WalkerState(3, 8, ell, np.random.default_rng(10), frozen=True)
        model = RateModel(GAUSSIAN)
        total = float(np.sum(model.rate(state.deltas())))
        waits, _ = draws(next_event, state, model, 4000)
        se = (1.0 / total) / np.sqrt(len(waits))
        assert abs(waits.mean() - 1.0 / total) < 4.0 * se

    def test_wrong_field_shape(self):
        """The local-time field must be (L,)^d."""
        with pytest.raises(ConfigError):
            WalkerState(3, 8, np.zeros((8, 8)), np.random.default_rng(0))


class TestSimulateWalk:
    """Full replicas to the horizon."""

    def test_grid_and_origin(self):
        """Positions are recorded on 0, 1, ..., T starting at the origin."""
        record = run_trajectory(small_config())
        assert record.times == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        assert len(record.positions) == 6
        assert record.positions[0] == [0.0, 0.0, 0.0]
        assert sum(record.jump_counts) == record.n_events

    def test_local_time_conserved(self):
        """Total local time grows by exactly T."""
        record = run_trajectory(small_config())
        assert record.extras["local_time_gain"] == pytest.approx(5.0, rel=1e-9)

    def test_deterministic(self):
        """(seed, replica) reproduces the trajectory; another replica differs."""
        cfg = small_config()
        a, b, c = run_trajectory(cfg, 0), run_trajectory(cfg, 0), run_trajectory(cfg, 1)
        assert a.positions == b.positions
        assert a.n_events == b.n_events
        assert a.spawn_key == [0] and c.spawn_key == [1]
        assert a.gradient_start != c.gradient_start

    def test_zero_horizon(self):
        """T = 0 gives one sample at the origin and no events."""
        record = run_trajectory(small_config(horizon=0.0))
        assert record.positions == [[0.0, 0.0, 0.0]]
        assert record.n_events == 0
        assert lln_check(record) == 0.0
        assert record.gradient_start == record.gradient_end

    def test_empty_start(self):
        """The empty profile starts from zero local time."""
        record = run_trajectory(small_config(init="empty"))
        assert record.gradient_start == [0.0, 0.0, 0.0]
        assert not record.stationary

    def test_frozen_environment(self):
        """Frozen walks leave the local time untouched."""
        record = run_trajectory(small_config(tsaw={"frozen": True}))
        assert record.extras["local_time_gain"] == 0.0
        assert record.gradient_start == record.gradient_end
        assert sum(record.extras["expected_jump_counts"]) == pytest.approx(record.n_events)

    def test_missing_rate(self):
        """A config without a rate cannot be simulated."""
        cfg = small_config().model_copy(update={"rate": None})
        with pytest.raises(ConfigError):
            simulate_walk(cfg)


class TestCompensator:
    """X = bar + tilde + N + M along every coordinate."""

    def test_decomposition_residual(self):
        """The residual vanishes to rounding."""
        record = run_trajectory(small_config(horizon=20.0))
        comp = record.compensator
        assert max(abs(v) for v in comp["residual"]) < 1e-9
        np.testing.assert_allclose(comp["X"], record.displacement, atol=1e-12)

    def test_residual_detects_altered_log(self):
        """Reversing one logged jump leaves a residual of 2 on its axis."""
        record, log = simulate_walk(small_config(horizon=20.0))
        jumps = [i for i, direction in enumerate(log.directions) if direction >= 0]
        i = jumps[len(jumps) // 2]
        axis = int(log.directions[i]) // 2
        log.directions[i] = int(log.directions[i]) ^ 1

        comp = compensator_decomposition(log, GAUSSIAN, record.displacement)
        assert abs(comp["residual"][axis]) == pytest.approx(2.0, abs=1e-9)
        others = [v for l, v in enumerate(comp["residual"]) if l != axis]
        assert max(abs(v) for v in others) < 1e-9

    def test_displacement_must_match_dimension(self):
        """A displacement of the wrong length is refused."""
        record, log = simulate_walk(small_config())
        with pytest.raises(EventLogError):
            compensator_decomposition(log, GAUSSIAN, record.displacement[:2])

    def test_frozen_decomposition(self):
        """Frozen sojourns integrate s and r at constant argument."""
        record = run_trajectory(small_config(horizon=20.0, tsaw={"frozen": True}))
        assert max(abs(v) for v in record.compensator["residual"]) < 1e-9

    def test_no_events_kept(self):
        """Without an event log there is no decomposition."""
        record = run_trajectory(small_config(tsaw={"keep_events": False}))
        assert record.compensator is None

    def test_cross_moments(self):
        """Replica statistics report cross moments and the largest residual."""
        cfg = small_config(horizon=3.0)
        records = [run_trajectory(cfg, r) for r in range(10)]
        stats = compensator_statistics(records)
        assert set(stats) >= {"N_phi", "N_M", "max_residual", "tilde_sq_rate"}
        assert stats["max_residual"] < 1e-9

    def test_cross_moments_need_decomposition(self):
        """Records without compensators are refused."""
        record = run_trajectory(small_config(tsaw={"keep_events": False}))
        with pytest.raises(EventLogError):
            compensator_statistics([record])


class TestQuadraticVariation:
    """Jump quadratic-variation rate per axis."""

    def test_constant_rate(self):
        """With w = 1 each axis sees jumps at rate 2."""
        cfg = small_config(rate=CONSTANT.model_dump(), horizon=20.0, tsaw={"keep_events": False})
        records = [run_trajectory(cfg, r) for r in range(12)]
        for l in range(3):
            qv = jump_quadratic_variation(records, l)
            assert qv.method == "qv_rate"
            assert abs(qv.value - 2.0) < 5.0 * qv.stderr + 1e-12

    def test_matches_jump_counts(self):
        """One record gives its own axis count over the horizon."""
        record = run_trajectory(small_config(horizon=10.0))
        qv = jump_quadratic_variation([record], 1)
        assert qv.value == pytest.approx((record.jump_counts[2] + record.jump_counts[3]) / 10.0)

    def test_needs_positive_horizon(self):
        """Zero-horizon records carry no rate."""
        record = run_trajectory(small_config(horizon=0.0))
        with pytest.raises(ConfigError):
            jump_quadratic_variation([record])


class TestEventLog:
    """Compressed per-sojourn logs."""

    def test_save_and_load(self, tmp_path):
        """A saved log loads back with the same arrays."""
        _, log = simulate_walk(small_config())
        path = log.save(tmp_path / "events.npz")
        loaded = EventLog.load(path)
        assert loaded.d == 3 and loaded.frozen is False
        for name, array in log.arrays().items():
            np.testing.assert_array_equal(loaded.arrays()[name], array)

    def test_save_is_byte_stable(self, tmp_path):
        """Saving twice writes identical bytes."""
        _, log = simulate_walk(small_config())
        a = log.save(tmp_path / "a.npz").read_bytes()
        b = log.save(tmp_path / "b.npz").read_bytes()
        assert a == b

    def test_last_sojourn_censored(self):
        """The final sojourn is cut at T with no exit direction."""
        _, log = simulate_walk(small_config())
        assert log.directions[-1] == -1
        assert sum(log.waits) == pytest.approx(5.0, rel=1e-9)


class TestStationarityChecks:
    """KS, reversibility and law-of-large-numbers diagnostics."""

    def test_frozen_gradients_identical(self):
        """Unchanged gradients give KS statistic 0."""
        cfg = small_config(horizon=1.0, tsaw={"frozen": True})
        records = [run_trajectory(cfg, r) for r in range(5)]
        assert stationarity_ks(records) == {"statistic": 0.0, "p_value": 1.0}

    def test_yaglom_report(self):
        """Every reversal statistic carries a z-score."""
        cfg = small_config(horizon=2.0)
        stats = yaglom_check([run_trajectory(cfg, r) for r in range(20)])
        for key in ("gradient_mean", "gradient_variance", "gradient_displacement", "jump_direction"):
            assert np.isfinite(stats[key]["z"])
        assert stats["max_abs_z"] >= 0.0

    def test_lln(self):
        """|X(T)| / T is non-negative and finite."""
        value = lln_check(run_trajectory(small_config()))
        assert np.isfinite(value) and value >= 0.0
