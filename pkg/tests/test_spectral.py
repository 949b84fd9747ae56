"""Tests for the spectral constants and bounds."""

from math import factorial

import numpy as np
import pytest

from src.schemas.field import FieldSample
from src.schemas.model import Potential, RateFunction
from src.tools.spectral import (
    continuum_box_variance,
    continuum_covariance,
    covariance_bound_from_derivative,
    covariance_bound_evaluator,
    covariance_recursion_bound,
    entire_bound,
    gamma_kernel,
    gamma_kernel_average,
    gamma_kernel_sup,
    infrared_integral,
    lattice_green,
    lattice_green_bessel,
    lattice_green_difference,
    lattice_symbol,
    moment_bound,
    richardson,
    rho_squared,
    spectral_table,
    tsaw_variational_bound,
    variational_bound_continuum,
    z_bound,
    z_lambda,
)
from src.utils.errors import ConfigError, DimensionError, EstimatorError


V = Potential(amplitude=1.0, width=1.0, d=3)


class TestLatticeGreen:
    """Green function of -Delta on Z^d."""

    def test_origin_value(self):
        """C(0) = 0.25273 in d = 3."""
        assert lattice_green([0, 0, 0]) == pytest.approx(0.25273, abs=1e-4)

    def test_bessel_oracle_agrees(self):
        """Quadrature and the heat-kernel representation agree at e_1."""
        assert lattice_green([1, 0, 0]) == pytest.approx(lattice_green_bessel([1, 0, 0]), abs=1e-4)

    def test_bessel_origin(self):
        """The heat-kernel oracle alone reproduces C(0)."""
        assert lattice_green_bessel([0, 0, 0]) == pytest.approx(0.252731, abs=1e-5)

    def test_nearest_neighbour_difference(self):
        """C(0) - C(e) = 1/(2d) to 1e-8."""
        for d in (3, 4):
            assert lattice_green_difference(d, 16) == pytest.approx(1.0 / (2 * d), abs=1e-8)

    def test_low_dimension_rejected(self):
        """No lattice Green function in d = 2."""
        with pytest.raises(DimensionError):
            lattice_green([0, 0])

    def test_odd_resolution_rejected(self):
        """The midpoint grid needs an even number of points per axis."""
        with pytest.raises(ConfigError):
            lattice_green([0, 0, 0], ladder=[15])

    def test_richardson_removes_linear_and_quadratic_error(self):
        """Values a + b h + c h^2 extrapolate to a."""
        values = [1.0 + 0.5 / M + 0.25 / M ** 2 for M in (8, 16, 32)]
        assert richardson(values) == pytest.approx(1.0, abs=1e-14)


class TestGammaKernel:
    """Gamma(p) = (1 - cos p_1) / D(p)."""

    def test_average_is_one_over_d(self):
        """The grid average is exactly 1/d."""
        assert gamma_kernel_average(3, 32) == pytest.approx(1.0 / 3.0, abs=1e-10)

    def test_sup_bounded_by_one(self):
        """0 <= Gamma <= 1 with the supremum approached along the first axis."""
        sup = gamma_kernel_sup(3, 32)
        assert 0.99 < sup <= 1.0 + 1e-12


class TestInfrared:
    """int C_hat / D over the torus."""

    def test_converges_in_d3(self):
        """Bounded C_hat gives a settled value in d = 3."""
        result = infrared_integral(1.0, 3, ladder=[32, 64, 128])
        assert result["converged"]
        assert result["value"] > 0.0

    def test_grows_in_d2(self):
        """d = 2 grows like log M and never converges."""
        result = infrared_integral(1.0, 2, ladder=[64, 128, 256, 512])
        assert not result["converged"]
        assert result["value"] is None
        diffs = np.diff(result["values"])
        assert np.all(diffs > 0)
        assert result["log_slope"] > 0.5


class TestContinuumConstants:
    """Radial quadratures for the Gaussian potential."""

    def test_rho_squared(self):
        """rho^2 = sqrt(2) pi^{3/2} / 3 for V = exp(-|x|^2)."""
        assert rho_squared(V) == pytest.approx(np.sqrt(2.0) * np.pi ** 1.5 / 3.0, rel=1e-10)

    def test_continuum_origin_covariance(self):
        """C(0) = 1/2 in d = 3."""
        assert continuum_covariance(V, 0.0) == pytest.approx(0.5, rel=1e-8)

    def test_covariance_decreases(self):
        """C(|x|) decreases away from the origin."""
        values = [continuum_covariance(V, r) for r in (0.0, 1.0, 2.0, 4.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_box_variance_approaches_c0(self):
        """The box mode sum tends to C(0) as the box grows."""
        small = continuum_box_variance(V, 8.0, 16)
        large = continuum_box_variance(V, 32.0, 64)
        assert abs(large - 0.5) < abs(small - 0.5)

    def test_variational_bound(self):
        """int p_l^2 / |p|^2 V_hat = (2 pi)^{d/2} V(0) / d."""
        assert variational_bound_continuum(V) == pytest.approx((2.0 * np.pi) ** 1.5 / 3.0, rel=1e-8)

    def test_rho_needs_three_dimensions(self):
        """rho^2 diverges for d <= 2."""
        with pytest.raises(DimensionError):
            rho_squared(Potential(d=2))


class TestTsawBound:
    """Variational bound for the lattice compensator."""

    def test_scales_inversely_with_gamma(self):
        """Doubling gamma halves the bound."""
        a = tsaw_variational_bound(1.0, 3, ladder=[16, 32])
        b = tsaw_variational_bound(2.0, 3, ladder=[16, 32])
        assert b == pytest.approx(a / 2.0, rel=1e-12)

    def test_positive(self):
        """The bound is a positive finite number."""
        value = tsaw_variational_bound(1.0, 3, ladder=[16, 32])
        assert np.isfinite(value) and value > 0.0


class TestCovarianceBounds:
    """Brascamp-Lieb style bounds on C_nm."""

    def test_recursion_below_closed_form(self):
        """The induction bound never exceeds Z^2 (n!)^2 (2/c)^n."""
        for n in range(1, 6):
            assert covariance_recursion_bound(n, 0.9, 3, 1.2) <= covariance_bound_evaluator(n, n, 0.9, 1.2)

    def test_evaluator_formula(self):
        """(Z(c/2))^2 n! m! (2/c)^{(n+m)/2}."""
        expected = 4.0 * factorial(2) * factorial(3) * (2.0 / 0.5) ** 2.5
        assert covariance_bound_evaluator(2, 3, 0.5, 2.0) == pytest.approx(expected)

    def test_entire_bound_diverges(self):
        """A divergent series gives an infinite bound."""
        rf = RateFunction(
            gamma=1.0, r_mode="entire", r_coeffs=[1.0, 1.0, 1.0, 1.0], r_series_truncated=True
        )
        assert entire_bound(rf, 1.0) == float("inf")

    def test_z_bound(self):
        """(1 - lambda / c)^{-beta}, infinite at lambda = c."""
        assert z_bound(0.45, 0.9, 1.0) == pytest.approx(2.0)
        assert z_bound(0.9, 0.9, 1.0) == float("inf")


class TestZLambda:
    """Monte Carlo exponential moments of gradients."""

    def test_zero_lambda(self):
        """Z(0) = 1 exactly."""
        field = FieldSample(d=3, L=8, values=np.random.default_rng(0).normal(size=(8, 8, 8)), seed=0,
                            kind="lattice_gaussian")
        assert z_lambda([field, field], 0.0).value == pytest.approx(1.0)

    def test_empty_rejected(self):
        """At least one field is needed."""
        with pytest.raises(EstimatorError):
            z_lambda([], 0.1)


class TestSpectralTable:
    """JSON-ready table of named constants."""

    def test_table_contents(self):
        """The table carries the lattice constants and, with V, the continuum ones."""
        table = spectral_table(3, ladder=[16, 32], V=V)
        assert table["d"] == 3
        assert set(table["green"]) == {"0,0,0", "1,0,0"}
        assert table["C0_minus_Ce"] == pytest.approx(1.0 / 6.0, abs=1e-8)
        assert table["gamma_kernel_average"] == pytest.approx(1.0 / 3.0, abs=1e-10)
        assert table["rho_squared"] == pytest.approx(2.62494, abs=1e-4)
        assert table["continuum_C0"] == pytest.approx(0.5, rel=1e-8)


class TestSymbols:
    """Pointwise lattice symbols and small bound formulas."""

    def test_lattice_symbol(self):
        """D(0) = 0 and D(pi, 0, 0) = 2."""
        assert lattice_symbol([0.0, 0.0, 0.0]) == 0.0
        assert lattice_symbol([np.pi, 0.0, 0.0]) == pytest.approx(2.0)

    def test_gamma_kernel_on_axis(self):
        """Gamma = 1 along the first axis and 0 along the others."""
        assert gamma_kernel([0.7, 0.0, 0.0]) == pytest.approx(1.0)
        assert gamma_kernel([0.0, 0.7, 0.0]) == pytest.approx(0.0)

    def test_moment_bound(self):
        """m_2 <= Z 2 / c."""
        assert moment_bound(2, 0.5, 1.5) == pytest.approx(1.5 * 2.0 / 0.5)

    def test_derivative_bound(self):
        """(c d)^{-1} sup |C'| + c^{-1} m'^2."""
        assert covariance_bound_from_derivative(0.5, 3, 1.5, 2.0) == pytest.approx(1.0 + 8.0)
