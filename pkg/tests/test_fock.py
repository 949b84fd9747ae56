"""Tests for the truncated Fock-space operators."""

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from src.schemas.model import Potential, RateFunction
from src.schemas.run import FockOptions
from src.tools.fock import (
    FockSpace,
    MomentumGrid,
    assemble_generator,
    assemble_polymer,
    assembly_from_rate,
    block_norm,
    compensator_tilde,
    extrapolate_linear,
    fock_summary,
    halfinv_nabla_sup,
    kv_total_variance,
    norm_growth_scan,
    resolvent_sigma2,
    solve_resolvent,
    structure_checks,
    variance_crosscheck,
    wick_coefficients,
)
from src.tools.model_core import gaussian_mean_s
from src.tools.stats import exponent_fit
from src.utils.errors import ConfigError, RateFunctionError


GAUSSIAN = RateFunction(gamma=1.0, s_coeffs=[0.0, 0.0, 0.25])
S4 = [0.0, 0.0, 0.0, 0.0, 0.25]


def lattice(d: int = 1, L_f: int = 4, n_max: int = 2, s=S4, gamma: float = 1.0):
    return assemble_generator(gamma, s, MomentumGrid.lattice(d, L_f), n_max)


def dense(assembly, op) -> np.ndarray:
    """Matrix of op in orthonormal coordinates."""
    space = assembly.space
    size = int(space.offsets[-1])
    columns = []
    for i in range(size):
        x = np.zeros(size, dtype=complex)
        x[i] = 1.0
        columns.append(space.flatten(op(space.unflatten(x, orthonormal=True)), orthonormal=True))
    return np.stack(columns, axis=1)


def hand_creation(space, coeffs) -> np.ndarray:
    """
    sum_q c_q b_q^* on occupation-number states, b_q^* |k> = sqrt(k_q + 1) |k + e_q>.

    Columns and rows follow the space's flattened order; creations past the
    degree cap are dropped.
    """
    K = space.grid.size
    index = {}
    for n in range(space.n_max + 1):
        for i, row in enumerate(space.states[n]):
            index[tuple(np.bincount(row, minlength=K))] = int(space.offsets[n]) + i
    size = int(space.offsets[-1])
    matrix = np.zeros((size, size), dtype=complex)
    for occupation, column in index.items():
        for q, c in enumerate(coeffs):
            raised = list(occupation)
            raised[q] += 1
            row = index.get(tuple(raised))
            if row is not None:
                matrix[row, column] += c * np.sqrt(occupation[q] + 1)
    return matrix


class TestFockSpace:
    """Multiset indexing and weights."""

    def test_dimensions(self):
        """K = 3 modes give 1, 3, 6 states up to degree 2."""
        space = FockSpace(MomentumGrid.lattice(1, 4), 2)
        assert space.dims == [1, 3, 6]

    def test_rank_is_a_bijection(self):
        """Sorted states are ranked 0..N-1 in order."""
        space = FockSpace(MomentumGrid.lattice(2, 4), 3)
        for n in range(4):
            np.testing.assert_array_equal(space.rank(space.states[n]), np.arange(space.dims[n]))

    def test_degree_cap_positive(self):
        """n_max = 0 is refused."""
        with pytest.raises(ConfigError):
            FockSpace(MomentumGrid.lattice(1, 4), 0)

    def test_one_particle_norm(self):
        """||f_e||^2 = (1 - L_f^{-d}) / (kappa d)."""
        for d, L_f in ((1, 4), (2, 4), (3, 2)):
            assembly = lattice(d, L_f, 1)
            expected = (1.0 - L_f ** -d) / (2.0 * d)
            assert assembly.sigma2((0, 1)) == pytest.approx(expected, rel=1e-12)

    @hyp_settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 3))
    def test_symmetrize_idempotent(self, seed, n):
        """Symmetrizing a symmetric tensor returns the same component."""
        space = FockSpace(MomentumGrid.lattice(1, 4), 3)
        tensor = np.random.default_rng(seed).normal(size=(space.grid.size,) * n)
        component = space.symmetrize(tensor, n)
        again = space.symmetrize(space.to_tensor(component, n), n)
        np.testing.assert_allclose(again, component, atol=1e-12)


class TestLadderOperators:
    """Creation, annihilation and normal-ordered powers."""

    def test_creation_adjoint(self):
        """(u, a v) = (a* u, v) on random vectors."""
        checks = structure_checks(lattice(2, 4, 3), seed=1, trials=5)
        assert checks["creation_adjoint"] < 1e-10

    def test_creation_norm_on_vacuum(self):
        """||a*_e vac|| = ||f_e||."""
        assembly = lattice(2, 4, 2)
        e = (0, 1)
        space = assembly.space
        value = block_norm(space, lambda v: assembly.creation(e, v), lambda w: assembly.annihilation(e, w), 0, 1)
        assert value == pytest.approx(np.sqrt((1.0 - 4.0 ** -2) / 4.0), rel=1e-10)

    def test_creation_grows_like_square_root(self):
        """||a*_e|| on degree n is sqrt(n + 1) ||f_e||."""
        assembly = lattice(1, 4, 4)
        e = (0, 1)
        space = assembly.space
        norms = [
            block_norm(space, lambda v: assembly.creation(e, v), lambda w: assembly.annihilation(e, w), n, n + 1)
            for n in range(4)
        ]
        fit = exponent_fit(np.arange(1, 5), norms)
        assert fit.value == pytest.approx(0.5, abs=1e-6)
        assert norms[0] == pytest.approx(np.sqrt(assembly.sigma2(e)), rel=1e-10)

    def test_creation_norm_three_dimensions(self):
        """In d = 3, ||a*_e on degree n|| / sqrt(n + 1) = sqrt(2 C(0) - C(e) - C(-e)) = sqrt((1 - 4^-3) / 6)."""
        assembly = lattice(3, 4, 3)
        e = (0, 1)
        space = assembly.space
        for n in range(3):
            value = block_norm(
                space, lambda v: assembly.creation(e, v), lambda w: assembly.annihilation(e, w), n, n + 1
            ) / np.sqrt(n + 1)
            assert value == pytest.approx(np.sqrt((1.0 - 4.0 ** -3) / 6.0), rel=1e-8)
            assert value == pytest.approx(np.sqrt(1.0 / 6.0), rel=0.02)

    def test_halfinv_nabla_bounded(self):
        """sup |Delta|^{-1/2} nabla_e = 1."""
        assert halfinv_nabla_sup(lattice(1, 4, 3), (0, 1)) == pytest.approx(1.0, abs=1e-12)
        assert halfinv_nabla_sup(lattice(2, 4, 2), (0, 1)) <= 1.0 + 1e-12

    def test_wick_coefficients(self):
        """x^4 = :x^4: + 6 sigma^2 :x^2: + 3 sigma^4."""
        assert wick_coefficients(4) == [(0, 1), (1, 6), (2, 3)]

    def test_s_of_n_on_vacuum(self):
        """The vacuum component of s(N_e) 1 is the Gaussian mean of s."""
        assembly = lattice(1, 4, 4)
        e = (0, 1)
        out = assembly.s_of_n(e, assembly.space.vacuum())
        expected = gaussian_mean_s(GAUSSIAN, assembly.sigma2(e))
        assert out[0][0].real == pytest.approx(expected, rel=1e-12)

    def test_single_mode_square(self):
        """u^2 acts on the vacuum as sigma^2 + a*a*, with ||a*a* 1||^2 = 2 sigma^4."""
        assembly = lattice(1, 4, 2, s=[0.0, 0.0, 1.0])
        e = (0, 1)
        space = assembly.space
        sigma2 = assembly.sigma2(e)
        out = assembly.s_of_n(e, space.vacuum())
        assert out[0][0].real == pytest.approx(sigma2, rel=1e-12)
        assert np.all(out[1] == 0.0)
        assert space.norm(space.project(out, 2)) == pytest.approx(np.sqrt(2.0) * sigma2, rel=1e-10)


class TestHandBuiltMatrices:
    """Ladder operators against occupation-number matrices on K = 3 modes (d = 1, L_f = 4)."""

    e = (0, 1)

    def toy(self, s):
        assembly = lattice(1, 4, 3, s=s)
        p = 0.5 * np.pi * np.arange(1, 4)
        np.testing.assert_allclose(assembly.space.grid.momenta[:, 0], p, atol=1e-15)
        weights = 1.0 / (4.0 * (1.0 - np.cos(p))) / 4.0
        coeffs = (np.exp(1j * p) - 1.0) * np.sqrt(weights)
        return assembly, hand_creation(assembly.space, coeffs)

    def test_creation_and_annihilation(self):
        """a*_e and a_e are c.b^* and its conjugate transpose."""
        assembly, A_star = self.toy(S4)
        creation = dense(assembly, lambda v: assembly.creation(self.e, v))
        annihilation = dense(assembly, lambda v: assembly.annihilation(self.e, v))
        np.testing.assert_allclose(creation, A_star, atol=1e-12)
        np.testing.assert_allclose(annihilation, A_star.conj().T, atol=1e-12)

    def test_wick_square_away_from_cap(self):
        """s(u) = u^2 in normal order equals (a* + a)^2 below the top degree."""
        assembly, A_star = self.toy([0.0, 0.0, 1.0])
        field = A_star + A_star.conj().T
        square = field @ field
        wick = dense(assembly, lambda v: assembly.s_of_n(self.e, v))
        top = int(assembly.space.offsets[assembly.n_max])
        np.testing.assert_allclose(wick[:, :top], square[:, :top], atol=1e-12)
        # the dropped a a* term shows on the top degree
        assert not np.allclose(wick[:, top:], square[:, top:], atol=1e-6)

    def test_wick_fourth_power_on_vacuum(self):
        """u^4 on the vacuum matches (a* + a)^4 below the cap."""
        assembly, A_star = self.toy([0.0, 0.0, 0.0, 0.0, 1.0])
        field = A_star + A_star.conj().T
        expected = np.linalg.matrix_power(field, 4)[:, 0]
        space = assembly.space
        got = space.flatten(assembly.s_of_n(self.e, space.vacuum()), orthonormal=True)
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestGeneratorStructure:
    """Symmetric and antisymmetric parts of the generator."""

    def test_lattice_checks(self):
        """Adjointness, parity and vacuum residuals vanish."""
        checks = structure_checks(lattice(1, 4, 3), seed=2, trials=5)
        for name, value in checks.items():
            assert value < 1e-10, name

    def test_continuum_checks(self):
        """The polymer generator has the same structure."""
        assembly = assemble_polymer(Potential(d=3), L_f=4, n_max=2)
        assert not assembly.lattice
        checks = structure_checks(assembly, seed=3, trials=3)
        for name, value in checks.items():
            assert value < 1e-10, name

    def test_dense_oracle(self):
        """Dense matrices: S Hermitian and non-negative, A anti-Hermitian, A_- = A_+^*."""
        assembly = lattice(1, 4, 2)
        S = dense(assembly, assembly.S)
        A = dense(assembly, assembly.A)
        A_plus = dense(assembly, assembly.A_plus)
        A_minus = dense(assembly, assembly.A_minus)
        np.testing.assert_allclose(S, S.conj().T, atol=1e-12)
        np.testing.assert_allclose(A, -A.conj().T, atol=1e-12)
        np.testing.assert_allclose(A_minus, A_plus.conj().T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(S)) > -1e-10

    def test_degree_one_diagonal(self):
        """Without s the one-particle block of S is 2 gamma D(p)."""
        assembly = lattice(1, 4, 2, s=[], gamma=0.5)
        S = dense(assembly, assembly.S)
        p = assembly.space.totals[1][:, 0]
        np.testing.assert_allclose(np.diag(S)[1:4].real, 2.0 * 0.5 * (1.0 - np.cos(p)), atol=1e-12)

    def test_zero_s_has_no_S1(self):
        """s = 0 gives S1 = 0."""
        assembly = lattice(1, 4, 2, s=[])
        v = assembly.space.random(np.random.default_rng(0))
        assert assembly.space.norm(assembly.S1(v)) == 0.0

    def test_S1_linear_in_s(self):
        """Halving s4 halves S1."""
        full = lattice(1, 4, 3)
        half = lattice(1, 4, 3, s=[0.0, 0.0, 0.0, 0.0, 0.125])
        v = full.space.random(np.random.default_rng(1))
        for a, b in zip(full.S1(v), half.S1(v)):
            np.testing.assert_allclose(a, 2.0 * b, atol=1e-12)

    def test_odd_s_rejected(self):
        """An odd power in s raises."""
        with pytest.raises(RateFunctionError):
            lattice(s=[0.0, 1.0])

    def test_linear_r_required(self):
        """Only r(u) = u is assembled."""
        rf = RateFunction(gamma=1.0, s_coeffs=[0.0, 0.0, 0.25], r_mode="entire", r_coeffs=[1.0, 6.0])
        with pytest.raises(RateFunctionError):
            assembly_from_rate(rf, MomentumGrid.lattice(1, 4), 2)


class TestResolvent:
    """(lam - G)^{-1} and the variance decomposition."""

    def test_zero_source(self):
        """f = 0 gives u = 0."""
        assembly = lattice(1, 4, 2)
        u = solve_resolvent(assembly, assembly.space.zeros(), 0.5)
        assert assembly.space.norm(u) == 0.0

    def test_solution_satisfies_equation(self):
        """(lam - G) u = f to solver accuracy."""
        assembly = lattice(1, 4, 3)
        f = compensator_tilde(assembly, 0)
        u = solve_resolvent(assembly, f, 0.3)
        lhs = [0.3 * a - b for a, b in zip(u, assembly.G(u))]
        gap = assembly.space.norm([a - b for a, b in zip(lhs, f)])
        assert gap < 1e-6 * assembly.space.norm(f)

    def test_non_positive_lambda(self):
        """lam must be positive."""
        assembly = lattice(1, 4, 2)
        with pytest.raises(ConfigError):
            solve_resolvent(assembly, assembly.space.vacuum(), 0.0)

    def test_extrapolation(self):
        """The line through (1, 3) and (0.5, 2) meets lam = 0 at 1."""
        assert extrapolate_linear([1.0, 0.5], [3.0, 2.0]) == pytest.approx(1.0)
        assert extrapolate_linear([1.0], [4.0]) == 4.0

    def test_kv_total_variance(self):
        """sigma^2 = QV + correction, with the truncation repeat reported."""
        assembly = lattice(1, 4, 2)
        result = kv_total_variance(assembly, 0, [1.0, 0.3])
        assert result["sigma2"] == pytest.approx(result["qv_rate"] + result["correction"])
        assert result["qv_gaussian"] == pytest.approx(
            2.0 + 2.0 * gaussian_mean_s(GAUSSIAN, assembly.sigma2((0, 1)))
        )
        assert len(result["correction_terms"]) == 2
        assert "truncation_change" in result
        assert result["truncation_flux_bound"] >= 0.0

    def test_measured_qv_rate(self):
        """A measured QV rate replaces the Gaussian one."""
        result = kv_total_variance(lattice(1, 4, 2), 0, [1.0, 0.3], qv_rate=5.0, truncation_check=False)
        assert result["qv_rate"] == 5.0
        assert "truncation_change" not in result

    @pytest.mark.slow
    def test_tilde_resolvent_settles(self):
        """gamma = 10, s4 = 0.05 in d = 3: lam ||u||^2 decreases and 2 (u, phi_tilde) settles within 2%."""
        assembly = lattice(3, 4, 3, s=[0.0, 0.0, 0.0, 0.0, 0.05], gamma=10.0)
        result = resolvent_sigma2(assembly, compensator_tilde(assembly, 0), [1.0, 0.3, 0.1, 0.03, 0.01])
        assert result["decreasing"]
        assert result["cauchy_gap"] < 0.02

    def test_degree_cap_insensitive(self):
        """Raising n_max from 3 to 4 moves 2 (u, phi_tilde) at lam = 0.1 by less than 5%."""
        values = []
        for n_max in (3, 4):
            assembly = lattice(2, 4, n_max, s=[0.0, 0.0, 0.0, 0.0, 0.05], gamma=10.0)
            f = compensator_tilde(assembly, 0)
            u = solve_resolvent(assembly, f, 0.1)
            values.append(2.0 * assembly.space.inner(u, f).real)
        assert values[0] > 0.0
        assert abs(values[1] - values[0]) < 0.05 * abs(values[0])

    def test_bad_schedule(self):
        """Schedules must be strictly decreasing."""
        with pytest.raises(ConfigError):
            kv_total_variance(lattice(1, 4, 2), 0, [0.1, 1.0])

    def test_continuum_has_no_lattice_compensator(self):
        """Lattice compensators need a lattice grid."""
        with pytest.raises(ConfigError):
            compensator_tilde(assemble_polymer(Potential(d=3), L_f=2, n_max=1), 0)

    def test_two_point_grid_has_no_tilde(self):
        """On L_f = 2 every sin p_l vanishes, so phi_tilde is refused."""
        with pytest.raises(ConfigError):
            compensator_tilde(lattice(3, 2, 1), 0)
        assert FockOptions().L_f == 4
        assert np.any(compensator_tilde(lattice(3, 4, 1), 0)[1] != 0.0)

    def test_measured_qv_stderr(self):
        """A measured QV rate carries its standard error into sigma^2."""
        result = kv_total_variance(
            lattice(1, 4, 2), 0, [1.0, 0.3], qv_rate=5.0, truncation_check=False, qv_stderr=0.2
        )
        assert result["sigma2_stderr"] == 0.2
        assert kv_total_variance(lattice(1, 4, 2), 0, [1.0, 0.3], truncation_check=False)["sigma2_stderr"] == 0.0


class TestVarianceCrosscheck:
    """Decomposed sigma^2 against a Monte Carlo diffusivity."""

    def test_z_score(self):
        """z = (sigma2 - measured) / hypot(stderrs)."""
        check = variance_crosscheck({"sigma2": 2.0, "sigma2_stderr": 0.3}, {"value": 1.0, "stderr": 0.4})
        assert check["z"] == pytest.approx(2.0)
        assert check["consistent"]
        far = variance_crosscheck({"sigma2": 4.0, "sigma2_stderr": 0.3}, {"value": 1.0, "stderr": 0.4})
        assert not far["consistent"]

    def test_needs_an_error_bar(self):
        """Two exact numbers cannot be compared by z-score."""
        with pytest.raises(ConfigError):
            variance_crosscheck({"sigma2": 2.0, "sigma2_stderr": 0.0}, {"value": 1.0, "stderr": 0.0})

    def test_summary_carries_crosscheck(self):
        """fock_summary adds the cross-check when a measured value is given."""
        summary = fock_summary(
            lattice(1, 4, 2), [1.0, 0.3], scan_degrees=[0, 1], truncation_check=False,
            qv_rate=2.5, qv_stderr=0.1, measured={"value": 2.0, "stderr": 0.1},
        )
        kv = summary["kv"]
        assert kv["qv_rate"] == 2.5
        assert kv["crosscheck"]["measured"] == 2.0
        expected = (kv["sigma2"] - 2.0) / np.hypot(0.1, 0.1)
        assert kv["crosscheck"]["z"] == pytest.approx(expected)


class TestNormScan:
    """Per-degree block norms and the summary."""

    def test_scan_reports_blocks(self):
        """Lattice scans include the creation, A_+ and S1 blocks."""
        scan = norm_growth_scan(lattice(1, 4, 3), degrees=[0, 1, 2])
        assert {"creation", "halfinv_creation", "A_plus", "S1_shift0", "S1_shift2"} <= set(scan["blocks"])
        assert scan["one_particle_norm"] == pytest.approx(np.sqrt(0.375), rel=1e-12)

    def test_halfinv_creation_growth(self):
        """|Delta|^{-1/2} a*_e grows like a square root of the degree."""
        scan = norm_growth_scan(lattice(1, 4, 4))
        fit = scan["blocks"]["halfinv_creation"]["exponent"]
        assert fit is not None
        assert 0.3 <= fit["value"] <= 0.7

    def test_summary(self):
        """The lattice summary carries checks, the scan and the variance."""
        summary = fock_summary(lattice(1, 4, 2), [1.0, 0.3], scan_degrees=[0, 1], truncation_check=False)
        assert summary["variant"] == "lattice"
        assert summary["dims"] == [1, 3, 6]
        assert summary["halfinv_nabla_sup"] == pytest.approx(1.0, abs=1e-12)
        assert "kv" in summary
