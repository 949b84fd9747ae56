"""
Rate function and interaction potential: pointwise evaluation and condition checks.

All routines are pure; RateFunction and Potential are frozen schemas.
"""

from math import factorial
from typing import Optional, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import minimize_scalar

from ..schemas.model import ClosureRate, ConditionReport, Potential, RateFunction
from ..utils.errors import PotentialError, RateFunctionError
from ..utils.logger import get_logger

logger = get_logger(__name__)

AnyRate = Union[RateFunction, ClosureRate]

DEFAULT_U_MAX = 50.0
DEFAULT_N_GRID = 20001


# === Rate function ===

def evaluate_rate(rf: AnyRate, u):
    """w(u) = gamma + s(u) + r(u), vectorized over u."""
    if isinstance(rf, ClosureRate):
        return rf(u)
    return rf.w_polynomial(np.asarray(u, dtype=float))


def evaluate_s(rf: RateFunction, u):
    return rf.s_polynomial(np.asarray(u, dtype=float))


def evaluate_r(rf: RateFunction, u):
    return rf.r_polynomial(np.asarray(u, dtype=float))


def gibbs_potential(rf: RateFunction) -> Polynomial:
    """R(u) = int_0^u r(v) dv: even, convex, R(0) = 0."""
    return rf.r_polynomial.integ(lbnd=0.0)


def gaussian_mean_s(rf: RateFunction, variance: float) -> float:
    """E s(X) for X ~ N(0, variance): sum s_2k (2k-1)!! variance^k."""
    total = 0.0
    for k, a in enumerate(rf.s_coeffs):
        double_factorial = factorial(2 * k) / (2 ** k * factorial(k))
        total += a * double_factorial * variance ** k
    return total


def _cauchy_radius(p: Polynomial) -> float:
    """All real roots of p lie in |u| < 1 + max |a_i / a_n|."""
    coef = p.trim().coef
    if len(coef) <= 1:
        return 0.0
    return 1.0 + float(np.max(np.abs(coef[:-1] / coef[-1])))


def _infimum_on_line(p: Polynomial, u_max: float, n_grid: int) -> Tuple[float, float, float, bool]:
    """
    Infimum of a polynomial over the real line.

    The grid covers [-U, U] with U beyond the Cauchy radius, so the sign of p
    outside the grid is that of its leading term. Returns
    (infimum, argmin, U, bounded_below).
    """
    p = p.trim()
    if p.degree() == 0:
        return float(p.coef[0]), 0.0, 0.0, True

    radius = max(u_max, _cauchy_radius(p))
    grid = np.linspace(-radius, radius, n_grid)
    values = p(grid)
    i = int(np.argmin(values))
    lead = p.coef[-1]
    bounded = p.degree() % 2 == 0 and lead > 0

    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, n_grid - 1)]
    refined = minimize_scalar(p, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    if refined.success and refined.fun < values[i]:
        return float(refined.fun), float(refined.x), radius, bounded
    return float(values[i]), float(grid[i]), radius, bounded


def minimal_domination_constant(
    rf: RateFunction, u_max: float = DEFAULT_U_MAX, n_grid: int = DEFAULT_N_GRID
) -> Optional[float]:
    """
    Smallest C with s(u) <= C exp((c - eps) u^2 / 2) on the line.

    None when no such constant exists (c - eps <= 0 and s unbounded).
    """
    s = rf.s_polynomial.trim()
    a = rf.c - rf.eps
    if a <= 0.0:
        if s.degree() == 0:
            return max(float(s.coef[0]), 0.0)
        lead = s.coef[-1]
        return None if lead > 0 else max(float(np.max(s(np.linspace(0.0, u_max, n_grid)))), 0.0)

    # s is even; beyond sqrt(2 deg / a) plus its root radius the envelope is decreasing.
    reach = max(u_max, np.sqrt(2.0 * max(s.degree(), 1) / a) + _cauchy_radius(s))
    grid = np.linspace(0.0, reach, n_grid)

    def envelope(u):
        return s(u) * np.exp(-a * u * u / 2.0)

    values = envelope(grid)
    i = int(np.argmax(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    refined = minimize_scalar(lambda u: -envelope(u), bounds=(lo, hi), method="bounded")
    best = max(float(values[i]), float(-refined.fun) if refined.success else -np.inf)
    return max(best, 0.0)


def entire_series(rf: RateFunction) -> Tuple[Optional[float], Optional[float]]:
    """
    The series sum_n (2/c)^(n/2) |r^(n)(0)| over odd n.

    Returns (sum, ratio). For truncated series with three or more terms the
    geometric ratio of successive terms is fitted; a ratio >= 1 means
    divergence and the sum is None.
    """
    derivs = [1.0] if rf.r_mode == "linear" else list(rf.r_coeffs)
    orders = np.arange(1, 2 * len(derivs), 2)
    terms = (2.0 / rf.c) ** (orders / 2.0) * np.abs(derivs)
    total = float(np.sum(terms))

    if not rf.r_series_truncated:
        return total, None

    nonzero = terms > 0
    if np.count_nonzero(nonzero) < 3:
        return total, None

    k = np.arange(len(terms))[nonzero]
    slope = np.polyfit(k, np.log(terms[nonzero]), 1)[0]
    ratio = float(np.exp(slope))
    if ratio >= 1.0:
        return None, ratio
    return total + float(terms[nonzero][-1]) * ratio / (1.0 - ratio), ratio


def check_conditions(
    rf: AnyRate,
    u_max: float = DEFAULT_U_MAX,
    n_grid: int = DEFAULT_N_GRID,
) -> ConditionReport:
    """
    Check ellipticity, convexity, Gaussian domination and the entire-series bound.

    Args:
        rf: Parametrized rate function
        u_max: Half-width of the evaluation grid (extended past the root radius)
        n_grid: Number of grid points

    Returns:
        ConditionReport with flags, the exact infimum of w and the fitted
        minimal domination constant
    """
    if isinstance(rf, ClosureRate):
        raise RateFunctionError("closure rate functions cannot be condition-checked")

    inf_w, argmin_w, radius_w, bounded_w = _infimum_on_line(rf.w_polynomial, u_max, n_grid)
    ellipticity = bounded_w and inf_w > 0.0

    inf_rp, _, radius_r, bounded_r = _infimum_on_line(rf.r_polynomial.deriv(), u_max, n_grid)
    convexity = bounded_r and inf_rp > rf.c

    C_min = minimal_domination_constant(rf, u_max, n_grid)
    domination = C_min is not None and C_min < rf.C_dom

    entire_sum, ratio = entire_series(rf)

    margins = {}
    if ellipticity:
        margins["ellipticity"] = inf_w
    if convexity:
        margins["convexity"] = inf_rp - rf.c
    if domination:
        margins["gaussian_domination"] = rf.C_dom - C_min

    report = ConditionReport(
        ellipticity=ellipticity,
        convexity=convexity,
        gaussian_domination=domination,
        r_entire=entire_sum is not None,
        entire_sum=entire_sum,
        entire_ratio=ratio,
        inf_w=inf_w,
        argmin_w=argmin_w,
        gamma_is_lower_bound=bool(rf.gamma <= inf_w + 1e-12),
        inf_r_prime=inf_rp,
        C_dom_min=C_min,
        u_max=u_max,
        n_grid=n_grid,
        tail_radius=max(radius_w, radius_r),
        margins=margins,
    )
    logger.debug(f"Rate conditions: all_passed={report.all_passed} inf_w={inf_w:.6g}")
    return report


def rate_lower_bound(rf: AnyRate) -> float:
    """Positive lower bound of w used to bracket hazards: min(gamma, inf w)."""
    if isinstance(rf, ClosureRate):
        return rf.gamma
    inf_w, _, _, bounded = _infimum_on_line(rf.w_polynomial, DEFAULT_U_MAX, 4001)
    if not bounded or inf_w <= 0.0:
        raise RateFunctionError("rate function is not bounded away from zero", {"inf_w": inf_w})
    return min(rf.gamma, inf_w)


# === Potential ===

def _sq_norm(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


def potential_eval(V: Potential, x):
    """V(x) = a exp(-|x|^2 / sigma^2); x has trailing axis of length d."""
    return V.amplitude * np.exp(-_sq_norm(x) / V.width ** 2)


def potential_grad(V: Potential, x):
    """grad V(x) = -2 x / sigma^2 V(x)."""
    x = np.asarray(x, dtype=float)
    return (-2.0 / V.width ** 2) * x * potential_eval(V, x)[..., None]


def potential_force(V: Potential, x):
    """F = -grad V."""
    return -potential_grad(V, x)


def potential_hat(V: Potential, p):
    """
    Unitary Fourier transform (2 pi)^(-d/2) int e^{ipx} V(x) dx.

    For the Gaussian family: a (sigma^2 / 2)^(d/2) exp(-sigma^2 |p|^2 / 4) >= 0.
    """
    s2 = V.width ** 2
    return V.amplitude * (s2 / 2.0) ** (V.d / 2.0) * np.exp(-s2 * _sq_norm(p) / 4.0)


def potential_hat_radial(V: Potential, k):
    """V_hat as a function of |p|."""
    k = np.asarray(k, dtype=float)
    s2 = V.width ** 2
    return V.amplitude * (s2 / 2.0) ** (V.d / 2.0) * np.exp(-s2 * k * k / 4.0)


def potential_root_hat(V: Potential, p):
    """U_hat = sqrt(V_hat), the positive definite square root U * U = V."""
    return np.sqrt(potential_hat(V, p))


def check_potential(V: Potential, n_samples: int = 10_000, seed: int = 0) -> float:
    """Minimum of V_hat over random momenta; raises PotentialError if negative."""
    rng = np.random.default_rng(seed)
    p = rng.normal(scale=3.0 / V.width, size=(n_samples, V.d))
    smallest = float(np.min(potential_hat(V, p)))
    if smallest < 0.0:
        raise PotentialError("potential is not positive definite", {"min_hat": smallest})
    return smallest
