"""
Deterministic Fourier-space computations.

Lattice quantities use the midpoint rule on [-pi, pi]^d with an even number
of points per axis, so the grid is symmetric under p -> -p and coordinate
permutations and never contains p = 0. The lattice Laplacian has symbol
-2 D(p) with D(p) = sum_l (1 - cos p_l), so (-Delta)^{-1} has symbol 1/(2 D).
"""

from math import factorial
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy import integrate, special

from ..schemas.field import FieldSample
from ..schemas.model import Potential, RateFunction
from ..schemas.run import Estimate
from ..utils.config import settings
from ..utils.errors import ConfigError, DimensionError, EstimatorError
from ..utils.logger import get_logger
from .model_core import entire_series, potential_hat_radial

logger = get_logger(__name__)

CHUNK_POINTS = 1 << 21


class TorusQuadrature(BaseModel):
    """Midpoint rule on [-pi, pi]^d with M points per axis and a refinement ladder."""

    d: int = Field(..., ge=1, description="Dimension")
    ladder: List[int] = Field(default_factory=lambda: list(settings.quad_ladder), description="M values")

    def nodes(self, M: int) -> np.ndarray:
        if M % 2:
            raise ConfigError("torus quadrature needs an even number of points per axis", {"M": M})
        return -np.pi + (np.arange(M) + 0.5) * (2.0 * np.pi / M)

    def mean(self, integrand: Callable[[np.ndarray], np.ndarray], M: int) -> float:
        """
        (2 pi)^{-d} int integrand(p) dp at resolution M.

        The integrand receives an array of shape (..., d); evaluation is
        chunked over the leading axes with a fixed reduction order.
        """
        axis = self.nodes(M)
        if self.d == 1:
            return float(np.mean(integrand(axis[:, None])))

        tail_axes = np.stack(np.meshgrid(*([axis] * (self.d - 1)), indexing="ij"), axis=-1)
        tail = tail_axes.reshape(-1, self.d - 1)
        step = max(1, CHUNK_POINTS // len(tail))
        partial = []
        for start in range(0, M, step):
            lead = axis[start:start + step]
            points = np.concatenate(
                [np.repeat(lead, len(tail))[:, None], np.tile(tail, (len(lead), 1))], axis=1
            )
            partial.append(float(np.sum(integrand(points))))
        return float(np.sum(partial)) / M ** self.d

    def ladder_means(self, integrand: Callable[[np.ndarray], np.ndarray]) -> List[float]:
        return [self.mean(integrand, M) for M in self.ladder]


class RadialQuadrature(BaseModel):
    """Gauss-Legendre rule on [0, R_max] for radial integrals with a Gaussian tail."""

    d: int = Field(..., ge=1)
    nodes_count: int = Field(default=400, ge=8)
    r_max: float = Field(default=40.0, gt=0.0)

    def rule(self):
        x, w = np.polynomial.legendre.leggauss(self.nodes_count)
        r = 0.5 * self.r_max * (x + 1.0)
        return r, 0.5 * self.r_max * w

    @property
    def sphere_area(self) -> float:
        """Surface area of the unit sphere in R^d."""
        return 2.0 * np.pi ** (self.d / 2.0) / special.gamma(self.d / 2.0)


def richardson(values: Sequence[float]) -> float:
    """
    Extrapolate a ladder of doubling resolutions.

    Midpoint sums of integrands with a |p|^{-2} singularity carry h and h^2
    error terms: the first level removes h, the second h^2.
    """
    values = [float(v) for v in values]
    if len(values) == 1:
        return values[0]
    first = [2.0 * b - a for a, b in zip(values[:-1], values[1:])]
    if len(first) == 1:
        return first[0]
    second = [(4.0 * b - a) / 3.0 for a, b in zip(first[:-1], first[1:])]
    return second[-1]


# === Lattice symbol and Green function ===

def lattice_symbol(p) -> np.ndarray:
    """D(p) = sum_l (1 - cos p_l); 0 <= D <= 2d and D(0) = 0."""
    p = np.asarray(p, dtype=float)
    return np.sum(1.0 - np.cos(p), axis=-1)


def _require_transient(d: int) -> None:
    if d < 3:
        raise DimensionError("the lattice Green function exists only for d >= 3", {"d": d})


def lattice_green_ladder(x: Sequence[int], ladder: Optional[Sequence[int]] = None) -> Dict[str, object]:
    """Green function C(x) = (2 pi)^{-d} int e^{-ipx} / (2 D(p)) dp on each ladder level."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    _require_transient(d)
    quad = TorusQuadrature(d=d, ladder=list(ladder or settings.quad_ladder))

    def integrand(p):
        return np.cos(p @ x) / (2.0 * lattice_symbol(p))

    values = quad.ladder_means(integrand)
    return {"ladder": quad.ladder, "values": values, "extrapolated": richardson(values)}


def lattice_green(x: Sequence[int], ladder: Optional[Sequence[int]] = None) -> float:
    """
    Lattice Green function of -Delta on Z^d (d >= 3), Richardson-extrapolated.

    C(0) = 0.252731... in d = 3.
    """
    return float(lattice_green_ladder(x, ladder)["extrapolated"])


def lattice_green_difference(d: int, M: int = 64) -> float:
    """
    C(0) - C(e_1) = (2 pi)^{-d} int (1 - cos p_1) / (2 D(p)) dp = 1/(2d).

    Exact on symmetric grids since the integrand averages to 1/(2d) over
    coordinate permutations.
    """
    _require_transient(d)
    quad = TorusQuadrature(d=d, ladder=[M])
    return quad.mean(lambda p: (1.0 - np.cos(p[..., 0])) / (2.0 * lattice_symbol(p)), M)


def lattice_green_bessel(x: Sequence[int]) -> float:
    """
    C(x) = int_0^inf prod_l e^{-2t} I_{x_l}(2t) dt, the heat-kernel representation.

    Independent of the torus quadrature; valid for d >= 3.
    """
    x = [abs(int(v)) for v in x]
    _require_transient(len(x))

    def heat_kernel(t):
        return float(np.prod([special.ive(v, 2.0 * t) for v in x]))

    head, _ = integrate.quad(heat_kernel, 0.0, 50.0, limit=200, epsabs=1e-13, epsrel=1e-12)
    tail, _ = integrate.quad(heat_kernel, 50.0, np.inf, limit=200, epsabs=1e-13, epsrel=1e-12)
    return head + tail


# === Gamma kernel ===

def gamma_kernel(p) -> np.ndarray:
    """Gamma(p) = (1 - cos p_1) / D(p); 0 <= Gamma <= 1."""
    p = np.asarray(p, dtype=float)
    return (1.0 - np.cos(p[..., 0])) / lattice_symbol(p)


def gamma_kernel_average(d: int = 3, M: int = 64) -> float:
    """(2 pi)^{-d} int Gamma = 1/d, exact on symmetric grids."""
    return TorusQuadrature(d=d, ladder=[M]).mean(gamma_kernel, M)


def gamma_kernel_sup(d: int = 3, M: int = 64) -> float:
    """Supremum of Gamma: grid maximum together with a sweep along the first axis."""
    quad = TorusQuadrature(d=d, ladder=[M])
    axis = quad.nodes(M)
    sweep = np.zeros((M, d))
    sweep[:, 0] = axis
    best = float(np.max(gamma_kernel(sweep)))
    if M ** d <= CHUNK_POINTS:
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        best = max(best, float(np.max(gamma_kernel(grid))))
    return best


# === Infrared integral ===

def infrared_integral(
    C_hat: Union[float, Callable[[np.ndarray], np.ndarray]],
    d: int,
    ladder: Optional[Sequence[int]] = None,
    tolerance: float = 0.01,
) -> Dict[str, object]:
    """
    The infrared integral int C_hat(p) / D(p) dp over [-pi, pi]^d.

    Returns the ladder values with their relative changes. In d >= 3 with
    bounded C_hat the values settle; in d = 2 they grow like log M and the
    fitted slope in log M is reported instead of a value.
    """
    quad = TorusQuadrature(d=d, ladder=list(ladder or settings.quad_ladder))
    if callable(C_hat):
        integrand = lambda p: C_hat(p) / lattice_symbol(p)
    else:
        constant = float(C_hat)
        integrand = lambda p: constant / lattice_symbol(p)

    volume = (2.0 * np.pi) ** d
    values = [volume * v for v in quad.ladder_means(integrand)]
    changes = [abs(b - a) / abs(b) for a, b in zip(values[:-1], values[1:])]
    slope = None
    if len(values) >= 2:
        slope = float(np.polyfit(np.log(quad.ladder), values, 1)[0])

    converged = bool(changes) and changes[-1] < tolerance and d >= 3
    return {
        "d": d,
        "ladder": quad.ladder,
        "values": values,
        "relative_changes": changes,
        "log_slope": slope,
        "converged": converged,
        "value": values[-1] if converged else None,
    }


# === Continuum radial integrals ===

def _require_rho(d: int) -> None:
    if d < 3:
        raise DimensionError("int |p|^-2 V_hat diverges at the origin for d <= 2", {"d": d})


def _gaussian_tail(V: Potential, power: float, r_max: float) -> float:
    """int_{r_max}^inf r^power V_hat(r) dr in closed form via the upper incomplete gamma."""
    s2 = V.width ** 2
    beta = s2 / 4.0
    prefactor = V.amplitude * (s2 / 2.0) ** (V.d / 2.0)
    shape = (power + 1.0) / 2.0
    return prefactor * 0.5 * beta ** (-shape) * special.gamma(shape) * special.gammaincc(shape, beta * r_max ** 2)


def _radial_integral(V: Potential, power: int, quad: RadialQuadrature) -> float:
    r, w = quad.rule()
    body = float(np.sum(w * r ** power * potential_hat_radial(V, r)))
    return body + _gaussian_tail(V, power, quad.r_max)


def rho_squared(V: Potential, quad: Optional[RadialQuadrature] = None) -> float:
    """
    rho^2 = d^{-1} int |p|^{-2} V_hat(p) dp.

    d = 3 and V = exp(-|x|^2): sqrt(2) pi^{3/2} / 3 = 2.6244...
    """
    _require_rho(V.d)
    quad = quad or RadialQuadrature(d=V.d, r_max=12.0 / V.width)
    return quad.sphere_area * _radial_integral(V, V.d - 3, quad) / V.d


def variational_bound_continuum(V: Potential, l: int = 0, quad: Optional[RadialQuadrature] = None) -> float:
    """
    int p_l^2 / |p|^2 V_hat(p) dp = d^{-1} int V_hat = (2 pi)^{d/2} V(0) / d.

    The coordinate l only fixes the direction; by symmetry the value is the same for all l.
    """
    if not 0 <= l < V.d:
        raise ConfigError("direction out of range", {"l": l, "d": V.d})
    quad = quad or RadialQuadrature(d=V.d, r_max=12.0 / V.width)
    return quad.sphere_area * _radial_integral(V, V.d - 1, quad) / V.d


def continuum_covariance(V: Potential, r: float, quad: Optional[RadialQuadrature] = None) -> float:
    """
    C(x) = (2 pi)^{-d/2} int e^{-ipx} |p|^{-2} V_hat(p) dp at |x| = r.

    The angular integral reduces to a Bessel function J_{d/2-1}; C(0) = 1/2 for
    d = 3 and V = exp(-|x|^2).
    """
    _require_rho(V.d)
    quad = quad or RadialQuadrature(d=V.d, nodes_count=800, r_max=12.0 / V.width)
    k, w = quad.rule()
    nu = V.d / 2.0 - 1.0
    integrand = k ** (V.d - 3) * potential_hat_radial(V, k)
    if r == 0.0:
        angular = np.full_like(k, 2.0 ** (-nu) / special.gamma(nu + 1.0))
    else:
        angular = (k * r) ** (-nu) * special.jv(nu, k * r)
    return float(np.sum(w * integrand * angular))


def box_momenta(d: int, L_box: float, M: int) -> np.ndarray:
    """Momenta 2 pi k / L_box on an M^d FFT grid, shape (M,)*d + (d,)."""
    k = np.fft.fftfreq(M, d=1.0 / M)
    axes = np.meshgrid(*([2.0 * np.pi * k / L_box] * d), indexing="ij")
    return np.stack(axes, axis=-1)


def continuum_spectral_density(V: Potential, p: np.ndarray) -> np.ndarray:
    """C_hat(p) = |p|^{-2} V_hat(p), set to 0 at p = 0."""
    p2 = np.sum(p * p, axis=-1)
    out = np.zeros_like(p2)
    nonzero = p2 > 0
    out[nonzero] = potential_hat_radial(V, np.sqrt(p2[nonzero])) / p2[nonzero]
    return out


def continuum_box_covariance(V: Potential, L_box: float, M: int, x: Sequence[float]) -> float:
    """Exact box covariance (2 pi)^{-d/2} (2 pi / L)^d sum_{p != 0} C_hat(p) cos(p x)."""
    _require_rho(V.d)
    p = box_momenta(V.d, L_box, M)
    C_hat = continuum_spectral_density(V, p)
    phase = np.cos(p @ np.asarray(x, dtype=float))
    return float((2.0 * np.pi) ** (-V.d / 2.0) * (2.0 * np.pi / L_box) ** V.d * np.sum(C_hat * phase))


def continuum_box_variance(V: Potential, L_box: float, M: int) -> float:
    """Exact variance of the box field; tends to C(0) as the box grows."""
    return continuum_box_covariance(V, L_box, M, [0.0] * V.d)


# === Variational bound for the lattice compensator ===

def tsaw_variational_bound(
    gamma: float,
    d: int = 3,
    l: int = 0,
    stiffness: float = 2.0,
    ladder: Optional[Sequence[int]] = None,
) -> float:
    """
    2 (phi_l, (-gamma Delta)^{-1} phi_l) for phi_l = eta(-e_l) - eta(e_l).

    phi_l has Fourier kernel -2i sin p_l and the environment covariance is
    1 / (2 stiffness D); since S >= -gamma Delta this bounds 2 (phi, S^{-1} phi).
    """
    _require_transient(d)
    quad = TorusQuadrature(d=d, ladder=list(ladder or settings.quad_ladder))

    def integrand(p):
        D = lattice_symbol(p)
        return 2.0 * np.sin(p[..., l]) ** 2 / (stiffness * gamma * D * D)

    return richardson(quad.ladder_means(integrand))


# === Covariance bounds ===

def covariance_bound_evaluator(n: int, m: int, c: float, Z_half_c: float) -> float:
    """(Z(c/2))^2 n! m! (2/c)^{(n+m)/2}."""
    return Z_half_c ** 2 * factorial(n) * factorial(m) * (2.0 / c) ** ((n + m) / 2.0)


def entire_bound(rf: RateFunction, Z_half_c: float) -> float:
    """4 (Z(c/2))^2 (sum_n |r^(n)(0)| (2/c)^{n/2})^2; inf when the series diverges."""
    total, _ = entire_series(rf)
    if total is None:
        logger.warning("entire bound: series diverges")
        return float("inf")
    return 4.0 * Z_half_c ** 2 * total ** 2


def moment_bound(j: int, c: float, Z_half_c: float) -> float:
    """m_j <= Z(c/2) 2^{j/2} floor(j/2)! / c^{j/2}."""
    return Z_half_c * 2.0 ** (j / 2.0) * factorial(j // 2) / c ** (j / 2.0)


def covariance_recursion_bound(n: int, c: float, d: int, Z_half_c: float) -> float:
    """
    Induction bound for sup |C_nn|:
    sum_{k=1}^n (n!)^2 / ((n-k)!)^2 m_{n-k}^2 / (c^k d^{k-1}).
    """
    total = 0.0
    for k in range(1, n + 1):
        ratio = factorial(n) / factorial(n - k)
        total += ratio ** 2 * moment_bound(n - k, c, Z_half_c) ** 2 / (c ** k * d ** (k - 1))
    return total


def covariance_bound_from_derivative(c: float, d: int, sup_C_prime: float, m_prime: float) -> float:
    """(c d)^{-1} sup |C'| + c^{-1} (m')^2."""
    return sup_C_prime / (c * d) + m_prime ** 2 / c


# === Z(lambda) ===

def z_lambda(fields: Sequence[FieldSample], lam: float) -> Estimate:
    """
    Monte Carlo estimate of Z(lambda) = E exp(lambda (omega(0) - omega(e))^2).

    Each replica contributes its mean over sites and directions; the estimate
    is the mean over replicas with the replica standard error.
    """
    if not fields:
        raise EstimatorError("z_lambda needs at least one field")

    per_replica = []
    with np.errstate(over="raise"):
        for field in fields:
            terms = []
            for axis in range(field.d):
                diff = field.differences(axis)
                try:
                    terms.append(np.exp(lam * diff * diff))
                except FloatingPointError as exc:
                    raise EstimatorError("moment blow-up in Z(lambda)", {"lambda": lam}) from exc
            per_replica.append(float(np.mean(np.concatenate(terms))))

    values = np.asarray(per_replica)
    if not np.all(np.isfinite(values)):
        raise EstimatorError("moment blow-up in Z(lambda)", {"lambda": lam})
    n = len(values)
    stderr = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Estimate(value=float(np.mean(values)), stderr=stderr, n_eff=n, n=n, method="replica_mean")


def z_bound(lam: float, c: float, beta: float) -> float:
    """(1 - lambda / c)^{-beta}; infinite for lambda >= c."""
    if lam >= c:
        return float("inf")
    return (1.0 - lam / c) ** (-beta)


def spectral_table(d: int = 3, ladder: Optional[Sequence[int]] = None,
                   points: Optional[Sequence[Sequence[int]]] = None,
                   V: Optional[Potential] = None) -> Dict[str, object]:
    """JSON-ready table of the named constants with grid metadata."""
    ladder = list(ladder or settings.quad_ladder)
    points = points or [[0] * d, [1] + [0] * (d - 1)]
    green = {}
    for x in points:
        result = lattice_green_ladder(x, ladder)
        green[",".join(str(v) for v in x)] = {
            "extrapolated": result["extrapolated"],
            "ladder_values": result["values"],
        }

    table: Dict[str, object] = {
        "d": d,
        "ladder": ladder,
        "green": green,
        "C0": green[",".join("0" for _ in range(d))]["extrapolated"],
        "C0_minus_Ce": lattice_green_difference(d, ladder[0]),
        "gamma_kernel_average": gamma_kernel_average(d, ladder[0]),
        "gamma_kernel_sup": gamma_kernel_sup(d, min(ladder[0], 64)),
        "infrared": infrared_integral(1.0, d, ladder),
    }
    if V is not None:
        table["rho_squared"] = rho_squared(V)
        table["variational_bound_continuum"] = variational_bound_continuum(V)
        table["continuum_C0"] = continuum_covariance(V, 0.0)
    return table
