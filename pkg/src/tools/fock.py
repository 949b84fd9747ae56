"""
Truncated graded Fock space over a finite momentum grid.

Degree-n vectors are symmetric functions of n momenta and are stored once
per multiset of grid modes, indexed by the colex rank of the sorted mode
tuple. The inner product sums over ordered tuples, so a multiset M of size n
with multiplicities k_q carries the weight W(M) = n! / prod(k_q!) prod(w_q).

Two operator families are assembled on top:

- lattice (Gaussian true self-avoiding walk): G = gamma Delta - S_1 + A_- - A_+
  with S_1 = 1/2 sum_e nabla_{-e} s(a*_e + a_e) nabla_e
- continuum (self-repelling Brownian polymer): G = 1/2 Delta + A_+ - A_-
  with A_+ = sum_l a*_l nabla_l

Creations out of the top degree are dropped; everything is exact on the
truncated space.
"""

from itertools import combinations_with_replacement, permutations
from math import comb, factorial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from ..schemas.model import Potential, RateFunction
from ..utils.config import settings
from ..utils.errors import ConfigError, KrylovConvergenceError, PowerIterationError, RateFunctionError
from ..utils.logger import get_logger
from .model_core import gaussian_mean_s
from .spectral import box_momenta, continuum_spectral_density, lattice_symbol
from .stats import exponent_fit

logger = get_logger(__name__)

# One complex array per degree 0..n_max, indexed by multiset rank.
GradedVector = List[np.ndarray]
# (axis l, sign); the lattice uses both signs, the continuum only +1.
Direction = Tuple[int, int]

KERNEL_TOL = 1e-12


# === Momentum grid ===

class MomentumGrid:
    """
    Nonzero momenta of the one-particle space and their weights.

    Lattice: p = 2 pi k / L_f with k in {0..L_f-1}^d, weight C_hat(p) / L_f^d
    and C_hat = 1 / (2 kappa D(p)). Continuum: box momenta 2 pi k / L_box,
    weight (2 pi)^{-d/2} C_hat(p) (2 pi / L_box)^d with C_hat = |p|^{-2} V_hat(p),
    matching the covariance of the continuum field sampler.
    """

    def __init__(
        self,
        d: int,
        L_f: int,
        variant: str,
        momenta: np.ndarray,
        weights: np.ndarray,
        stiffness: Optional[float] = None,
        box: Optional[float] = None,
    ):
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
            raise ConfigError("momentum weights must be positive and finite", {"variant": variant})
        self.d = d
        self.L_f = L_f
        self.variant = variant
        self.momenta = momenta
        self.weights = weights
        self.stiffness = stiffness
        self.box = box

    @classmethod
    def lattice(cls, d: int, L_f: int, stiffness: float = 2.0) -> "MomentumGrid":
        k = np.stack(np.meshgrid(*([np.arange(L_f)] * d), indexing="ij"), axis=-1).reshape(-1, d)
        k = k[np.any(k != 0, axis=1)]
        p = 2.0 * np.pi * k / L_f
        weights = 1.0 / (2.0 * stiffness * lattice_symbol(p)) / L_f ** d
        return cls(d, L_f, "lattice", p, weights, stiffness=stiffness)

    @classmethod
    def continuum(cls, V: Potential, L_f: int, box: Optional[float] = None) -> "MomentumGrid":
        d = V.d
        box = float(box or L_f)
        p = box_momenta(d, box, L_f).reshape(-1, d)
        p = p[np.any(p != 0.0, axis=1)]
        weights = (2.0 * np.pi) ** (-d / 2.0) * continuum_spectral_density(V, p) * (2.0 * np.pi / box) ** d
        return cls(d, L_f, "continuum", p, weights, box=box)

    @property
    def size(self) -> int:
        return len(self.weights)


# === Graded space ===

class _Links:
    """Parent/child pairs between degrees m and m - 1: child = parent minus one copy of `mode`."""

    def __init__(self, parent: np.ndarray, child: np.ndarray, mode: np.ndarray, mult: np.ndarray):
        self.parent = parent
        self.child = child
        self.mode = mode
        self.mult = mult


def _scatter(index: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    out = np.bincount(index, weights=values.real, minlength=size).astype(complex)
    out += 1j * np.bincount(index, weights=values.imag, minlength=size)
    return out


class FockSpace:
    """Symmetric tensors of degree 0..n_max over a momentum grid."""

    def __init__(self, grid: MomentumGrid, n_max: int):
        if n_max < 1:
            raise ConfigError("degree cap must be at least 1", {"n_max": n_max})
        self.grid = grid
        self.n_max = n_max
        K = grid.size
        self._binom = np.array(
            [[comb(a, b) for b in range(n_max + 2)] for a in range(K + n_max + 1)], dtype=np.int64
        )

        self.states: List[np.ndarray] = []
        self.totals: List[np.ndarray] = []
        self.weights: List[np.ndarray] = []
        self.links: List[Optional[_Links]] = [None]
        for n in range(n_max + 1):
            self._build_degree(n)

        self.dims = [len(w) for w in self.weights]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self._sqrt_w = np.sqrt(np.concatenate(self.weights))
        logger.debug(f"Fock space built: K={K} n_max={n_max} dims={self.dims}")

    def rank(self, states: np.ndarray) -> np.ndarray:
        """Colex rank sum_i C(c_i + i, i + 1) of sorted rows."""
        states = np.asarray(states, dtype=np.int64)
        n = states.shape[1]
        if n == 0:
            return np.zeros(len(states), dtype=np.int64)
        i = np.arange(n)
        return np.sum(self._binom[states + i, i + 1], axis=1)

    def _build_degree(self, n: int) -> None:
        K = self.grid.size
        if n == 0:
            rows = np.zeros((1, 0), dtype=np.int64)
        else:
            rows = np.array(list(combinations_with_replacement(range(K), n)), dtype=np.int64)
            rows = rows[np.argsort(self.rank(rows))]
        N = len(rows)

        run = np.ones_like(rows)
        for j in range(1, n):
            run[:, j] = np.where(rows[:, j] == rows[:, j - 1], run[:, j - 1] + 1, 1)
        multinomial = factorial(n) / np.prod(run, axis=1).astype(float) if n else np.ones(1)
        weight = multinomial * np.prod(self.grid.weights[rows], axis=1)
        total = np.sum(self.grid.momenta[rows], axis=1) if n else np.zeros((1, self.grid.d))

        self.states.append(rows)
        self.weights.append(weight)
        self.totals.append(total)
        if n == 0:
            return

        parents, children, modes, mults = [], [], [], []
        for j in range(n):
            last = np.ones(N, dtype=bool) if j == n - 1 else rows[:, j] != rows[:, j + 1]
            idx = np.nonzero(last)[0]
            parents.append(idx)
            children.append(self.rank(np.delete(rows[idx], j, axis=1)))
            modes.append(rows[idx, j])
            mults.append(run[idx, j])
        self.links.append(_Links(
            np.concatenate(parents), np.concatenate(children), np.concatenate(modes), np.concatenate(mults).astype(float)
        ))

    # --- vectors ---

    def zeros(self) -> GradedVector:
        return [np.zeros(n, dtype=complex) for n in self.dims]

    def vacuum(self) -> GradedVector:
        v = self.zeros()
        v[0][0] = 1.0
        return v

    def random(self, rng: np.random.Generator, degrees: Optional[Sequence[int]] = None) -> GradedVector:
        """Complex Gaussian vector, white in orthonormal coordinates, on the given degrees."""
        degrees = range(self.n_max + 1) if degrees is None else degrees
        v = self.zeros()
        for n in degrees:
            z = rng.standard_normal(self.dims[n]) + 1j * rng.standard_normal(self.dims[n])
            v[n] = z / np.sqrt(self.weights[n])
        return v

    def project(self, v: GradedVector, n: int) -> GradedVector:
        out = self.zeros()
        out[n] = v[n].copy()
        return out

    def inner(self, u: GradedVector, v: GradedVector) -> complex:
        return complex(sum(np.sum(w * np.conj(a) * b) for w, a, b in zip(self.weights, u, v)))

    def norm(self, v: GradedVector) -> float:
        return float(np.sqrt(max(self.inner(v, v).real, 0.0)))

    def flatten(self, v: GradedVector, orthonormal: bool = False) -> np.ndarray:
        flat = np.concatenate(v)
        return flat * self._sqrt_w if orthonormal else flat

    def unflatten(self, flat: np.ndarray, orthonormal: bool = False) -> GradedVector:
        flat = flat / self._sqrt_w if orthonormal else flat
        return [flat[self.offsets[n]:self.offsets[n + 1]].astype(complex) for n in range(self.n_max + 1)]

    # --- tensor form ---

    def to_tensor(self, component: np.ndarray, n: int) -> np.ndarray:
        """Full symmetric tensor of shape (K,)*n from a degree-n component."""
        K = self.grid.size
        if n == 0:
            return np.asarray(component[0])
        grid = np.stack(np.meshgrid(*([np.arange(K)] * n), indexing="ij"), axis=-1).reshape(-1, n)
        return component[self.rank(np.sort(grid, axis=1))].reshape((K,) * n)

    def symmetrize(self, tensor: np.ndarray, n: int) -> np.ndarray:
        """Average a tensor over permutations of its slots; returns the degree-n component."""
        if n == 0:
            return np.atleast_1d(np.asarray(tensor, dtype=complex))
        sym = np.mean([np.transpose(tensor, perm) for perm in permutations(range(n))], axis=0)
        return sym[tuple(self.states[n].T)].astype(complex)


def _combine(*terms: Tuple[float, GradedVector]) -> GradedVector:
    out = [np.zeros_like(c) for c in terms[0][1]]
    for coeff, v in terms:
        for n, c in enumerate(v):
            out[n] += coeff * c
    return out


def wick_coefficients(m: int) -> List[Tuple[int, int]]:
    """Pairs (j, m! / (2^j j! (m - 2j)!)) with x^m = sum_j c_j sigma^{2j} :x^{m-2j}:."""
    return [(j, factorial(m) // (2 ** j * factorial(j) * factorial(m - 2 * j))) for j in range(m // 2 + 1)]


# === Operator assembly ===

class GeneratorAssembly:
    """Operator appliers of the environment generator on a truncated Fock space."""

    def __init__(self, space: FockSpace, gamma: float = 0.5, s_coeffs: Sequence[float] = ()):
        self.space = space
        self.gamma = gamma
        self.s_coeffs = [float(a) for a in s_coeffs]
        self.lattice = space.grid.variant == "lattice"
        d = space.grid.d
        if self.lattice:
            self.directions: List[Direction] = [(l, sign) for l in range(d) for sign in (1, -1)]
        else:
            self.directions = [(l, 1) for l in range(d)]

    @property
    def d(self) -> int:
        return self.space.grid.d

    @property
    def n_max(self) -> int:
        return self.space.n_max

    @property
    def diffusion_scale(self) -> float:
        """D = scale |Delta| is the diagonal of the sector condition."""
        return self.gamma if self.lattice else 0.5

    def with_degree_cap(self, n_max: int) -> "GeneratorAssembly":
        return GeneratorAssembly(FockSpace(self.space.grid, n_max), self.gamma, self.s_coeffs)

    # --- symbols ---

    def nabla_symbol(self, e: Direction, P: np.ndarray) -> np.ndarray:
        l, sign = e
        if self.lattice:
            return np.exp(1j * sign * P[..., l]) - 1.0
        return 1j * P[..., l]

    def delta_symbol(self, P: np.ndarray) -> np.ndarray:
        if self.lattice:
            return -2.0 * lattice_symbol(P)
        return -np.sum(P * P, axis=-1)

    def kernel(self, e: Direction) -> np.ndarray:
        """One-particle kernel f_e of a*_e."""
        return self.nabla_symbol(e, self.space.grid.momenta)

    def sigma2(self, e: Direction) -> float:
        """||f_e||^2, the variance of a*_e + a_e on the vacuum."""
        return float(np.sum(self.space.grid.weights * np.abs(self.kernel(e)) ** 2))

    def _halfinv_symbol(self, P: np.ndarray, scale: float = 1.0) -> np.ndarray:
        mag = scale * np.abs(self.delta_symbol(P))
        out = np.zeros_like(mag)
        keep = mag > KERNEL_TOL
        out[keep] = 1.0 / np.sqrt(mag[keep])
        return out

    def _diagonal(self, v: GradedVector, symbol: Callable[[np.ndarray], np.ndarray]) -> GradedVector:
        return [symbol(P) * c for P, c in zip(self.space.totals, v)]

    # --- degree-preserving ---

    def nabla(self, e: Direction, v: GradedVector) -> GradedVector:
        return self._diagonal(v, lambda P: self.nabla_symbol(e, P))

    def delta(self, v: GradedVector) -> GradedVector:
        return self._diagonal(v, self.delta_symbol)

    def halfinv(self, v: GradedVector) -> GradedVector:
        """|Delta|^{-1/2}, zero on the kernel of Delta."""
        return self._diagonal(v, self._halfinv_symbol)

    def halfinv_nabla(self, e: Direction, v: GradedVector) -> GradedVector:
        return self.halfinv(self.nabla(e, v))

    def d_inv_half(self, v: GradedVector) -> GradedVector:
        """D^{-1/2} with D = diffusion_scale |Delta|."""
        return self._diagonal(v, lambda P: self._halfinv_symbol(P, self.diffusion_scale))

    def parity(self, v: GradedVector) -> GradedVector:
        """J: multiplication by (-1)^n on degree n."""
        return [(-1.0) ** n * c for n, c in enumerate(v)]

    # --- ladder ---

    def creation(self, e: Direction, v: GradedVector) -> GradedVector:
        """a*_e; the part that would leave degree n_max is dropped."""
        space = self.space
        f = self.kernel(e)
        out = space.zeros()
        for m in range(1, space.n_max + 1):
            link = space.links[m]
            values = link.mult * f[link.mode] * v[m - 1][link.child]
            out[m] = _scatter(link.parent, values, space.dims[m]) / np.sqrt(m)
        return out

    def annihilation(self, e: Direction, v: GradedVector) -> GradedVector:
        """a_e, the adjoint of a*_e in the weighted inner product."""
        space = self.space
        fw = np.conj(self.kernel(e)) * space.grid.weights
        out = space.zeros()
        for m in range(1, space.n_max + 1):
            link = space.links[m]
            values = fw[link.mode] * v[m][link.parent]
            out[m - 1] = np.sqrt(m) * _scatter(link.child, values, space.dims[m - 1])
        return out

    def truncation_flux_bound(self, e: Direction, v: GradedVector) -> float:
        """Upper bound sqrt(n_max + 1) ||f_e|| ||v_{n_max}|| on the dropped creation flux."""
        top = self.space.project(v, self.n_max)
        return float(np.sqrt((self.n_max + 1) * self.sigma2(e)) * self.space.norm(top))

    def normal_power(self, e: Direction, r: int, v: GradedVector) -> GradedVector:
        """:(a*_e + a_e)^r: = sum_i C(r, i) (a*_e)^i a_e^{r-i}."""
        lowered = [v]
        for _ in range(r):
            lowered.append(self.annihilation(e, lowered[-1]))
        terms = []
        for i in range(r + 1):
            x = lowered[r - i]
            for _ in range(i):
                x = self.creation(e, x)
            terms.append((float(comb(r, i)), x))
        return _combine(*terms)

    def s_of_n(self, e: Direction, v: GradedVector) -> GradedVector:
        """s(a*_e + a_e) in normal-ordered form."""
        sigma2 = self.sigma2(e)
        by_power: Dict[int, float] = {}
        for k, a in enumerate(self.s_coeffs):
            if a == 0.0:
                continue
            for j, c in wick_coefficients(2 * k):
                r = 2 * k - 2 * j
                by_power[r] = by_power.get(r, 0.0) + a * c * sigma2 ** j
        if not by_power:
            return self.space.zeros()
        return _combine(*[(coeff, self.normal_power(e, r, v)) for r, coeff in sorted(by_power.items())])

    # --- generator parts ---

    def S1(self, v: GradedVector) -> GradedVector:
        if not self.lattice or not any(self.s_coeffs):
            return self.space.zeros()
        terms = []
        for e in self.directions:
            back = (e[0], -e[1])
            terms.append((0.5, self.nabla(back, self.s_of_n(e, self.nabla(e, v)))))
        return _combine(*terms)

    def S(self, v: GradedVector) -> GradedVector:
        if self.lattice:
            return _combine((-self.gamma, self.delta(v)), (1.0, self.S1(v)))
        return _combine((-0.5, self.delta(v)))

    def A_plus(self, v: GradedVector) -> GradedVector:
        return _combine(*[(1.0, self.creation(e, self.nabla(e, v))) for e in self.directions])

    def A_minus(self, v: GradedVector) -> GradedVector:
        """The adjoint of A_plus."""
        if self.lattice:
            return _combine(*[(1.0, self.nabla((e[0], -e[1]), self.annihilation(e, v))) for e in self.directions])
        return _combine(*[(-1.0, self.nabla(e, self.annihilation(e, v))) for e in self.directions])

    def A(self, v: GradedVector) -> GradedVector:
        if self.lattice:
            return _combine((1.0, self.A_minus(v)), (-1.0, self.A_plus(v)))
        return _combine((1.0, self.A_plus(v)), (-1.0, self.A_minus(v)))

    def G(self, v: GradedVector) -> GradedVector:
        return _combine((-1.0, self.S(v)), (1.0, self.A(v)))

    def G_adj(self, v: GradedVector) -> GradedVector:
        return _combine((-1.0, self.S(v)), (-1.0, self.A(v)))


def assemble_generator(
    gamma: float,
    s_poly: Sequence[float],
    grid: MomentumGrid,
    n_max: int,
) -> GeneratorAssembly:
    """
    Lattice generator for w = gamma + s(u) + u, s given by its power series.

    Raises:
        RateFunctionError: s has an odd power
    """
    odd = [k for k, a in enumerate(s_poly) if k % 2 == 1 and a != 0.0]
    if odd:
        raise RateFunctionError("s must be even", {"odd_powers": odd})
    if grid.variant != "lattice":
        raise ConfigError("the walk generator needs a lattice grid")
    s_coeffs = [float(a) for a in list(s_poly)[0::2]]
    return GeneratorAssembly(FockSpace(grid, n_max), gamma, s_coeffs)


def assembly_from_rate(rf: RateFunction, grid: MomentumGrid, n_max: int) -> GeneratorAssembly:
    if not rf.is_gaussian:
        raise RateFunctionError("the Fock calculus covers r(u) = u only")
    return assemble_generator(rf.gamma, rf.s_polynomial.coef, grid, n_max)


def assemble_polymer(V: Potential, L_f: int, n_max: int, box: Optional[float] = None) -> GeneratorAssembly:
    """Polymer generator 1/2 Delta + sum_l (a*_l nabla_l + nabla_l a_l) on a box grid."""
    return GeneratorAssembly(FockSpace(MomentumGrid.continuum(V, L_f, box), n_max))


# === Checks ===

def adjoint_residual(
    space: FockSpace,
    X: Callable[[GradedVector], GradedVector],
    Y: Callable[[GradedVector], GradedVector],
    rng: np.random.Generator,
    trials: int = 10,
    sign: float = 1.0,
) -> float:
    """max |(u, X v) - sign (Y u, v)| over random unit pairs."""
    worst = 0.0
    for _ in range(trials):
        u = space.random(rng)
        v = space.random(rng)
        u = [c / space.norm(u) for c in u]
        v = [c / space.norm(v) for c in v]
        gap = abs(space.inner(u, X(v)) - sign * space.inner(Y(u), v))
        worst = max(worst, gap)
    return worst


def structure_checks(assembly: GeneratorAssembly, seed: int = 0, trials: int = 10) -> Dict[str, float]:
    """Adjointness, symmetry and stationarity residuals on random vectors."""
    space = assembly.space
    rng = np.random.default_rng(seed)
    e = assembly.directions[0]
    vac = space.vacuum()

    def parity_gap(op, sign):
        worst = 0.0
        for _ in range(trials):
            v = space.random(rng)
            lhs = assembly.parity(op(assembly.parity(v)))
            rhs = op(v)
            worst = max(worst, space.norm(_combine((1.0, lhs), (-sign, rhs))) / max(space.norm(rhs), 1.0))
        return worst

    checks = {
        "creation_adjoint": adjoint_residual(space, lambda v: assembly.annihilation(e, v),
                                             lambda u: assembly.creation(e, u), rng, trials),
        "S_self_adjoint": adjoint_residual(space, assembly.S, assembly.S, rng, trials),
        "A_skew": adjoint_residual(space, assembly.A, assembly.A, rng, trials, sign=-1.0),
        "A_plus_adjoint": adjoint_residual(space, assembly.A_minus, assembly.A_plus, rng, trials),
        "JSJ": parity_gap(assembly.S, 1.0),
        "JAJ": parity_gap(assembly.A, -1.0),
        "G_vacuum": space.norm(assembly.G(vac)),
        "G_adj_vacuum": space.norm(assembly.G_adj(vac)),
    }
    return {k: float(v) for k, v in checks.items()}


def halfinv_nabla_sup(assembly: GeneratorAssembly, e: Direction) -> float:
    """Grid maximum of the |Delta|^{-1/2} nabla_e multiplier over all degrees."""
    best = 0.0
    for P in assembly.space.totals[1:]:
        mult = np.abs(assembly.nabla_symbol(e, P)) * assembly._halfinv_symbol(P)
        best = max(best, float(np.max(mult)))
    return best


def kernel_report(assembly: GeneratorAssembly) -> Dict[str, List[int]]:
    """States per degree on which Delta vanishes (dropped from |Delta|^{-1/2})."""
    counts = [int(np.sum(np.abs(assembly.delta_symbol(P)) <= KERNEL_TOL)) for P in assembly.space.totals]
    return {"kernel_states": counts, "dims": list(assembly.space.dims)}


# === Compensators ===

def compensator_tilde(assembly: GeneratorAssembly, l: int) -> GradedVector:
    """eta(-e_l) - eta(e_l): degree-1 kernel -2i sin p_l."""
    if not assembly.lattice:
        raise ConfigError("lattice compensators need a lattice grid")
    sines = np.sin(assembly.space.totals[1][:, l])
    if np.all(np.abs(sines) < KERNEL_TOL):
        raise ConfigError(
            "sin p_l vanishes on every grid momentum; use L_f >= 3",
            {"L_f": assembly.space.grid.L_f, "direction": l},
        )
    v = assembly.space.zeros()
    v[1] = -2j * sines
    return v


def compensator_bar(assembly: GeneratorAssembly, l: int) -> GradedVector:
    """nabla_l s(eta(0) - eta(-e_l)) = s(N_{e_l}) 1 - s(N_{-e_l}) 1, even degrees."""
    if not assembly.lattice:
        raise ConfigError("lattice compensators need a lattice grid")
    vac = assembly.space.vacuum()
    return _combine((1.0, assembly.s_of_n((l, 1), vac)), (-1.0, assembly.s_of_n((l, -1), vac)))


def compensator(assembly: GeneratorAssembly, l: int) -> GradedVector:
    return _combine((1.0, compensator_bar(assembly, l)), (1.0, compensator_tilde(assembly, l)))


# === Resolvent ===

def _gmres_solve(
    assembly: GeneratorAssembly,
    f: GradedVector,
    lam: float,
    maxiter: int,
    restart: int,
    rtol: float,
) -> GradedVector:
    space = assembly.space
    b = space.flatten(f, orthonormal=True)
    if not np.any(b):
        return space.zeros()
    size = len(b)

    def matvec(x):
        u = space.unflatten(x, orthonormal=True)
        return space.flatten(_combine((lam, u), (-1.0, assembly.G(u))), orthonormal=True)

    diag = lam + assembly.diffusion_scale * np.abs(np.concatenate([assembly.delta_symbol(P) for P in space.totals]))
    operator = LinearOperator((size, size), matvec=matvec, dtype=complex)
    preconditioner = LinearOperator((size, size), matvec=lambda x: x / diag, dtype=complex)

    x, info = gmres(operator, b, rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter, M=preconditioner)
    residual = float(np.linalg.norm(matvec(x) - b) / np.linalg.norm(b))
    if info != 0 or residual > 1e-6:
        raise KrylovConvergenceError(
            "GMRES did not converge",
            {"lambda": lam, "info": int(info), "residual": residual, "maxiter": maxiter},
        )
    return space.unflatten(x, orthonormal=True)


def solve_resolvent(assembly: GeneratorAssembly, f: GradedVector, lam: float) -> GradedVector:
    """u = (lam - G)^{-1} f, retried with larger Krylov budgets."""
    if lam <= 0.0:
        raise ConfigError("resolvent parameter must be positive", {"lambda": lam})

    size = int(assembly.space.offsets[-1])
    for attempt in Retrying(
        stop=stop_after_attempt(settings.krylov_retries),
        retry=retry_if_exception_type(KrylovConvergenceError),
        reraise=True,
    ):
        with attempt:
            scale = 2 ** (attempt.retry_state.attempt_number - 1)
            u = _gmres_solve(
                assembly, f, lam,
                maxiter=settings.krylov_maxiter * scale,
                restart=min(size, 40 * scale),
                rtol=settings.krylov_rtol,
            )
    return u


def extrapolate_linear(lambdas: Sequence[float], values: Sequence[float]) -> float:
    """Value at lam = 0 of the line through the last two points."""
    if len(values) == 1:
        return float(values[0])
    (l1, v1), (l2, v2) = zip(lambdas[-2:], values[-2:])
    return float((l1 * v2 - l2 * v1) / (l1 - l2))


def _check_schedule(lambda_schedule: Sequence[float]) -> List[float]:
    lams = [float(x) for x in lambda_schedule]
    if not lams or any(x <= 0 for x in lams) or any(a <= b for a, b in zip(lams, lams[1:])):
        raise ConfigError("lambda schedule must be positive and strictly decreasing", {"schedule": lams})
    return lams


def _relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def resolvent_sigma2(
    assembly: GeneratorAssembly,
    f: GradedVector,
    lambda_schedule: Sequence[float],
) -> Dict[str, object]:
    """
    Resolvent sequence u_lam = (lam - G)^{-1} f along a decreasing schedule.

    Reports lam ||u_lam||^2 (should decrease to 0), 2 Re (u_lam, f), the
    cross terms (lam + lam') Re (u_lam, u_lam') of consecutive pairs, and the
    extrapolation of 2 (u_lam, f) to lam = 0.
    """
    lams = _check_schedule(lambda_schedule)
    space = assembly.space
    us = [solve_resolvent(assembly, f, lam) for lam in lams]

    lam_norm_sq = [lam * space.norm(u) ** 2 for lam, u in zip(lams, us)]
    two_uf = [2.0 * space.inner(u, f).real for u in us]
    cross = [
        (l1 + l2) * space.inner(u1, u2).real
        for (l1, u1), (l2, u2) in zip(zip(lams, us), zip(lams[1:], us[1:]))
    ]
    return {
        "lambdas": lams,
        "lam_norm_sq": lam_norm_sq,
        "two_uf": two_uf,
        "cross": cross,
        "extrapolated": extrapolate_linear(lams, two_uf),
        "cauchy_gap": _relative_gap(two_uf[-1], two_uf[-2]) if len(two_uf) > 1 else 0.0,
        "decreasing": all(a > b for a, b in zip(lam_norm_sq, lam_norm_sq[1:])),
    }


def quadratic_variation_rate(assembly: GeneratorAssembly, l: int) -> float:
    """2 gamma + 2 E s(eta(e_l) - eta(0)) from the Gaussian moments of the grid."""
    rf = RateFunction(gamma=assembly.gamma, s_coeffs=assembly.s_coeffs)
    return 2.0 * assembly.gamma + 2.0 * gaussian_mean_s(rf, assembly.sigma2((l, 1)))


def _kv_correction(assembly: GeneratorAssembly, l: int, lams: List[float]) -> Tuple[List[float], float]:
    bar = compensator_bar(assembly, l)
    phi = _combine((1.0, bar), (1.0, compensator_tilde(assembly, l)))
    space = assembly.space
    terms = []
    for lam in lams:
        u = solve_resolvent(assembly, phi, lam)
        terms.append(2.0 * space.inner(u, phi).real - 4.0 * space.inner(u, bar).real)
    return terms, extrapolate_linear(lams, terms)


def kv_total_variance(
    assembly: GeneratorAssembly,
    l: int = 0,
    lambda_schedule: Sequence[float] = (1.0, 0.3, 0.1, 0.03, 0.01),
    qv_rate: Optional[float] = None,
    truncation_check: bool = True,
    qv_stderr: float = 0.0,
) -> Dict[str, object]:
    """
    Total asymptotic variance sigma^2_ll = QV + 2 (u, phi) - 4 (u, phi_bar).

    u = (lam - G)^{-1} phi with phi = phi_bar + phi_tilde, extrapolated to
    lam = 0. QV is the jump quadratic-variation rate: the Gaussian value
    unless a measured `qv_rate` (with its `qv_stderr`) is passed; the
    reported sigma2_stderr carries only that measurement error. With
    `truncation_check` the correction is recomputed at n_max + 1 and flagged
    when it moves by more than 5%.
    """
    if not assembly.lattice:
        raise ConfigError("the variance decomposition is for the lattice walk")
    lams = _check_schedule(lambda_schedule)

    terms, correction = _kv_correction(assembly, l, lams)
    tilde = resolvent_sigma2(assembly, compensator_tilde(assembly, l), lams)
    qv_exact = quadratic_variation_rate(assembly, l)
    qv = qv_exact if qv_rate is None else float(qv_rate)

    result: Dict[str, object] = {
        "direction": l,
        "n_max": assembly.n_max,
        "qv_rate": qv,
        "qv_gaussian": qv_exact,
        "correction_terms": terms,
        "correction": correction,
        "sigma2": qv + correction,
        "sigma2_stderr": 0.0 if qv_rate is None else float(qv_stderr),
        "tilde_resolvent": tilde,
        "truncation_flux_bound": assembly.truncation_flux_bound((l, 1), compensator(assembly, l)),
    }

    if truncation_check:
        bigger = assembly.with_degree_cap(assembly.n_max + 1)
        _, correction_up = _kv_correction(bigger, l, lams)
        change = _relative_gap(correction, correction_up)
        result["correction_next_degree"] = correction_up
        result["truncation_change"] = change
        result["truncation_sensitive"] = change > 0.05
        if change > 0.05:
            logger.warning(f"KV correction moves {change:.1%} between n_max={assembly.n_max} and n_max+1")
    return result


def variance_crosscheck(kv: Dict[str, object], measured: Dict[str, float]) -> Dict[str, object]:
    """
    z-score of the decomposed sigma^2 against a Monte Carlo diffusivity.

    `measured` is an estimate dict (value, stderr) of the MSD slope along the
    same axis; the two are consistent when |z| <= 3.
    """
    scale = float(np.hypot(kv["sigma2_stderr"], measured["stderr"]))
    if scale == 0.0:
        raise ConfigError("the cross-check needs a nonzero standard error on either side")
    z = (kv["sigma2"] - measured["value"]) / scale
    return {
        "sigma2": kv["sigma2"],
        "measured": float(measured["value"]),
        "measured_stderr": float(measured["stderr"]),
        "z": float(z),
        "consistent": abs(z) <= 3.0,
    }


# === Norm scan ===

def power_norm(
    space: FockSpace,
    forward: Callable[[GradedVector], GradedVector],
    adjoint: Callable[[GradedVector], GradedVector],
    n_in: int,
    seed: int = 0,
    tol: float = 1e-12,
    max_iter: int = 2000,
) -> float:
    """
    Operator norm of a block starting at degree n_in by power iteration on X* X.

    `forward` and `adjoint` must already project onto their target degrees.
    """
    rng = np.random.default_rng(seed)
    v = space.project(space.random(rng, [n_in]), n_in)
    v = [c / space.norm(v) for c in v]
    previous = -1.0
    for _ in range(max_iter):
        z = adjoint(forward(v))
        estimate = float(np.sqrt(max(space.inner(v, z).real, 0.0)))
        size = space.norm(z)
        if size == 0.0:
            return 0.0
        v = [c / size for c in z]
        if abs(estimate - previous) <= tol * max(estimate, 1.0):
            return estimate
        previous = estimate
    raise PowerIterationError("power iteration did not settle", {"degree": n_in, "max_iter": max_iter})


def block_norm(
    space: FockSpace,
    forward: Callable[[GradedVector], GradedVector],
    adjoint: Callable[[GradedVector], GradedVector],
    n_in: int,
    n_out: int,
    seed: int = 0,
) -> float:
    """Norm of the degree n_in -> n_out block, retried with longer iteration budgets."""
    fwd = lambda v: space.project(forward(v), n_out)
    adj = lambda w: space.project(adjoint(w), n_in)
    for attempt in Retrying(
        stop=stop_after_attempt(settings.krylov_retries),
        retry=retry_if_exception_type(PowerIterationError),
        reraise=True,
    ):
        with attempt:
            budget = 2000 * 2 ** (attempt.retry_state.attempt_number - 1)
            value = power_norm(space, fwd, adj, n_in, seed=seed, max_iter=budget)
    return value


def _blocks(assembly: GeneratorAssembly, e: Direction) -> Dict[str, Tuple[int, Callable, Callable]]:
    a = assembly
    D = a.d_inv_half
    sandwich_S1 = lambda v: D(a.S1(D(v)))
    blocks = {
        "creation": (1, lambda v: a.creation(e, v), lambda w: a.annihilation(e, w)),
        "halfinv_creation": (1, lambda v: a.halfinv(a.creation(e, v)), lambda w: a.annihilation(e, a.halfinv(w))),
        "A_plus": (1, lambda v: D(a.A_plus(D(v))), lambda w: D(a.A_minus(D(w)))),
    }
    if a.lattice:
        for shift in (0, 2, 4):
            blocks[f"S1_shift{shift}"] = (shift, sandwich_S1, sandwich_S1)
    return blocks


ODD_BLOCKS = ("halfinv_creation", "A_plus")


def norm_growth_scan(
    assembly: GeneratorAssembly,
    degrees: Optional[Sequence[int]] = None,
    direction: Direction = (0, 1),
    seed: int = 0,
) -> Dict[str, object]:
    """
    Per-degree norms of the operator blocks that enter the sector condition.

    Blocks are a*_e, |Delta|^{-1/2} a*_e and the D^{-1/2} X D^{-1/2}
    sandwiches of A_+ and of the S_1 blocks n -> n + 2j. Growth exponents are
    fitted against log(n + 1) wherever three positive norms exist.
    """
    degrees = list(range(assembly.n_max)) if degrees is None else list(degrees)
    space = assembly.space
    table: Dict[str, Dict[str, object]] = {}

    for name, (shift, fwd, adj) in _blocks(assembly, direction).items():
        rows = []
        for n in degrees:
            if n + shift > assembly.n_max:
                continue
            try:
                value = block_norm(space, fwd, adj, n, n + shift, seed=seed)
                rows.append({"n": n, "norm": value})
            except PowerIterationError as exc:
                rows.append({"n": n, "norm": None, "error": exc.message})

        positive = [r for r in rows if r["norm"]]
        fit = None
        if len(positive) >= 3:
            fit = exponent_fit([r["n"] + 1 for r in positive], [r["norm"] for r in positive]).model_dump()
        table[name] = {
            "shift": shift,
            "rows": rows,
            "exponent": fit,
            "zero": all(r["norm"] == 0.0 for r in rows),
        }

    verdicts = {}
    for name, entry in table.items():
        if entry["exponent"] is None:
            continue
        limit = 0.5 if name in ODD_BLOCKS else 2.0
        verdicts[name] = entry["exponent"]["value"] <= limit + 0.2

    even_rows = [
        r for name, entry in table.items() if name.startswith("S1") for r in entry["rows"] if r["norm"]
    ]
    even_constant = max((r["norm"] / (r["n"] + 1) ** 2 for r in even_rows), default=0.0)
    return {
        "direction": list(direction),
        "degrees": degrees,
        "blocks": table,
        "verdicts": verdicts,
        "even_block_constant": even_constant,
        "one_particle_norm": float(np.sqrt(assembly.sigma2(direction))),
    }


def fock_summary(
    assembly: GeneratorAssembly,
    lambda_schedule: Sequence[float],
    l: int = 0,
    scan_degrees: Optional[Sequence[int]] = None,
    truncation_check: bool = True,
    qv_rate: Optional[float] = None,
    qv_stderr: float = 0.0,
    measured: Optional[Dict[str, float]] = None,
) -> Dict[str, object]:
    """
    Structure checks, norm scan and, on the lattice, the variance decomposition.

    A `measured` diffusivity estimate adds the Monte Carlo cross-check.
    """
    e = (l, 1)
    summary: Dict[str, object] = {
        "variant": assembly.space.grid.variant,
        "n_max": assembly.n_max,
        "dims": list(assembly.space.dims),
        "checks": structure_checks(assembly),
        "halfinv_nabla_sup": halfinv_nabla_sup(assembly, e),
        "kernel": kernel_report(assembly),
        "norm_scan": norm_growth_scan(assembly, scan_degrees, direction=e),
    }
    if assembly.lattice:
        kv = kv_total_variance(
            assembly, l, lambda_schedule, qv_rate=qv_rate, truncation_check=truncation_check, qv_stderr=qv_stderr
        )
        if measured is not None:
            kv["crosscheck"] = variance_crosscheck(kv, measured)
        summary["kv"] = kv
    return summary
