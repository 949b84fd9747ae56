"""
Samplers for the stationary environment measures.

Lattice fields are Gaussian free fields of stiffness kappa (precision
kappa (-Delta)) drawn by FFT synthesis, or gradient Gibbs fields reached
by single-site sweeps. Continuum fields have spectral density
|p|^{-2} V_hat(p) on a periodic box.
"""

from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..schemas.field import FieldSample, GibbsSpec
from ..schemas.model import Potential
from ..utils.errors import ConfigError, DimensionError
from ..utils.logger import get_logger
from .model_core import gibbs_potential
from .spectral import box_momenta, continuum_spectral_density, lattice_symbol

logger = get_logger(__name__)


def _require_massless(d: int) -> None:
    if d < 3:
        raise DimensionError("the massless free field exists only for d >= 3", {"d": d})


def torus_momenta(d: int, L: int) -> np.ndarray:
    """Momenta 2 pi k / L of an L^d torus in FFT order, shape (L,)*d + (d,)."""
    k = 2.0 * np.pi * np.fft.fftfreq(L)
    return np.stack(np.meshgrid(*([k] * d), indexing="ij"), axis=-1)


def lattice_amplitude(d: int, L: int, stiffness: float = 1.0) -> np.ndarray:
    """Spectral amplitude h(p) = (2 kappa D(p))^{-1/2}, zero mode set to 0."""
    D = lattice_symbol(torus_momenta(d, L))
    h = np.zeros_like(D)
    nonzero = D > 1e-14
    h[nonzero] = 1.0 / np.sqrt(2.0 * stiffness * D[nonzero])
    return h


def sample_gff_lattice(d: int, L: int, seed: int, stiffness: float = 1.0) -> FieldSample:
    """
    Massless Gaussian free field on the L^d torus, pinned at the origin.

    Real white noise is transformed, multiplied by the amplitude (zero mode
    dropped) and transformed back, so the covariance of differences is the
    torus Green function of stiffness * (-Delta).

    Args:
        d: Dimension (>= 3)
        L: Torus side (even, >= 8)
        seed: 64-bit seed
        stiffness: Inverse temperature kappa of the Gibbs weight

    Returns:
        FieldSample of kind lattice_gaussian
    """
    _require_massless(d)
    if L % 2 or L < 8:
        raise ConfigError("torus side must be even and at least 8", {"L": L})

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((L,) * d)
    spectrum = np.fft.fftn(noise) * lattice_amplitude(d, L, stiffness)
    values = np.fft.ifftn(spectrum).real

    sample = FieldSample(d=d, L=L, values=values, seed=seed, kind="lattice_gaussian", stiffness=stiffness)
    return sample.pinned()


def _checkerboard(d: int, L: int) -> np.ndarray:
    grids = np.indices((L,) * d)
    return (np.sum(grids, axis=0) % 2) == 0


def _neighbour_stack(values: np.ndarray) -> np.ndarray:
    shifted = []
    for axis in range(values.ndim):
        shifted.append(np.roll(values, 1, axis=axis))
        shifted.append(np.roll(values, -1, axis=axis))
    return np.stack(shifted)


def metropolis_accept_prob(
    current: np.ndarray,
    proposal: np.ndarray,
    neighbours: np.ndarray,
    R,
    stiffness: float = 1.0,
) -> np.ndarray:
    """
    Acceptance probability min(1, exp(-kappa sum_y [R(x' - y) - R(x - y)])).

    `neighbours` has the neighbour axis first; equal proposals are always accepted.
    """
    delta = np.sum(R(proposal - neighbours) - R(current - neighbours), axis=0)
    return np.exp(-stiffness * np.clip(delta, 0.0, None))


def gibbs_sweep(field: FieldSample, spec: GibbsSpec, rng: np.random.Generator) -> FieldSample:
    """
    One systematic sweep of single-site updates, then re-pin at the origin.

    Sites are visited colour by colour on the checkerboard; same-coloured
    sites share no neighbours, so each colour is a batch of independent
    single-site updates. Gaussian R gets exact heat-bath draws from
    Normal(neighbour mean, 1/(2 d kappa)); otherwise a Metropolis step with
    a symmetric Gaussian proposal.
    """
    if field.kind != "lattice_gibbs":
        raise ConfigError("gibbs_sweep expects a lattice_gibbs field", {"kind": field.kind})

    d, L, kappa = field.d, field.L, spec.stiffness
    values = field.values.copy()
    even = _checkerboard(d, L)
    R = gibbs_potential(spec.rate)

    for colour in (even, ~even):
        neighbours = _neighbour_stack(values)
        if spec.heat_bath:
            mean = neighbours.mean(axis=0)
            draw = mean + rng.standard_normal(values.shape) / np.sqrt(2.0 * d * kappa)
            values = np.where(colour, draw, values)
        else:
            proposal = values + spec.proposal_scale * rng.standard_normal(values.shape)
            accept = metropolis_accept_prob(values, proposal, neighbours, R, kappa)
            take = colour & (rng.random(values.shape) < accept)
            values = np.where(take, proposal, values)

    values = values - values[(0,) * d]
    return field.model_copy(update={"values": values})


def gibbs_chain(
    d: int,
    L: int,
    spec: GibbsSpec,
    seed: int,
    start: Optional[FieldSample] = None,
) -> Tuple[FieldSample, Dict[str, float]]:
    """
    Run burn-in plus spec.n_sweeps sweeps from a flat (or given) field.

    Returns the final field and diagnostics: integrated autocorrelation time
    and effective sample size of omega(0) - omega(e_1) over the kept sweeps.
    """
    _require_massless(d)
    rng = np.random.default_rng(seed)
    field = start or FieldSample(
        d=d, L=L, values=np.zeros((L,) * d), seed=seed, kind="lattice_gibbs", stiffness=spec.stiffness
    )

    for _ in range(spec.burn_in_for(L)):
        field = gibbs_sweep(field, spec, rng)

    origin = (0,) * d
    neighbour = (1,) + (0,) * (d - 1)
    trace = np.empty(spec.n_sweeps)
    for i in range(spec.n_sweeps):
        field = gibbs_sweep(field, spec, rng)
        trace[i] = field.values[origin] - field.values[neighbour]

    tau = integrated_autocorrelation(trace) if spec.n_sweeps > 2 else 1.0
    logger.info(f"Gibbs chain finished: L={L} sweeps={spec.n_sweeps} tau={tau:.3g}")
    return field, {"tau_int": tau, "ess": spec.n_sweeps / tau if tau > 0 else 0.0}


def integrated_autocorrelation(trace: np.ndarray, window_factor: float = 5.0) -> float:
    """Integrated autocorrelation time with a self-consistent truncation window."""
    x = np.asarray(trace, dtype=float) - np.mean(trace)
    n = len(x)
    if np.dot(x, x) == 0.0:
        return 1.0
    f = np.fft.rfft(x, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for m in range(1, n):
        tau += 2.0 * acf[m]
        if m >= window_factor * tau:
            break
    return float(max(tau, 1.0))


def continuum_modes(d: int, L_box: float, M: int, V: Potential, seed: int) -> np.ndarray:
    """
    Synthesized Fourier modes G(p) = h(p) xi_hat(p) of the continuum field.

    h(p)^2 = M^d (2 pi)^{d/2} C_hat(p) / L^d makes ifftn(G) a field with
    covariance (2 pi)^{-d/2} (2 pi / L)^d sum_p C_hat(p) e^{ipx}.
    """
    p = box_momenta(d, L_box, M)
    C_hat = continuum_spectral_density(V, p)
    h = np.sqrt(M ** d * (2.0 * np.pi) ** (d / 2.0) * C_hat / L_box ** d)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((M,) * d)
    return np.fft.fftn(noise) * h


def sample_continuum_field(d: int, L_box: float, M: int, V: Potential, seed: int) -> FieldSample:
    """
    Continuum Gaussian field eta_0 with spectral density |p|^{-2} V_hat(p).

    The zero mode is dropped, so each sample has spatial mean 0; values are
    not pinned. Gradient grids come from spectral differentiation with the
    Nyquist mode removed.
    """
    _require_massless(d)
    if V.d != d:
        raise ConfigError("potential dimension differs from the field dimension", {"d": d, "V.d": V.d})
    if M % 2:
        raise ConfigError("grid size must be even", {"M": M})

    modes = continuum_modes(d, L_box, M, V, seed)
    values = np.fft.ifftn(modes).real

    p = box_momenta(d, L_box, M)
    nyquist = np.fft.fftfreq(M, d=1.0 / M) == -(M // 2)
    grads = []
    for l in range(d):
        multiplier = 1j * p[..., l]
        index = [np.newaxis] * d
        index[l] = slice(None)
        multiplier = np.where(nyquist[tuple(index)], 0.0, multiplier)
        grads.append(np.fft.ifftn(modes * multiplier).real)

    return FieldSample(
        d=d, L=M, values=values, seed=seed, kind="continuum_gaussian", box=L_box, grads=grads
    )


def _grid_coordinates(field: FieldSample, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return (x / field.spacing).T


def interpolate(field: FieldSample, x) -> np.ndarray:
    """Periodic trilinear interpolation of eta_0 at off-grid points x (shape (n, d))."""
    coords = _grid_coordinates(field, x)
    return ndimage.map_coordinates(field.values, coords, order=1, mode="grid-wrap")


def interpolate_gradient(field: FieldSample, x) -> np.ndarray:
    """Periodic trilinear interpolation of grad eta_0; returns shape (n, d)."""
    if field.grads is None:
        raise ConfigError("field carries no gradient grids")
    coords = _grid_coordinates(field, x)
    return np.stack(
        [ndimage.map_coordinates(g, coords, order=1, mode="grid-wrap") for g in field.grads], axis=-1
    )


def parseval_residual(field: FieldSample, modes: np.ndarray) -> float:
    """Relative gap between sum |eta_0|^2 and M^{-d} sum |G(p)|^2."""
    grid_energy = float(np.sum(field.values ** 2))
    spectral_energy = float(np.sum(np.abs(modes) ** 2)) / modes.size
    return abs(grid_energy - spectral_energy) / spectral_energy


def empirical_correlation(field: FieldSample, shift: int, axis: int = 0) -> float:
    """Spatial average of eta_0(x) eta_0(x + shift e_axis) over the grid."""
    return float(np.mean(field.values * np.roll(field.values, -shift, axis=axis)))
