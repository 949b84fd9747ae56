"""
Shared estimators: MSD regression, batch means, two-sample KS, exponent fits.

All estimators are pure functions of their input; replica order never matters.
"""

from typing import Dict, Optional, Sequence

import numpy as np
from scipy import stats as sps

from ..schemas.run import Estimate
from ..utils.errors import EstimatorError

MIN_KS_SIZE = 50


def _window_mask(times: np.ndarray, burn_in_fraction: float) -> np.ndarray:
    t_end = times[-1]
    return (times > burn_in_fraction * t_end) & (times > 0.0)


def msd_diffusivity(
    times: Sequence[float],
    positions: np.ndarray,
    burn_in_fraction: float = 0.2,
    min_points: int = 10,
    min_replicas: int = 30,
) -> Dict[str, object]:
    """
    Asymptotic covariance sigma^2_kl = lim t^{-1} E X_k(t) X_l(t) by regression.

    Weighted least squares of X_k X_l (displacements from t = 0) against
    a + b t over the window, with weights 1/t^2. The slope is linear in the
    data, so each replica's own slope is computed with the same weights and
    the standard error is that of their mean.

    Args:
        times: Common time grid, shape (n_t,)
        positions: Replica positions, shape (n_rep, n_t, d)
        burn_in_fraction: Leading fraction of the horizon left out of the window
        min_points: Fewest grid points allowed in the window
        min_replicas: Fewest replicas allowed

    Returns:
        Dict with 'matrix' (d x d Estimates), 'per_coordinate' and 'trace'
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    n_rep, n_t, d = positions.shape
    if n_rep < min_replicas:
        raise EstimatorError("too few replicas for a diffusivity fit", {"replicas": n_rep, "required": min_replicas})
    if n_t != len(times):
        raise EstimatorError("time grid does not match the series", {"times": len(times), "series": n_t})

    mask = _window_mask(times, burn_in_fraction)
    if np.count_nonzero(mask) < min_points:
        raise EstimatorError("regression window too short", {"points": int(np.count_nonzero(mask))})

    t = times[mask]
    weights = 1.0 / (t * t)
    design = np.stack([np.ones_like(t), t], axis=1)
    normal = design.T @ (weights[:, None] * design)
    # Row of the WLS solve that maps responses to the slope.
    slope_row = np.linalg.solve(normal, (weights[:, None] * design).T)[1]

    disp = positions[:, mask, :] - positions[:, :1, :]
    matrix = []
    for k in range(d):
        row = []
        for l in range(d):
            per_rep = (disp[:, :, k] * disp[:, :, l]) @ slope_row
            row.append(_mean_estimate(per_rep, "msd_wls"))
        matrix.append(row)

    trace_rep = np.einsum("rtk,rtk->rt", disp, disp) @ slope_row
    return {
        "matrix": matrix,
        "per_coordinate": [matrix[k][k] for k in range(d)],
        "trace": _mean_estimate(trace_rep, "msd_wls"),
        "window": [float(t[0]), float(t[-1])],
    }


def _mean_estimate(values: np.ndarray, method: str) -> Estimate:
    values = np.sort(np.asarray(values, dtype=float))
    n = len(values)
    stderr = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return Estimate(value=float(np.mean(values)), stderr=stderr, n_eff=n, n=n, method=method, dof=n - 1 if n > 1 else None)


def replica_mean(values: Sequence[float], method: str = "replica_mean") -> Estimate:
    """Mean over independent replicas with its standard error."""
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise EstimatorError("no replicas")
    return _mean_estimate(values, method)


def _require_nondegenerate(*samples: np.ndarray) -> None:
    pooled = np.concatenate([np.ravel(s) for s in samples])
    if pooled.size == 0 or np.all(pooled == pooled[0]):
        raise EstimatorError("degenerate (constant) sample")


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> Dict[str, float]:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < MIN_KS_SIZE or len(b) < MIN_KS_SIZE:
        raise EstimatorError("KS needs at least 50 samples per side", {"sizes": [len(a), len(b)]})
    _require_nondegenerate(a, b)
    result = sps.ks_2samp(a, b, method="asymp")
    return {"statistic": float(result.statistic), "p_value": float(result.pvalue)}


def _lag1(x: np.ndarray) -> float:
    x = x - np.mean(x)
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x[:-1], x[1:]) / denom)


def batch_means_ci(
    series: Sequence[float],
    threshold: float = 0.1,
    min_batches: int = 20,
) -> Estimate:
    """
    Mean of a correlated series with a batch-means standard error.

    The batch size doubles until the lag-1 autocorrelation of the batch means
    drops below `threshold` (or fewer than `min_batches` would remain). The
    batch variance is inflated by (1 + 2 rho_1) with the residual lag-1
    autocorrelation clipped at zero.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 2 * min_batches:
        raise EstimatorError("series too short for batch means", {"length": n})
    _require_nondegenerate(x)

    size = 1
    while True:
        n_batches = n // size
        means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
        rho = _lag1(means)
        if rho < threshold or n // (2 * size) < min_batches:
            break
        size *= 2

    var_batches = float(np.var(means, ddof=1)) * (1.0 + 2.0 * max(rho, 0.0))
    stderr = float(np.sqrt(var_batches / n_batches))
    var_x = float(np.var(x, ddof=1))
    n_eff = min(float(n), var_x / stderr ** 2) if stderr > 0 else float(n)
    return Estimate(
        value=float(np.mean(x)),
        stderr=stderr,
        n_eff=n_eff,
        n=n,
        method=f"batch_means(b={size})",
        dof=n_batches - 1,
    )


def exponent_fit(times: Sequence[float], msd: Sequence[float]) -> Estimate:
    """Least-squares slope of log msd against log t (positive entries only)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(msd, dtype=float)
    keep = (t > 0) & (y > 0)
    t, y = t[keep], y[keep]
    if len(t) < 3:
        raise EstimatorError("exponent fit needs three positive points", {"points": len(t)})

    result = sps.linregress(np.log(t), np.log(y))
    return Estimate(
        value=float(result.slope),
        stderr=float(result.stderr),
        n_eff=len(t),
        n=len(t),
        method="loglog_ls",
        dof=len(t) - 2,
    )


def covariance_zscores(a: np.ndarray, b: np.ndarray, alpha: float = 0.01) -> Dict[str, object]:
    """
    Entrywise z-scores for the difference of two sample covariance matrices.

    The variance of each sample covariance entry is estimated from the
    products of centred coordinates. The pass flag uses a Bonferroni
    threshold over the k(k+1)/2 distinct entries.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[1] != b.shape[1]:
        raise EstimatorError("samples have different dimension")

    def moments(x):
        centred = x - x.mean(axis=0)
        products = centred[:, :, None] * centred[:, None, :]
        return products.mean(axis=0), products.var(axis=0, ddof=1) / len(x)

    cov_a, var_a = moments(a)
    cov_b, var_b = moments(b)
    scale = np.sqrt(var_a + var_b)
    z = np.where(scale > 0, (cov_a - cov_b) / np.where(scale > 0, scale, 1.0), 0.0)

    k = a.shape[1]
    m = k * (k + 1) // 2
    threshold = float(sps.norm.ppf(1.0 - alpha / (2.0 * m)))
    upper = np.triu_indices(k)
    max_abs = float(np.max(np.abs(z[upper])))
    return {
        "z": z,
        "max_abs_z": max_abs,
        "threshold": threshold,
        "passed": max_abs < threshold,
    }


def zscore_difference(a: Estimate, b: Estimate) -> float:
    """(a - b) / sqrt(se_a^2 + se_b^2); 0 when both are exact."""
    scale = np.hypot(a.stderr, b.stderr)
    if scale == 0.0:
        return 0.0 if a.value == b.value else float("inf")
    return float((a.value - b.value) / scale)


def correlation(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Pearson correlation; None when either side is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])
