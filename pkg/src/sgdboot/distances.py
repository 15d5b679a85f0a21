"""Distance estimators between empirical laws and Gaussians.

The convex distance over all convex sets is not computable in d > 1, so the
multivariate estimators here are *lower-bound proxies* over computable convex
sub-families (half-spaces via projections, centered Mahalanobis balls); every
report carries its estimator tag so a proxy is never mistaken for the full
distance.  In d = 1 the Kolmogorov-Smirnov statistic over intervals is the
real thing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import log, sqrt

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import chi2, norm

from .rng import derive_key, stream

__all__ = [
    "DistanceReport",
    "ks_two_gaussians_1d",
    "empirical_ks_1d",
    "projected_convex_proxy",
    "ball_class_proxy",
    "tv_comparison_bound",
]

KS1D = "ks_1d"
PROJECTED_KS = "projected_ks"
BALL_CLASS_KS = "ball_class_ks"
TV_COMPARISON = "tv_comparison_bound"


@dataclass(frozen=True)
class DistanceReport:
    estimator: str
    value: float
    detail: dict = field(default_factory=dict)


def ks_two_gaussians_1d(var1: float, var2: float) -> float:
    """sup_x |Phi(x/s1) - Phi(x/s2)| from the closed-form stationary point.

    The density ratio of two centered normals has its crossing at
    x^2 = v1 v2 log(v2/v1) / (v2 - v1), where the CDF gap is extremal.
    """
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    if var1 == var2:
        return 0.0
    x = sqrt(var1 * var2 * log(var2 / var1) / (var2 - var1))
    return float(abs(norm.cdf(x / sqrt(var1)) - norm.cdf(x / sqrt(var2))))


def empirical_ks_1d(samples: np.ndarray, var: float) -> float:
    """Two-sided KS statistic of a sample against N(0, var)."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    if var <= 0:
        raise ValueError("var must be positive")
    s = np.sort(samples, kind="stable")
    n = s.size
    cdf = norm.cdf(s / sqrt(var))
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n))))


def _canonical_sign(u: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude coordinate is positive (stable direction ids)."""
    lead = u[np.argmax(np.abs(u))]
    return -u if lead < 0 else u


def projected_convex_proxy(
    samples: np.ndarray,
    sigma: np.ndarray,
    n_directions: int = 50,
    direction_key: int = 0,
) -> DistanceReport:
    """Max over unit directions u of the 1-D KS of <u, X> against N(0, u'Su).

    Half-spaces are convex, so this lower-bounds the convex distance.  The d
    canonical axes are always evaluated in addition to ``n_directions``
    random directions drawn from ``direction_key``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be (n, d)")
    d = samples.shape[1]
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (d, d) or np.linalg.eigvalsh(sigma)[0] <= 0:
        raise ValueError("sigma must be SPD of matching dimension")
    if n_directions < 1:
        raise ValueError("need n_directions >= 1")
    directions = [np.eye(d)[j] for j in range(d)]
    gen = stream(derive_key(direction_key, "proxy-directions"))
    for _ in range(n_directions):
        u = gen.standard_normal(d)
        u /= np.linalg.norm(u)
        directions.append(_canonical_sign(u))
    best = -1.0
    best_dir = directions[0]
    for u in directions:
        stat = empirical_ks_1d(samples @ u, float(u @ sigma @ u))
        if stat > best:
            best = stat
            best_dir = u
    return DistanceReport(
        estimator=PROJECTED_KS,
        value=best,
        detail={
            "n_directions": n_directions + d,
            "argmax_direction": best_dir.tolist(),
        },
    )


def ball_class_proxy(samples: np.ndarray, sigma: np.ndarray) -> DistanceReport:
    """KS of squared Mahalanobis radii against chi-square(d).

    Centered ellipsoids are convex, so this also lower-bounds the convex
    distance; it is sensitive to radial (covariance-scale) mismatch that
    projections can miss.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be (n, d)")
    d = samples.shape[1]
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (d, d) or np.linalg.eigvalsh(sigma)[0] <= 0:
        raise ValueError("sigma must be SPD of matching dimension")
    chol = np.linalg.cholesky(sigma)
    z = solve_triangular(chol, samples.T, lower=True)
    r2 = np.sort(np.sum(z * z, axis=0), kind="stable")
    n = r2.size
    cdf = chi2.cdf(r2, df=d)
    grid = np.arange(1, n + 1) / n
    value = float(max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / n))))
    return DistanceReport(estimator=BALL_CLASS_KS, value=value, detail={"df": d})


def tv_comparison_bound(sigma1: np.ndarray, sigma2: np.ndarray) -> float:
    """Gaussian comparison: d_TV(N(0,S1), N(0,S2)) <= 1.5 ||S2^{-1/2} S1 S2^{-1/2} - I||_F."""
    sigma1 = np.asarray(sigma1, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma1.shape != sigma2.shape or sigma1.ndim != 2:
        raise ValueError("covariances must be square of equal shape")
    eigs, vecs = np.linalg.eigh(sigma2)
    if eigs[0] <= 0 or np.linalg.eigvalsh(sigma1)[0] <= 0:
        raise ValueError("covariances must be positive definite")
    inv_root = vecs @ np.diag(1.0 / np.sqrt(eigs)) @ vecs.T
    m = inv_root @ sigma1 @ inv_root
    d = sigma1.shape[0]
    return 1.5 * float(np.linalg.norm(m - np.eye(d), "fro"))
