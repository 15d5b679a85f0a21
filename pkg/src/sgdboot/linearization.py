"""Exact linearization quantities of averaged SGD.

Everything here is deterministic linear algebra: the step-transfer matrices
Q_i, the finite-horizon covariance Sigma_n and its limit Sigma_inf, the
algebraic identities relating Q_i to the inverse Hessian, the W + D split of
sqrt(n)(theta_bar - theta*), the scalar lower-bound variance, and the closed
forms of the theoretical constants used by envelope and rate checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import exp, gamma as _gamma_fn, sqrt

import numpy as np

from .model import (
    NoiseOracle,
    ProblemSpec,
    hessian_at_min,
    remainder_h,
)
from .schedule import StepSchedule, validate_basic
from .sgd import SgdRun

__all__ = [
    "QFamily",
    "CovarianceSet",
    "WDSplit",
    "TheoreticalConstants",
    "compute_q_family",
    "identity_sum",
    "identity_single",
    "identity_residuals",
    "compute_covariances",
    "covariance_csv_bytes",
    "split_w_d",
    "scalar_q_weights",
    "scalar_sigma2",
    "theoretical_constants",
]


@dataclass(frozen=True)
class QFamily:
    """Q_0..Q_{n-1} for a horizon n, Hessian G, and step schedule."""

    n: int
    g_matrix: np.ndarray
    schedule: StepSchedule
    q: np.ndarray  # (n, d, d)

    @property
    def dim(self) -> int:
        return self.g_matrix.shape[0]


@dataclass(frozen=True)
class CovarianceSet:
    sigma_n: np.ndarray
    sigma_infty: np.ndarray
    constants: "TheoreticalConstants"


@dataclass(frozen=True)
class WDSplit:
    """sqrt(n)(theta_bar - theta*) = w_part + d_part, with D's three pieces.

    d1 is the initial-condition term Q_0(theta0-theta*)/(sqrt(n) alpha_0), d2
    the Hessian-remainder term, d3 the multiplicative-noise term; all
    unnormalized (no Sigma_n^{-1/2} factor).
    """

    w_part: np.ndarray
    d_part: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    total: np.ndarray  # sqrt(n) (theta_bar - theta*)


def compute_q_family(g_matrix: np.ndarray, schedule, n: int) -> QFamily:
    """Backward recursion for Q_i = alpha_i sum_{j>=i} prod_{k=i+1..j}(I - alpha_k G).

    ``schedule`` only needs an ``alpha(k)`` method, so constant-step test
    doubles are accepted.  O(n d^3) versus the O(n^2 d^3) direct double sum,
    which is kept as a test oracle.
    """
    g = np.asarray(g_matrix, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("g_matrix must be square")
    if not np.allclose(g, g.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(g).max()))):
        raise ValueError("g_matrix must be symmetric")
    if n < 2:
        raise ValueError("need n >= 2")
    d = g.shape[0]
    alphas = np.array([schedule.alpha(k) for k in range(n)], dtype=float)
    q = np.empty((n, d, d))
    if d == 1:
        gg = float(g[0, 0])
        t = 1.0
        q[n - 1, 0, 0] = alphas[n - 1]
        for i in range(n - 2, -1, -1):
            t = 1.0 + (1.0 - alphas[i + 1] * gg) * t
            q[i, 0, 0] = alphas[i] * t
    else:
        eye = np.eye(d)
        p = eye.copy()
        q[n - 1] = alphas[n - 1] * p
        for i in range(n - 2, -1, -1):
            p = eye + (eye - alphas[i + 1] * g) @ p
            q[i] = alphas[i] * p
    return QFamily(n=n, g_matrix=g, schedule=schedule, q=q)


def _g_inverse(g: np.ndarray) -> np.ndarray:
    return np.linalg.solve(g, np.eye(g.shape[0]))


def identity_sum(qf: QFamily) -> float:
    """Residual of sum_{i=1..n-1}(Q_i - G^{-1}) = -G^{-1} sum_{j=1..n-1} G_{1:j}.

    Relative to ||G^{-1}||; exact identity, so the residual is roundoff only.
    """
    g = qf.g_matrix
    d = qf.dim
    ginv = _g_inverse(g)
    lhs = qf.q[1:].sum(axis=0) - (qf.n - 1) * ginv
    prod = np.eye(d)
    acc = np.zeros((d, d))
    for j in range(1, qf.n):
        prod = prod @ (np.eye(d) - qf.schedule.alpha(j) * g)
        acc += prod
    residual = lhs + ginv @ acc
    return float(np.linalg.norm(residual, 2) / np.linalg.norm(ginv, 2))


def identity_single(qf: QFamily, i: int) -> float:
    """Residual of Q_i - G^{-1} = S_i - G^{-1} G_{i:n-1}, relative to ||G^{-1}||."""
    if not 1 <= i <= qf.n - 1:
        raise ValueError(f"index i = {i} outside 1..{qf.n - 1}")
    g = qf.g_matrix
    d = qf.dim
    eye = np.eye(d)
    alpha_i = qf.schedule.alpha(i)
    s_i = np.zeros((d, d))
    prod = eye.copy()  # G_{i+1:j-1}, empty at j = i+1
    for j in range(i + 1, qf.n):
        s_i += (alpha_i - qf.schedule.alpha(j)) * prod
        prod = prod @ (eye - qf.schedule.alpha(j) * g)
    full = eye.copy()
    for k in range(i, qf.n):
        full = full @ (eye - qf.schedule.alpha(k) * g)
    ginv = _g_inverse(g)
    residual = (qf.q[i] - ginv) - (s_i - ginv @ full)
    return float(np.linalg.norm(residual, 2) / np.linalg.norm(ginv, 2))


def identity_residuals(qf: QFamily) -> tuple[float, np.ndarray]:
    """identity_sum plus all single-index residuals in one O(n d^3) sweep.

    The per-index S_i and tail products obey backward recursions
    (S_i = alpha_i A_i - B_i with A_i = I + (I - alpha_{i+1} G) A_{i+1} and
    B_i likewise), avoiding the O(n^2) cost of calling identity_single per i.
    """
    g = qf.g_matrix
    d = qf.dim
    n = qf.n
    eye = np.eye(d)
    ginv = _g_inverse(g)
    ginv_norm = float(np.linalg.norm(ginv, 2))
    alphas = np.array([qf.schedule.alpha(k) for k in range(n)], dtype=float)

    res = np.empty(n - 1)
    a_acc = np.zeros((d, d))  # A_{n-1} = 0
    b_acc = np.zeros((d, d))  # B_{n-1} = 0
    tail = eye - alphas[n - 1] * g  # G_{n-1:n-1}
    for i in range(n - 1, 0, -1):
        s_i = alphas[i] * a_acc - b_acc
        residual = (qf.q[i] - ginv) - (s_i - ginv @ tail)
        res[i - 1] = np.linalg.norm(residual, 2) / ginv_norm
        if i > 1:
            shrink = eye - alphas[i] * g
            a_acc = eye + shrink @ a_acc
            b_acc = alphas[i] * eye + shrink @ b_acc
            tail = (eye - alphas[i - 1] * g) @ tail
    return identity_sum(qf), res


def compute_covariances(
    qf: QFamily,
    sigma_xi: np.ndarray,
    problem: ProblemSpec,
    oracle: NoiseOracle,
    theta0: np.ndarray | None = None,
) -> CovarianceSet:
    """Sigma_n = n^{-1} sum_{k=1..n-1} Q_k Sigma_xi Q_k', Sigma_inf = G^{-1} Sigma_xi G^{-T}.

    Sigma_inf is obtained by linear solves against G, never explicit inversion.
    """
    sigma_xi = np.asarray(sigma_xi, dtype=float)
    d = qf.dim
    if sigma_xi.shape != (d, d):
        raise ValueError("sigma_xi has wrong shape")
    if np.linalg.eigvalsh(sigma_xi)[0] <= 0:
        raise ValueError("sigma_xi must be positive definite")
    sigma_n = np.einsum("kij,jl,kml->im", qf.q[1:], sigma_xi, qf.q[1:]) / qf.n
    sigma_n = 0.5 * (sigma_n + sigma_n.T)
    half = np.linalg.solve(qf.g_matrix, sigma_xi)
    sigma_infty = np.linalg.solve(qf.g_matrix, half.T).T
    sigma_infty = 0.5 * (sigma_infty + sigma_infty.T)
    constants = theoretical_constants(problem, oracle, qf.schedule, qf.n, theta0=theta0)
    return CovarianceSet(sigma_n=sigma_n, sigma_infty=sigma_infty, constants=constants)


def split_w_d(run: SgdRun, qf: QFamily, problem: ProblemSpec) -> WDSplit:
    """Reconstruct W and D from a traced run.

    W = -(1/sqrt n) sum Q_i eta_i; D's components use the traced iterates and
    multiplicative-noise values, so w_part + d_part recovers
    sqrt(n)(theta_bar - theta*) up to roundoff.
    """
    if run.trace is None:
        raise ValueError("split_w_d needs a run with trace enabled")
    if run.n != qf.n:
        raise ValueError("run and QFamily horizons differ")
    n = run.n
    star = problem.minimizer
    sqrt_n = sqrt(n)
    q_tail = qf.q[1:]
    w_part = -np.einsum("kij,kj->i", q_tail, run.trace.eta) / sqrt_n
    d1 = qf.q[0] @ (run.theta0 - star) / (sqrt_n * run.trace.alpha[0])
    h_vals = np.stack([remainder_h(problem, run.trace.theta[i]) for i in range(n - 1)])
    d2 = -np.einsum("kij,kj->i", q_tail, h_vals) / sqrt_n
    d3 = -np.einsum("kij,kj->i", q_tail, run.trace.g) / sqrt_n
    total = sqrt_n * (run.theta_bar - star)
    return WDSplit(w_part=w_part, d_part=total - w_part, d1=d1, d2=d2, d3=d3, total=total)


def covariance_csv_bytes(matrix: np.ndarray) -> bytes:
    """Row-major CSV export of a covariance matrix; the header row carries d."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("expected a square matrix")
    lines = [str(matrix.shape[0])]
    for row in matrix:
        lines.append(",".join(repr(float(v)) for v in row))
    return ("\r\n".join(lines) + "\r\n").encode()


# ---------------------------------------------------------------------------
# scalar lower-bound model
# ---------------------------------------------------------------------------


def scalar_q_weights(n: int, gamma: float, c0: float, k0: float = 1.0) -> np.ndarray:
    """Q_0..Q_{n-1} for the scalar model (G = 1), O(n) backward recursion."""
    if n < 2:
        raise ValueError("need n >= 2")
    alphas = c0 / (k0 + np.arange(n, dtype=float)) ** gamma
    q = np.empty(n)
    t = 1.0
    q[n - 1] = alphas[n - 1]
    for j in range(n - 2, -1, -1):
        t = 1.0 + (1.0 - alphas[j + 1]) * t
        q[j] = alphas[j] * t
    return q


def scalar_sigma2(n: int, gamma: float, c0: float) -> float:
    """Variance of sqrt(n) theta_bar_n in the scalar model with alpha_j = c0/(1+j)^gamma.

    Uses the lower-bound convention k0 = 1 (offset inside the power, first
    used step is alpha_1 = c0/2^gamma).  O(n) time, O(1) memory, so dyadic
    scans up to 2^27 stay cheap.  Warns when alpha_1 >= 1 (contraction
    violated) but still evaluates.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    if c0 / 2.0**gamma >= 1.0:
        warnings.warn(
            f"alpha_1 = {c0 / 2.0 ** gamma:.6g} >= 1: contraction violated", stacklevel=2
        )
    t = 1.0  # T_{n-1}
    alpha_last = c0 / float(n) ** gamma  # alpha_{n-1} = c0/(1+(n-1))^gamma
    acc = (alpha_last * t) ** 2
    for j in range(n - 2, 0, -1):
        alpha_next = c0 / (2.0 + j) ** gamma  # alpha_{j+1}
        t = 1.0 + (1.0 - alpha_next) * t
        alpha_j = c0 / (1.0 + j) ** gamma
        acc += (alpha_j * t) ** 2
    return acc / n


# ---------------------------------------------------------------------------
# theoretical constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoreticalConstants:
    """Closed-form constants of the linearization and moment bounds.

    ``valid`` records whether the step-size admissibility checks passed; the
    constants are still evaluated when they do not, but are then nominal only.
    ``notes`` flags conventions (e.g. the min-over-range evaluation of
    c_q_min, whose defining display carries a free index).
    """

    c_q: float
    c_q_min: float
    c_sigma: float
    c_s: float
    c_q_xi: float
    c_infty_prime: float
    c_1: float
    c_2: float
    l_h: float
    k_2: float
    valid: bool
    notes: tuple[str, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {
            "C_Q": self.c_q,
            "C_Q_min": self.c_q_min,
            "C_Sigma": self.c_sigma,
            "C_S": self.c_s,
            "C_Q_xi": self.c_q_xi,
            "C_infty_prime": self.c_infty_prime,
            "C_1": self.c_1,
            "C_2": self.c_2,
            "L_H": self.l_h,
            "K_2": self.k_2,
            "valid": self.valid,
            "notes": list(self.notes),
        }


def theoretical_constants(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    n: int,
    theta0: np.ndarray | None = None,
) -> TheoreticalConstants:
    """Evaluate the closed-form constants for a concrete configuration."""
    gamma = schedule.gamma
    if not 0.5 < gamma < 1.0:
        raise ValueError("constants assume gamma in (1/2, 1)")
    mu, l1, l2 = problem.mu, problem.l1, oracle.l2
    c0, k0 = schedule.c0, schedule.k0
    notes: list[str] = []

    one_m_g = 1.0 - gamma
    gam_inv = 1.0 / one_m_g
    c_q = (
        1.0
        + max(
            exp(gam_inv) * (2.0 * one_m_g / (mu * c0)) ** gam_inv * gam_inv * _gamma_fn(gam_inv),
            2.0 / (mu * c0 * one_m_g),
        )
    ) * c0

    alphas = schedule.alphas(n)
    i_range = np.arange(n, dtype=float)
    c_q_min = float(np.min((1.0 - (1.0 - alphas * l1) ** (n - i_range)) / l1))
    notes.append("C_Q_min evaluated as the minimum of its display over i = 0..n-1")

    lmin_xi = float(np.linalg.eigvalsh(oracle.sigma_xi)[0])
    c_sigma = sqrt(2.0) * l1 / ((1.0 - exp(-mu * c0 * l1 / (2.0 * (k0 + 1.0)))) * sqrt(lmin_xi))

    c_s = (
        2.0
        * c0
        * exp(mu * c0 / k0**gamma)
        * (2.0 ** (gamma / one_m_g) / (mu * c0) + (1.0 / (mu * c0)) ** gam_inv * _gamma_fn(gam_inv))
    )

    lmax_xi = float(np.linalg.eigvalsh(oracle.sigma_xi)[-1])
    if np.isinf(oracle.c1_xi):
        c_q_xi = float("inf")
        notes.append("C_Q_xi is infinite: the oracle is unbounded")
    else:
        c_q_xi = c_q**2 * (oracle.c1_xi**2 + lmax_xi)

    g = hessian_at_min(problem)
    half = np.linalg.solve(g, oracle.sigma_xi)
    sigma_infty = np.linalg.solve(g, half.T).T
    norm_infty = float(np.linalg.norm(sigma_infty, 2))
    norm_xi = float(np.linalg.norm(oracle.sigma_xi, 2))
    c_infty_prime = (k0**gamma / (c0 * mu) + 2.0 * c_q * k0**gamma / c0 + 1.0) * norm_infty + (
        c_s**2 / (2.0 * gamma - 1.0) + c_s * k0 ** (2.0 * gamma - 1.0) / (mu**2 * c0)
    ) * norm_xi

    if l2 > 0:
        c_1 = exp(3.0 * mu * c0 * k0**one_m_g / (4.0 * one_m_g)) * (
            (1.0 + l2**-2) * exp(6.0 * c0**2 * l2**2 / (2.0 * gamma - 1.0))
            + 2.0 * c0**2 / (2.0 * gamma - 1.0)
        )
    else:
        c_1 = float("inf")
        notes.append("C_1 is infinite: its display requires L2 > 0")
    c_2 = 2.0 ** (1.0 + gamma) / mu

    l_h = max(problem.l3, 2.0 * l1 / problem.beta_radius)

    dist0_sq = 0.0
    if theta0 is not None:
        dist0_sq = float(np.sum((np.asarray(theta0, float) - problem.minimizer) ** 2))
    if np.isinf(oracle.c1_xi):
        k_2 = float("inf")
    else:
        k_2 = max(
            12.0 * (oracle.c1_xi + oracle.c2_xi) ** 2 / mu,
            k0**gamma * dist0_sq / schedule.alpha(0),
        )

    valid = validate_basic(schedule, l1).passed
    if not valid:
        notes.append("schedule fails basic admissibility; constants are nominal only")

    return TheoreticalConstants(
        c_q=c_q,
        c_q_min=c_q_min,
        c_sigma=c_sigma,
        c_s=c_s,
        c_q_xi=c_q_xi,
        c_infty_prime=c_infty_prime,
        c_1=c_1,
        c_2=c_2,
        l_h=l_h,
        k_2=k_2,
        valid=valid,
        notes=tuple(notes),
    )
