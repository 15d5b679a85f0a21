"""Strongly convex test problems and noise oracles with exact structure.

Three problem families are provided:

* ``quadratic``: f(theta) = (theta - theta*)' A (theta - theta*) / 2 with SPD A.
  The Hessian is constant, the nonlinear remainder vanishes, and every
  linearization quantity is exact.
* ``logistic_ridge``: population logistic regression over a finite atom set
  plus a ridge term.  Because the design distribution is finite, the
  population gradient, Hessian, noise covariance and minimizer are all exact
  (the minimizer is found by Newton at construction).
* ``scalar_unit``: f(theta) = theta^2 / 2 in dimension one, paired with
  unbounded standard Gaussian additive noise.  Admitted only for the
  lower-bound experiments; its oracle is flagged ``unbounded``.

Noise oracles expose the decomposition F(theta, xi) = grad f(theta) + eta(xi)
+ g(theta, xi) with E[eta] = 0, g(theta*, .) = 0, and (except for the scalar
model) almost-sure bounds ||eta|| <= C1 and sup_theta ||g|| <= C2.  Every draw
is addressable by (data key, step index) so the exact same xi sequence can be
replayed later.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as _gamma_fn
from typing import Callable

import numpy as np

from .rng import derive_key, normals_from_uniforms, stream, uniform_at, uniform_block

__all__ = [
    "ProblemSpec",
    "NoiseOracle",
    "NoiseSample",
    "NoiseBlock",
    "quadratic_problem",
    "logistic_ridge_problem",
    "scalar_unit_problem",
    "truncated_gaussian_oracle",
    "zero_noise_oracle",
    "gaussian_oracle",
    "logistic_data_oracle",
    "objective_value",
    "gradient",
    "hessian",
    "hessian_at_min",
    "remainder_h",
    "sample_noise",
    "noise_block",
    "replay_noise",
]

QUADRATIC = "quadratic"
LOGISTIC_RIDGE = "logistic_ridge"
SCALAR_UNIT = "scalar_unit"

_TRUNC_GAUSS = "trunc_gauss"
_GAUSS = "gauss"
_LOGISTIC_DATA = "logistic_data"
_ZERO = "zero"


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """A strongly convex objective with exact access to its minimizer.

    mu and l1 are global strong-convexity / gradient-Lipschitz moduli; l3
    bounds the Hessian Lipschitz constant on the ball of radius beta_radius
    around the minimizer.
    """

    kind: str
    dim: int
    minimizer: np.ndarray
    mu: float
    l1: float
    l3: float
    beta_radius: float
    a_matrix: np.ndarray | None = None
    atoms: np.ndarray | None = None
    theta_data: np.ndarray | None = None
    ridge: float = 0.0

    def __post_init__(self) -> None:
        if self.minimizer.shape != (self.dim,):
            raise ValueError("minimizer shape does not match dim")
        if not (0 < self.mu <= self.l1):
            raise ValueError(f"need 0 < mu <= L1, got mu={self.mu}, L1={self.l1}")


def quadratic_problem(
    a_matrix: np.ndarray,
    minimizer: np.ndarray | None = None,
    beta_radius: float = 1.0,
) -> ProblemSpec:
    a = np.asarray(a_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("a_matrix must be square")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, abs(a).max())):
        raise ValueError("a_matrix must be symmetric")
    eigs = np.linalg.eigvalsh(a)
    if eigs[0] <= 0:
        raise ValueError("a_matrix must be positive definite")
    d = a.shape[0]
    theta_star = np.zeros(d) if minimizer is None else np.asarray(minimizer, dtype=float)
    return ProblemSpec(
        kind=QUADRATIC,
        dim=d,
        minimizer=theta_star,
        mu=float(eigs[0]),
        l1=float(eigs[-1]),
        l3=0.0,
        beta_radius=float(beta_radius),
        a_matrix=a,
    )


def scalar_unit_problem() -> ProblemSpec:
    """f(theta) = theta^2/2 on the line; the lower-bound model."""
    return ProblemSpec(
        kind=SCALAR_UNIT,
        dim=1,
        minimizer=np.zeros(1),
        mu=1.0,
        l1=1.0,
        l3=0.0,
        beta_radius=1.0,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_ridge_problem(
    dim: int,
    n_atoms: int = 32,
    design_radius: float = 2.0,
    ridge: float = 0.1,
    design_seed: int = 0,
    beta_radius: float = 2.0,
) -> ProblemSpec:
    """Population logistic regression over a finite, bounded design.

    Atoms are drawn once (from ``design_seed``) uniformly in the ball of
    radius ``design_radius``; labels follow a logistic model with a fixed
    ground-truth parameter.  The population minimizer is computed by Newton to
    ~1e-13 gradient norm.  The moduli are exact envelopes: mu = ridge,
    L1 = ridge + lambda_max(mean x x')/4, L3 = mean ||x||^3 * sup|sigma''|.
    """
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    gen = stream(derive_key(design_seed, "logistic-design"))
    raw = gen.standard_normal((n_atoms, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = design_radius * gen.random(n_atoms) ** (1.0 / dim)
    atoms = raw * radii[:, None]
    theta_data = gen.standard_normal(dim)
    theta_data /= np.linalg.norm(theta_data)

    second = atoms.T @ atoms / n_atoms
    l1 = ridge + float(np.linalg.eigvalsh(second)[-1]) / 4.0
    # sup_z |sigma''(z)| = 1/(6*sqrt(3))
    l3 = float(np.mean(np.linalg.norm(atoms, axis=1) ** 3)) / (6.0 * np.sqrt(3.0))

    probs = _sigmoid(atoms @ theta_data)
    theta = np.zeros(dim)
    for _ in range(100):
        s = _sigmoid(atoms @ theta)
        grad = atoms.T @ (s - probs) / n_atoms + ridge * theta
        if np.linalg.norm(grad) < 1e-14:
            break
        hess = (atoms * (s * (1 - s))[:, None]).T @ atoms / n_atoms + ridge * np.eye(dim)
        theta = theta - np.linalg.solve(hess, grad)
    return ProblemSpec(
        kind=LOGISTIC_RIDGE,
        dim=dim,
        minimizer=theta,
        mu=ridge,
        l1=l1,
        l3=l3,
        beta_radius=float(beta_radius),
        atoms=atoms,
        theta_data=theta_data,
        ridge=ridge,
    )


def _check_theta(p: ProblemSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (p.dim,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({p.dim},)")
    return theta


def objective_value(p: ProblemSpec, theta: np.ndarray) -> float:
    theta = _check_theta(p, theta)
    if p.kind == QUADRATIC:
        diff = theta - p.minimizer
        return 0.5 * float(diff @ p.a_matrix @ diff)
    if p.kind == SCALAR_UNIT:
        return 0.5 * float(theta[0] ** 2)
    z = p.atoms @ theta
    probs = _sigmoid(p.atoms @ p.theta_data)
    # log(1 + e^t) evaluated stably for both labels
    log1p_exp = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = probs * (log1p_exp - z) + (1 - probs) * log1p_exp
    return float(np.mean(loss)) + 0.5 * p.ridge * float(theta @ theta)


def gradient(p: ProblemSpec, theta: np.ndarray) -> np.ndarray:
    theta = _check_theta(p, theta)
    if p.kind == QUADRATIC:
        return p.a_matrix @ (theta - p.minimizer)
    if p.kind == SCALAR_UNIT:
        return theta.copy()
    s = _sigmoid(p.atoms @ theta)
    probs = _sigmoid(p.atoms @ p.theta_data)
    return p.atoms.T @ (s - probs) / p.atoms.shape[0] + p.ridge * theta


def hessian(p: ProblemSpec, theta: np.ndarray) -> np.ndarray:
    theta = _check_theta(p, theta)
    if p.kind == QUADRATIC:
        return p.a_matrix.copy()
    if p.kind == SCALAR_UNIT:
        return np.eye(1)
    s = _sigmoid(p.atoms @ theta)
    w = s * (1 - s)
    m = p.atoms.shape[0]
    return (p.atoms * w[:, None]).T @ p.atoms / m + p.ridge * np.eye(p.dim)


def hessian_at_min(p: ProblemSpec) -> np.ndarray:
    return hessian(p, p.minimizer)


def remainder_h(p: ProblemSpec, theta: np.ndarray) -> np.ndarray:
    """Nonlinear gradient remainder grad f(theta) - G (theta - theta*)."""
    theta = _check_theta(p, theta)
    if p.kind in (QUADRATIC, SCALAR_UNIT):
        return np.zeros(p.dim)
    return gradient(p, theta) - hessian_at_min(p) @ (theta - p.minimizer)


# ---------------------------------------------------------------------------
# noise oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseOracle:
    """Sampler for the stochastic-gradient noise of a given problem.

    sigma_xi is the covariance of eta; c1_xi and c2_xi are the almost-sure
    bounds on ||eta|| and sup ||g||; l2 is the Lipschitz constant of g in
    theta.  ``uniforms_per_step`` is the fixed counter budget of one step,
    which pins each xi_k at a deterministic stream offset.
    """

    problem: ProblemSpec
    kind: str
    sigma_xi: np.ndarray
    c1_xi: float
    c2_xi: float
    l2: float
    unbounded: bool
    mult_scale: float = 0.0
    cov_root: np.ndarray | None = None
    atom_probs: np.ndarray | None = None
    atom_sig_star: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.problem.dim

    @property
    def uniforms_per_step(self) -> int:
        if self.kind == _ZERO:
            return 0
        if self.kind == _LOGISTIC_DATA:
            return 2
        d = self.dim
        return d + (d * d if self.mult_scale > 0 else 0)

    def sigma_p(self, p: float) -> float:
        """Upper bound on the p-th norm moment of eta."""
        if p < 2:
            raise ValueError("sigma_p is defined for p >= 2")
        if self.kind == _ZERO:
            return 0.0
        if self.kind == _LOGISTIC_DATA:
            return float(np.sqrt(np.trace(self.sigma_xi))) if p == 2 else self.c1_xi
        if p == 2:
            return float(np.sqrt(np.trace(self.sigma_xi)))
        d = self.dim
        chi = (2.0 ** (p / 2) * _gamma_fn((d + p) / 2) / _gamma_fn(d / 2)) ** (1.0 / p)
        bound = float(np.sqrt(np.linalg.eigvalsh(self.sigma_xi)[-1])) * chi
        return min(self.c1_xi, bound)


@dataclass(frozen=True)
class NoiseSample:
    """One realisation xi with its additive part and multiplicative map."""

    eta: np.ndarray
    oracle: NoiseOracle
    b_matrix: np.ndarray | None = None
    atom_index: int | None = None

    def g_at(self, theta: np.ndarray) -> np.ndarray:
        return _g_value(self.oracle, theta, self.b_matrix, self.atom_index)


@dataclass(frozen=True)
class NoiseBlock:
    """Realisations xi_1..xi_{n-1} laid out for vectorized consumption."""

    eta: np.ndarray  # (n-1, d)
    b: np.ndarray | None = None  # (n-1, d, d) for multiplicative quadratic noise
    atom_index: np.ndarray | None = None  # (n-1,) for logistic data

    def sample(self, oracle: NoiseOracle, k: int) -> NoiseSample:
        """The sample for step index k (1-based)."""
        row = k - 1
        return NoiseSample(
            eta=self.eta[row],
            oracle=oracle,
            b_matrix=None if self.b is None else self.b[row],
            atom_index=None if self.atom_index is None else int(self.atom_index[row]),
        )


def truncated_gaussian_oracle(
    problem: ProblemSpec,
    sigma_base: np.ndarray | float,
    mult_scale: float = 0.0,
    c2_xi: float | None = None,
) -> NoiseOracle:
    """Gaussian eta resampled to ||eta|| <= 6 sqrt(tr Sigma), optional g.

    At a six-sigma radius the rejection probability is ~1e-9 per draw, so the
    truncated law's covariance is reported as the base covariance (the bias is
    orders of magnitude below any Monte Carlo estimate of it).

    With ``mult_scale`` s > 0 the oracle also emits a random matrix B(xi) with
    i.i.d. entries uniform on [-s, s]; for quadratic problems
    g(theta, xi) = clip(B(xi) (theta - theta*)) with the clip enforcing
    ||g|| <= c2_xi.  Projection onto the centered ball is a contraction, so
    L2 = sup||B|| <= s*d is preserved, and g(theta*, .) = 0 exactly.
    """
    d = problem.dim
    sigma = np.asarray(sigma_base, dtype=float)
    if sigma.ndim == 0:
        sigma = float(sigma) * np.eye(d)
    if sigma.shape != (d, d):
        raise ValueError("sigma_base has wrong shape")
    eigs, vecs = np.linalg.eigh(sigma)
    if eigs[0] <= 0:
        raise ValueError("sigma_base must be positive definite")
    root = vecs @ np.diag(np.sqrt(eigs)) @ vecs.T
    c1 = 6.0 * float(np.sqrt(np.trace(sigma)))
    if mult_scale > 0 and problem.kind != QUADRATIC:
        raise ValueError("multiplicative noise is defined for quadratic problems")
    l2 = mult_scale * d
    c2 = 0.0 if mult_scale == 0 else (4.0 * mult_scale * d if c2_xi is None else c2_xi)
    return NoiseOracle(
        problem=problem,
        kind=_TRUNC_GAUSS,
        sigma_xi=sigma,
        c1_xi=c1,
        c2_xi=c2,
        l2=l2,
        unbounded=False,
        mult_scale=mult_scale,
        cov_root=root,
    )


def gaussian_oracle(problem: ProblemSpec, sigma_base: np.ndarray | float = 1.0) -> NoiseOracle:
    """Plain Gaussian additive noise, flagged as violating the a.s. bound."""
    d = problem.dim
    sigma = np.asarray(sigma_base, dtype=float)
    if sigma.ndim == 0:
        sigma = float(sigma) * np.eye(d)
    eigs, vecs = np.linalg.eigh(sigma)
    if eigs[0] <= 0:
        raise ValueError("sigma_base must be positive definite")
    root = vecs @ np.diag(np.sqrt(eigs)) @ vecs.T
    return NoiseOracle(
        problem=problem,
        kind=_GAUSS,
        sigma_xi=sigma,
        c1_xi=np.inf,
        c2_xi=0.0,
        l2=0.0,
        unbounded=True,
        cov_root=root,
    )


def zero_noise_oracle(problem: ProblemSpec) -> NoiseOracle:
    """Deterministic testing hook: eta = 0 and g = 0 for every draw.

    Violates the positive-definiteness the covariance machinery assumes, so
    it is rejected there; SGD runs through it become noiseless gradient
    descent.
    """
    d = problem.dim
    return NoiseOracle(
        problem=problem,
        kind=_ZERO,
        sigma_xi=np.zeros((d, d)),
        c1_xi=0.0,
        c2_xi=0.0,
        l2=0.0,
        unbounded=False,
    )


def logistic_data_oracle(problem: ProblemSpec) -> NoiseOracle:
    """Data noise of the finite-design logistic problem.

    xi = (atom index, label); eta(xi) = F(theta*, xi) and g(theta, xi) =
    F(theta, xi) - F(theta*, xi) - grad f(theta), in which the ridge parts
    cancel, so g is bounded by 2 max||x|| and (max||x||^2)/2-Lipschitz.
    The covariance of eta is exact (finite mixture of label flips).
    """
    if problem.kind != LOGISTIC_RIDGE:
        raise ValueError("logistic_data_oracle requires a logistic_ridge problem")
    atoms = problem.atoms
    m, d = atoms.shape
    probs = _sigmoid(atoms @ problem.theta_data)
    sig_star = _sigmoid(atoms @ problem.minimizer)
    lam_t = problem.ridge * problem.minimizer
    # E[eta eta'] over atom i and label y ~ Bernoulli(p_i); E[eta] = grad f(theta*) = 0
    sigma = np.zeros((d, d))
    for i in range(m):
        mean_dev = sig_star[i] - probs[i]
        second = probs[i] * (1 - probs[i]) + mean_dev**2
        base = atoms[i][:, None] * atoms[i][None, :]
        cross = atoms[i][:, None] * lam_t[None, :]
        sigma += second * base + mean_dev * (cross + cross.T) + np.outer(lam_t, lam_t)
    sigma /= m
    max_norm = float(np.linalg.norm(atoms, axis=1).max())
    c1 = max_norm + problem.ridge * float(np.linalg.norm(problem.minimizer))
    return NoiseOracle(
        problem=problem,
        kind=_LOGISTIC_DATA,
        sigma_xi=sigma,
        c1_xi=c1,
        c2_xi=2.0 * max_norm,
        l2=max_norm**2 / 2.0,
        unbounded=False,
        atom_probs=probs,
        atom_sig_star=sig_star,
    )


# ---------------------------------------------------------------------------
# sampling, replay, evaluation
# ---------------------------------------------------------------------------


def _g_value(
    oracle: NoiseOracle,
    theta: np.ndarray,
    b_matrix: np.ndarray | None,
    atom_index: int | None,
) -> np.ndarray:
    p = oracle.problem
    if oracle.kind == _TRUNC_GAUSS and b_matrix is not None:
        v = b_matrix @ (theta - p.minimizer)
        norm = float(np.linalg.norm(v))
        if norm > oracle.c2_xi:
            v = v * (oracle.c2_xi / norm)
        return v
    if oracle.kind == _LOGISTIC_DATA:
        atoms = p.atoms
        s = _sigmoid(atoms @ theta)
        dev = s - oracle.atom_sig_star
        own = atoms[atom_index] * dev[atom_index]
        return own - atoms.T @ dev / atoms.shape[0]
    return np.zeros(p.dim)


def _eta_from_normals(oracle: NoiseOracle, z: np.ndarray) -> np.ndarray:
    return oracle.cov_root @ z


def _finish_trunc_sample(
    oracle: NoiseOracle, eta: np.ndarray, retry_gen_factory: Callable[[], np.random.Generator]
) -> np.ndarray:
    """Enforce the hard ||eta|| bound; resample from the retry stream if needed."""
    if oracle.unbounded:
        return eta
    if np.linalg.norm(eta) <= oracle.c1_xi:
        return eta
    gen = retry_gen_factory()
    while True:
        z = normals_from_uniforms(gen.random(oracle.dim))
        eta = _eta_from_normals(oracle, z)
        if np.linalg.norm(eta) <= oracle.c1_xi:
            return eta


def sample_noise(oracle: NoiseOracle, gen: np.random.Generator) -> NoiseSample:
    """Draw one xi from an already-open stream (sequential consumption)."""
    d = oracle.dim
    if oracle.kind == _ZERO:
        return NoiseSample(eta=np.zeros(d), oracle=oracle)
    if oracle.kind == _LOGISTIC_DATA:
        u = gen.random(2)
        idx = min(int(u[0] * oracle.atom_probs.shape[0]), oracle.atom_probs.shape[0] - 1)
        y = 1.0 if u[1] < oracle.atom_probs[idx] else 0.0
        eta = oracle.problem.atoms[idx] * (oracle.atom_sig_star[idx] - y)
        eta = eta + oracle.problem.ridge * oracle.problem.minimizer
        assert np.linalg.norm(eta) <= oracle.c1_xi + 1e-12
        return NoiseSample(eta=eta, oracle=oracle, atom_index=idx)
    eta = _eta_from_normals(oracle, normals_from_uniforms(gen.random(d)))
    if not oracle.unbounded:
        while np.linalg.norm(eta) > oracle.c1_xi:
            eta = _eta_from_normals(oracle, normals_from_uniforms(gen.random(d)))
    b = None
    if oracle.mult_scale > 0:
        b = (gen.random((d, d)) * 2.0 - 1.0) * oracle.mult_scale
    return NoiseSample(eta=eta, oracle=oracle, b_matrix=b)


def noise_block(oracle: NoiseOracle, data_key: int, n: int) -> NoiseBlock:
    """All of xi_1..xi_{n-1} for a data key, row k-1 holding xi_k.

    Row k-1 is identical to ``replay_noise(oracle, data_key, k)``: each step
    index owns a fixed span of the key's counter, and the (negligible-rate)
    truncation retries consume a per-index side stream so indices never
    interact.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    d = oracle.dim
    if oracle.kind == _ZERO:
        return NoiseBlock(eta=np.zeros((n - 1, d)))
    u = uniform_block(data_key, n - 1, oracle.uniforms_per_step)
    if oracle.kind == _LOGISTIC_DATA:
        m = oracle.atom_probs.shape[0]
        idx = np.minimum((u[:, 0] * m).astype(np.int64), m - 1)
        y = (u[:, 1] < oracle.atom_probs[idx]).astype(float)
        eta = oracle.problem.atoms[idx] * (oracle.atom_sig_star[idx] - y)[:, None]
        eta = eta + oracle.problem.ridge * oracle.problem.minimizer
        return NoiseBlock(eta=eta, atom_index=idx)
    z = normals_from_uniforms(u[:, :d])
    eta = z @ oracle.cov_root.T
    if not oracle.unbounded:
        bad = np.flatnonzero(np.linalg.norm(eta, axis=1) > oracle.c1_xi)
        for row in bad:
            k = int(row) + 1
            eta[row] = _finish_trunc_sample(
                oracle,
                eta[row],
                lambda k=k: stream(derive_key(data_key, "retry", k)),
            )
    b = None
    if oracle.mult_scale > 0:
        b = (u[:, d:].reshape(n - 1, d, d) * 2.0 - 1.0) * oracle.mult_scale
    return NoiseBlock(eta=eta, b=b)


def replay_noise(oracle: NoiseOracle, data_key: int, k: int) -> NoiseSample:
    """Regenerate exactly the xi_k used by a run with the same data key."""
    if k < 1:
        raise ValueError("step index k must be >= 1")
    d = oracle.dim
    if oracle.kind == _ZERO:
        return NoiseSample(eta=np.zeros(d), oracle=oracle)
    u = uniform_at(data_key, k - 1, oracle.uniforms_per_step)
    if oracle.kind == _LOGISTIC_DATA:
        m = oracle.atom_probs.shape[0]
        idx = min(int(u[0] * m), m - 1)
        y = 1.0 if u[1] < oracle.atom_probs[idx] else 0.0
        eta = oracle.problem.atoms[idx] * (oracle.atom_sig_star[idx] - y)
        eta = eta + oracle.problem.ridge * oracle.problem.minimizer
        return NoiseSample(eta=eta, oracle=oracle, atom_index=idx)
    eta = _eta_from_normals(oracle, normals_from_uniforms(u[:d]))
    eta = _finish_trunc_sample(
        oracle, eta, lambda: stream(derive_key(data_key, "retry", k))
    )
    b = None
    if oracle.mult_scale > 0:
        b = (u[d:].reshape(d, d) * 2.0 - 1.0) * oracle.mult_scale
    return NoiseSample(eta=eta, oracle=oracle, b_matrix=b)
