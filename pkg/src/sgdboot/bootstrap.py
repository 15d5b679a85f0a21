"""Multiplier bootstrap: weight laws, perturbed trajectories, confidence sets.

Bootstrap trajectories rerun the SGD recursion with each step multiplied by an
i.i.d. weight w_k (mean 1, variance 1, bounded away from 0), consuming exactly
the same data stream xi_1..xi_{n-1} as the main run.  The spread of the roots
sqrt(n)(bar theta^b - bar theta) across replicates estimates the sampling law
of sqrt(n)(bar theta - theta*).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    NoiseOracle,
    ProblemSpec,
    QUADRATIC,
    SCALAR_UNIT,
    gradient,
    noise_block,
)
from .rng import derive_key, stream
from .schedule import StepSchedule, validate_bootstrap
from .sgd import SgdDivergedError, _DIVERGENCE_NORM, run_sgd
from .linearization import QFamily

__all__ = [
    "BoundedWeightLaw",
    "BootstrapEnsemble",
    "ConfidenceRegion",
    "make_weight_law",
    "default_weight_law",
    "unit_weight_law",
    "run_bootstrap_replicate",
    "build_ensemble",
    "confidence_region",
    "sigma_n_boot",
]


@dataclass(frozen=True)
class BoundedWeightLaw:
    """Shifted-scaled Beta law W = a + b X with E[W] = Var[W] = 1, W in [a, a+b].

    The degenerate variant (W = 1 a.s.) exists purely as a testing hook: it
    collapses every perturbation and fails the variance-one requirement, so
    ``validate()`` rejects it.
    """

    alpha_shape: float
    beta_shape: float
    a: float
    b: float
    wmin: float
    wmax: float
    degenerate: bool = False

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        if self.degenerate:
            return np.ones(size)
        return self.a + self.b * gen.beta(self.alpha_shape, self.beta_shape, size=size)

    def validate(self) -> None:
        if self.degenerate:
            raise ValueError("degenerate unit-weight law has variance 0, not 1")
        if self.wmin <= 0:
            raise ValueError("weight law must be positive")


def make_weight_law(alpha_shape: float, beta_shape: float) -> BoundedWeightLaw:
    """Solve a, b from the Beta moments; requires alpha+beta+1 < beta/alpha."""
    if alpha_shape <= 0 or beta_shape <= 0:
        raise ValueError("Beta shape parameters must be positive")
    mean_x = alpha_shape / (alpha_shape + beta_shape)
    var_x = (
        alpha_shape
        * beta_shape
        / ((alpha_shape + beta_shape) ** 2 * (alpha_shape + beta_shape + 1.0))
    )
    b = 1.0 / math.sqrt(var_x)
    a = 1.0 - mean_x * b
    if a <= 0:
        raise ValueError(
            "invalid weight-law parameters: positivity needs "
            f"alpha+beta+1 < beta/alpha, got {alpha_shape + beta_shape + 1:.6g} "
            f">= {beta_shape / alpha_shape:.6g}"
        )
    return BoundedWeightLaw(
        alpha_shape=alpha_shape,
        beta_shape=beta_shape,
        a=a,
        b=b,
        wmin=a,
        wmax=a + b,
    )


def default_weight_law() -> BoundedWeightLaw:
    """Beta(0.5, 2) shifted/scaled: Wmax ~ 4.74, comfortably positive."""
    return make_weight_law(0.5, 2.0)


def unit_weight_law() -> BoundedWeightLaw:
    return BoundedWeightLaw(
        alpha_shape=float("nan"),
        beta_shape=float("nan"),
        a=1.0,
        b=0.0,
        wmin=1.0,
        wmax=1.0,
        degenerate=True,
    )


@dataclass(frozen=True)
class BootstrapEnsemble:
    """M bootstrap roots sqrt(n)(bar theta^b_j - bar theta), shared data key."""

    m: int
    roots: np.ndarray  # (m, d)
    data_key: int
    weight_keys: tuple[int, ...]
    theta_bar: np.ndarray
    n: int


@dataclass(frozen=True)
class ConfidenceRegion:
    shape: str  # "norm_ball" | "coordinate_box"
    center: np.ndarray
    level: float
    radius: float | None = None
    halfwidths: np.ndarray | None = None

    def contains(self, point: np.ndarray) -> bool:
        point = np.asarray(point, dtype=float)
        if self.shape == "norm_ball":
            return bool(np.linalg.norm(point - self.center) <= self.radius)
        return bool(np.all(np.abs(point - self.center) <= self.halfwidths))

    def as_record(self) -> dict:
        rec = {"shape": self.shape, "level": self.level, "center": self.center.tolist()}
        if self.shape == "norm_ball":
            rec["radius"] = self.radius
        else:
            rec["halfwidths"] = self.halfwidths.tolist()
        return rec


def run_bootstrap_replicate(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    n: int,
    theta0: np.ndarray,
    data_key: int,
    law: BoundedWeightLaw,
    weight_key: int,
    theta_bar: np.ndarray | None = None,
) -> np.ndarray:
    """One perturbed trajectory; returns the root sqrt(n)(bar theta^b - bar theta).

    theta_bar is recomputed from the same data key when not supplied.  The
    weight stream is consumed sequentially from ``weight_key``; the data
    stream is replayed per index, so replicates are order-independent.
    """
    _warn_if_inadmissible(problem, oracle, schedule, law)
    if theta_bar is None:
        theta_bar = run_sgd(problem, oracle, schedule, n, theta0, data_key).theta_bar
    theta0 = np.asarray(theta0, dtype=float)
    block = noise_block(oracle, data_key, n)
    wgen = stream(weight_key)
    weights = law.sample(wgen, n - 1)
    theta = theta0.copy()
    bar = theta0.copy()
    for k in range(1, n):
        sample = block.sample(oracle, k)
        step = gradient(problem, theta) + sample.eta + sample.g_at(theta)
        theta = theta - schedule.alpha(k) * weights[k - 1] * step
        norm = float(np.linalg.norm(theta))
        if not np.isfinite(norm) or norm > _DIVERGENCE_NORM:
            raise SgdDivergedError(k, norm)
        bar += theta
    bar /= n
    return math.sqrt(n) * (bar - theta_bar)


def _warn_if_inadmissible(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    law: BoundedWeightLaw,
) -> None:
    report = validate_bootstrap(
        schedule, problem.mu, problem.l1, oracle.l2, law.wmin, law.wmax
    )
    if not report.passed:
        warnings.warn(
            "weighted recursion fails bootstrap admissibility: "
            + "; ".join(report.failures()),
            stacklevel=3,
        )


def _ensemble_batch_quadratic(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    n: int,
    theta0: np.ndarray,
    data_key: int,
    law: BoundedWeightLaw,
    weight_keys: list[int],
) -> tuple[np.ndarray, np.ndarray]:
    """All replicates plus the unweighted main run stepped as one (m+1, d) array."""
    m = len(weight_keys)
    d = problem.dim
    a = problem.a_matrix if problem.kind == QUADRATIC else np.eye(1)
    star = problem.minimizer
    block = noise_block(oracle, data_key, n)
    scaled_w = np.empty((n - 1, m + 1))
    scaled_w[:, 0] = 1.0
    for j, key in enumerate(weight_keys):
        scaled_w[:, j + 1] = law.sample(stream(key), n - 1)
    scaled_w *= schedule.alphas(n)[1:, None]  # alpha_k w_k, row k-1
    theta = np.tile(np.asarray(theta0, dtype=float), (m + 1, 1))
    bar = theta.copy()
    mult = oracle.mult_scale > 0
    c2 = oracle.c2_xi
    for k in range(1, n):
        diff = theta - star
        step = diff @ a
        step += block.eta[k - 1]
        if mult:
            gv = diff @ block.b[k - 1].T
            # clip to the ||g|| <= C2 ball without branching; the scale is
            # exactly 1.0 whenever the bound is slack
            scale = c2 / np.maximum(np.sqrt(np.einsum("ri,ri->r", gv, gv)), c2)
            gv *= scale[:, None]
            step += gv
        step *= scaled_w[k - 1][:, None]
        theta = theta - step
        worst = float(np.max(np.abs(theta)))
        if not np.isfinite(worst) or worst > _DIVERGENCE_NORM:
            per_row = np.max(np.abs(theta), axis=1)
            bad = np.flatnonzero(~np.isfinite(per_row) | (per_row > _DIVERGENCE_NORM))
            raise SgdDivergedError(k, worst, replicate=int(bad[0]) - 1)
        bar += theta
    bar /= n
    roots = math.sqrt(n) * (bar[1:] - bar[0])
    return roots, bar[0]


def build_ensemble(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    n: int,
    theta0: np.ndarray,
    data_key: int,
    law: BoundedWeightLaw,
    m: int,
    weight_seed: int | None = None,
    threads: int = 1,
) -> BootstrapEnsemble:
    """M replicates with weight keys derived as substream(weight_seed, j).

    Quadratic-family problems run through the vectorized batch path (identical
    for any thread count); other problems fall back to per-replicate loops.
    Results depend only on (data_key, weight_seed, m), never on scheduling.
    """
    if m < 2:
        raise ValueError("need m >= 2 replicates")
    _warn_if_inadmissible(problem, oracle, schedule, law)
    if weight_seed is None:
        weight_seed = derive_key(data_key, "weights")
    weight_keys = [derive_key(weight_seed, "w", j) for j in range(1, m + 1)]
    if problem.kind in (QUADRATIC, SCALAR_UNIT):
        roots, theta_bar = _ensemble_batch_quadratic(
            problem, oracle, schedule, n, theta0, data_key, law, weight_keys
        )
    else:
        base = run_sgd(problem, oracle, schedule, n, theta0, data_key)
        theta_bar = base.theta_bar
        roots = np.empty((m, problem.dim))
        for j, key in enumerate(weight_keys):
            try:
                roots[j] = run_bootstrap_replicate(
                    problem, oracle, schedule, n, theta0, data_key, law, key, theta_bar
                )
            except SgdDivergedError as err:
                raise SgdDivergedError(err.step, err.norm, replicate=j) from err
    return BootstrapEnsemble(
        m=m,
        roots=roots,
        data_key=data_key,
        weight_keys=tuple(weight_keys),
        theta_bar=theta_bar,
        n=n,
    )


def _order_stat_index(level: float, m: int) -> int:
    """Right-continuous empirical quantile: order statistic ceil(level*m)."""
    idx = math.ceil(level * m)
    return min(max(idx, 1), m)


def confidence_region(
    ensemble: BootstrapEnsemble, shape: str, level: float
) -> ConfidenceRegion:
    """Quantile of the bootstrap roots, scaled back by 1/sqrt(n).

    norm_ball: radius = level-quantile of ||root||; coordinate_box: symmetric
    per-coordinate quantile of |root_i|.  No interpolation (deterministic
    order statistics); level 1.0 clamps to the maximum.
    """
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    if ensemble.m == 0 or ensemble.roots.shape[0] == 0:
        raise ValueError("empty ensemble")
    if ensemble.m < 50:
        warnings.warn(f"only m = {ensemble.m} replicates; quantiles will be coarse", stacklevel=2)
    idx = _order_stat_index(level, ensemble.m) - 1
    scale = math.sqrt(ensemble.n)
    if shape == "norm_ball":
        norms = np.sort(np.linalg.norm(ensemble.roots, axis=1), kind="stable")
        return ConfidenceRegion(
            shape=shape,
            center=ensemble.theta_bar.copy(),
            level=level,
            radius=float(norms[idx]) / scale,
        )
    if shape == "coordinate_box":
        halves = np.sort(np.abs(ensemble.roots), axis=0, kind="stable")[idx] / scale
        return ConfidenceRegion(
            shape=shape,
            center=ensemble.theta_bar.copy(),
            level=level,
            halfwidths=halves,
        )
    raise ValueError(f"unknown region shape {shape!r}")


def sigma_n_boot(qf: QFamily, oracle: NoiseOracle, data_key: int) -> np.ndarray:
    """Bootstrap covariance n^{-1} sum_i Q_i eta_i eta_i' Q_i' from replayed noise."""
    if oracle.dim != qf.dim:
        raise ValueError("oracle and QFamily dimensions differ")
    block = noise_block(oracle, data_key, qf.n)
    v = np.einsum("kij,kj->ki", qf.q[1:], block.eta)
    out = v.T @ v / qf.n
    return 0.5 * (out + out.T)
