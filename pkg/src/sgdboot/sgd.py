"""SGD recursion with streaming Polyak-Ruppert averaging and exact replay.

The data stream xi_1..xi_{n-1} is never stored: each index is regenerated on
demand from counter-based substreams of the run's data key (see ``rng``),
which is what lets bootstrap trajectories consume the identical stream at O(1)
memory for any horizon.

``run_sgd`` is the reference single-trajectory loop for any problem kind.
``run_sgd_batch`` steps many replications of a quadratic problem together as
one array; it consumes the same per-replication noise streams and agrees with
the reference loop to floating-point roundoff.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .model import NoiseOracle, ProblemSpec, gradient, noise_block, QUADRATIC, SCALAR_UNIT
from .schedule import StepSchedule, validate_basic

__all__ = ["SgdRun", "SgdTrace", "SgdDivergedError", "run_sgd", "run_sgd_batch", "trace_to_csv"]

_DIVERGENCE_NORM = 1e12


class SgdDivergedError(RuntimeError):
    """Raised when an iterate explodes; carries the offending step index.

    ``replicate`` identifies the diverging trajectory when raised from an
    ensemble (-1 denotes the unweighted main run).
    """

    def __init__(self, step: int, norm: float, replicate: int | None = None):
        where = "" if replicate is None else f" in replicate {replicate}"
        super().__init__(f"iterate diverged at step {step}{where} (norm {norm:.3e})")
        self.step = step
        self.norm = norm
        self.replicate = replicate


@dataclass(frozen=True)
class SgdTrace:
    theta: np.ndarray  # (n, d): theta_0 .. theta_{n-1}
    eta: np.ndarray  # (n-1, d): eta(xi_k), k = 1..n-1
    g: np.ndarray  # (n-1, d): g(theta_{k-1}, xi_k)
    alpha: np.ndarray  # (n,): alpha_0 .. alpha_{n-1}


@dataclass(frozen=True)
class SgdRun:
    n: int
    theta_bar: np.ndarray
    theta_last: np.ndarray
    theta0: np.ndarray
    data_key: int
    trace: SgdTrace | None = None


def run_sgd(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    n: int,
    theta0: np.ndarray,
    data_key: int,
    trace: bool = False,
) -> SgdRun:
    """Run theta_k = theta_{k-1} - alpha_k (grad f + eta_k + g_k) for k=1..n-1.

    The average includes theta_0 (indices 0..n-1).  A basic-admissibility
    failure only warns, so experiments may deliberately violate it.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (problem.dim,):
        raise ValueError("theta0 has wrong shape")
    report = validate_basic(schedule, problem.l1)
    if not report.passed:
        warnings.warn(
            "schedule fails basic admissibility: " + "; ".join(report.failures()),
            stacklevel=2,
        )

    d = problem.dim
    theta = theta0.copy()
    bar = theta0.copy()
    tr_theta = tr_eta = tr_g = None
    if trace:
        tr_theta = np.empty((n, d))
        tr_theta[0] = theta0
        tr_eta = np.empty((n - 1, d))
        tr_g = np.empty((n - 1, d))

    block = noise_block(oracle, data_key, n)
    for k in range(1, n):
        row = k - 1
        sample_g = _g_row(oracle, block, row, theta)
        eta = block.eta[row]
        step = gradient(problem, theta) + eta + sample_g
        theta = theta - schedule.alpha(k) * step
        norm = float(np.linalg.norm(theta))
        if not np.isfinite(norm) or norm > _DIVERGENCE_NORM:
            raise SgdDivergedError(k, norm)
        bar += theta
        if trace:
            tr_theta[k] = theta
            tr_eta[row] = eta
            tr_g[row] = sample_g
    bar /= n

    run_trace = None
    if trace:
        run_trace = SgdTrace(
            theta=tr_theta, eta=tr_eta, g=tr_g, alpha=schedule.alphas(n)
        )
    return SgdRun(
        n=n,
        theta_bar=bar,
        theta_last=theta,
        theta0=theta0,
        data_key=data_key,
        trace=run_trace,
    )


def _g_row(oracle: NoiseOracle, block, row: int, theta: np.ndarray) -> np.ndarray:
    sample = block.sample(oracle, row + 1)
    return sample.g_at(theta)


def run_sgd_batch(
    problem: ProblemSpec,
    oracle: NoiseOracle,
    schedule: StepSchedule,
    n: int,
    theta0: np.ndarray,
    data_keys: list[int],
    collect_sq_err_at: tuple[int, ...] = (),
    max_chunk_floats: int = 32_000_000,
) -> tuple[np.ndarray, np.ndarray, dict[int, np.ndarray]]:
    """Step all replications of a quadratic/scalar problem as one array.

    Returns (theta_bar (R, d), theta_last (R, d), sq_err) where sq_err maps a
    requested k to the (R,) array of ||theta_k - theta*||^2.  Replications are
    processed in chunks so the pregenerated noise stays within
    ``max_chunk_floats`` doubles.
    """
    if problem.kind not in (QUADRATIC, SCALAR_UNIT):
        raise ValueError("batch driver supports quadratic-family problems only")
    theta0 = np.asarray(theta0, dtype=float)
    d = problem.dim
    reps = len(data_keys)
    a = problem.a_matrix if problem.kind == QUADRATIC else np.eye(1)
    star = problem.minimizer
    alphas = schedule.alphas(n)
    per_rep = (n - 1) * d * (1 + (d if oracle.mult_scale > 0 else 0))
    chunk = max(1, min(reps, max_chunk_floats // max(per_rep, 1)))

    bars = np.empty((reps, d))
    lasts = np.empty((reps, d))
    sq_err = {k: np.empty(reps) for k in collect_sq_err_at}
    for lo in range(0, reps, chunk):
        hi = min(lo + chunk, reps)
        eta = np.empty((hi - lo, n - 1, d))
        bmats = np.empty((hi - lo, n - 1, d, d)) if oracle.mult_scale > 0 else None
        for i, key in enumerate(data_keys[lo:hi]):
            block = noise_block(oracle, key, n)
            eta[i] = block.eta
            if bmats is not None:
                bmats[i] = block.b
        theta = np.tile(theta0, (hi - lo, 1))
        bar = theta.copy()
        if 0 in sq_err:
            sq_err[0][lo:hi] = np.sum((theta - star) ** 2, axis=1)
        for k in range(1, n):
            diff = theta - star
            step = diff @ a + eta[:, k - 1]
            if bmats is not None:
                gv = np.einsum("rij,rj->ri", bmats[:, k - 1], diff)
                scale = oracle.c2_xi / np.maximum(
                    np.sqrt(np.einsum("ri,ri->r", gv, gv)), oracle.c2_xi
                )
                gv *= scale[:, None]
                step += gv
            theta = theta - alphas[k] * step
            worst = float(np.max(np.abs(theta)))
            if not np.isfinite(worst) or worst > _DIVERGENCE_NORM:
                raise SgdDivergedError(k, worst)
            bar += theta
            if k in sq_err:
                sq_err[k][lo:hi] = np.sum((theta - star) ** 2, axis=1)
        bars[lo:hi] = bar / n
        lasts[lo:hi] = theta
    return bars, lasts, sq_err


def trace_to_csv(run: SgdRun) -> bytes:
    """Trace export: one row per k with theta coordinates and alpha_k."""
    if run.trace is None:
        raise ValueError("run has no trace")
    d = run.trace.theta.shape[1]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["k"] + [f"theta{j}" for j in range(d)] + ["alpha_k"])
    for k in range(run.n):
        writer.writerow(
            [k]
            + [repr(float(v)) for v in run.trace.theta[k]]
            + [repr(float(run.trace.alpha[k]))]
        )
    return buf.getvalue().encode()
