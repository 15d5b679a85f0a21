"""Polynomially decaying step-size schedule and its admissibility checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StepSchedule", "ValidationReport", "validate_basic", "validate_bootstrap"]


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes alpha_k = c0 / (k0 + k)**gamma with gamma in (1/2, 1).

    k0 may be fractional; validators report the minimal admissible k0 instead
    of silently adjusting, so experiments can deliberately violate it.
    """

    c0: float
    k0: float
    gamma: float

    def __post_init__(self) -> None:
        if not self.c0 > 0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        if not self.k0 >= 1:
            raise ValueError(f"k0 must be >= 1, got {self.k0}")
        if not 0.5 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (1/2, 1), got {self.gamma}")

    def alpha(self, k: int | np.ndarray) -> float | np.ndarray:
        return self.c0 / (self.k0 + k) ** self.gamma

    def alphas(self, n: int) -> np.ndarray:
        """alpha_0 .. alpha_{n-1} as an array."""
        return self.c0 / (self.k0 + np.arange(n, dtype=float)) ** self.gamma


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[tuple[str, bool, str], ...]
    min_k0: float | None = None

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, ok, detail in self.checks if not ok]


def validate_basic(s: StepSchedule, l1: float) -> ValidationReport:
    """Admissibility for plain averaged SGD: 2*c0*L1 <= 1 and gamma in (1/2, 1)."""
    lhs = 2.0 * s.c0 * l1
    checks = (
        (
            "2*c0*L1 <= 1",
            lhs <= 1.0,
            f"2*c0*L1 = {lhs:.6g}",
        ),
        (
            "gamma in (1/2, 1)",
            0.5 < s.gamma < 1.0,
            f"gamma = {s.gamma:.6g}",
        ),
    )
    return ValidationReport(checks=checks)


def validate_bootstrap(
    s: StepSchedule,
    mu: float,
    l1: float,
    l2: float,
    wmin: float,
    wmax: float,
) -> ValidationReport:
    """Admissibility for the weighted (bootstrap) recursion.

    Checks 3*c0*Wmax^2*(L1^2+L2^2) <= 1 and the k0 floor
    max((2*gamma/(mu*c0*Wmin))^(1/(1-gamma)), (1/(mu*Wmin))^(1/gamma)).
    The floor is returned as a diagnostic; it is typically astronomically
    conservative at desk scale.
    """
    if not (0 < wmin <= wmax):
        raise ValueError(f"need 0 < wmin <= wmax, got ({wmin}, {wmax})")
    lhs = 3.0 * s.c0 * wmax**2 * (l1**2 + l2**2)
    k0_floor = max(
        (2.0 * s.gamma / (mu * s.c0 * wmin)) ** (1.0 / (1.0 - s.gamma)),
        (1.0 / (mu * wmin)) ** (1.0 / s.gamma),
    )
    checks = (
        (
            "3*c0*Wmax^2*(L1^2+L2^2) <= 1",
            lhs <= 1.0,
            f"3*c0*Wmax^2*(L1^2+L2^2) = {lhs:.6g}",
        ),
        (
            "k0 >= max((2*gamma/(mu*c0*Wmin))^(1/(1-gamma)), (1/(mu*Wmin))^(1/gamma))",
            s.k0 >= k0_floor,
            f"k0 = {s.k0:.6g}, minimal admissible k0 = {k0_floor:.6g}",
        ),
    )
    return ValidationReport(checks=checks, min_k0=k0_floor)
