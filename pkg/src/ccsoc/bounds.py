"""Tail-probability algebra for sample-statistics chance constraints.

For N_s i.i.d. samples with (biased, divisor N_s) sample mean m and standard
deviation s, a fresh draw x satisfies

    P(x - m >= lam * s) <= f(lam) = (sqrt(N*) + lam)^2 / (lam^2 N_s + (sqrt(N*) + lam)^2)

with N* = N_s + 1. The same bound holds for the lower tail. ``CantelliBound``
is the known-moment counterpart 1 / (lam^2 + 1) that f converges to as
N_s grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

LAMBDA_CLAMP = 1e8
INV_SQRT3 = 1.0 / math.sqrt(3.0)


class RiskTooSmallForSampleSize(ValueError):
    """A violation probability is at or below the 1/(N_s+1) floor.

    No finite multiplier achieves it with the available sample count.
    """

    def __init__(self, omega: float, n_samples: int, what: str = "constraint"):
        self.omega = float(omega)
        self.n_samples = int(n_samples)
        self.min_omega = 1.0 / (n_samples + 1)
        # smallest N_s whose floor sits strictly below omega
        self.suggested_samples = max(2, math.floor(1.0 / omega - 1.0) + 1) if omega > 0 else None
        super().__init__(
            f"risk {omega:.6g} for {what} is not above the floor 1/(N_s+1) = "
            f"{self.min_omega:.6g} with N_s = {n_samples}; need N_s >= "
            f"{self.suggested_samples} (more for a finite multiplier)"
        )


@dataclass(frozen=True)
class SampleBound:
    """Tail bound built from N_s samples (no Bessel correction)."""

    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError(f"the bound needs N_s >= 2, got {self.n_samples}")

    @property
    def n_star(self) -> int:
        return self.n_samples + 1

    @property
    def floor(self) -> float:
        """Limit of f as lam -> infinity."""
        return 1.0 / self.n_star

    def f(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0):
            raise ValueError("lambda must be positive")
        a = (math.sqrt(self.n_star) + lam) ** 2
        out = a / (lam**2 * self.n_samples + a)
        return float(out) if out.ndim == 0 else out

    def lambda_of_omega(self, omega: float) -> float:
        if not omega < 1:
            raise ValueError(f"risk must be below 1, got {omega}")
        den = math.sqrt(self.n_samples * omega) - math.sqrt(1.0 - omega)
        if omega <= self.floor or den <= 0:
            raise RiskTooSmallForSampleSize(omega, self.n_samples)
        return math.sqrt(self.n_star * (1.0 - omega)) / den

    def theta(self) -> float:
        return theta(self.n_samples)

    def convexity_threshold(self) -> float:
        return self.theta()


@dataclass(frozen=True)
class CantelliBound:
    """One-sided Chebyshev bound with known mean and standard deviation."""

    floor: float = 0.0

    def f(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0):
            raise ValueError("lambda must be positive")
        out = 1.0 / (lam**2 + 1.0)
        return float(out) if out.ndim == 0 else out

    def lambda_of_omega(self, omega: float) -> float:
        return cantelli_lambda(omega)

    def convexity_threshold(self) -> float:
        # (1 + lam^2)^-1 has second derivative (6 lam^2 - 2)/(1 + lam^2)^3
        return INV_SQRT3


def f_lambda(bound: SampleBound | int, lam):
    if not isinstance(bound, SampleBound):
        bound = SampleBound(int(bound))
    return bound.f(lam)


def lambda_of_omega(bound: SampleBound | int, omega: float) -> float:
    if not isinstance(bound, SampleBound):
        bound = SampleBound(int(bound))
    return bound.lambda_of_omega(omega)


def _cubic(lam: float, n_star: float) -> float:
    return 2.0 / math.sqrt(n_star) * lam**3 + 3.0 * lam**2 - 1.0


def theta(n_samples: int) -> float:
    """Positive inflection point of f; f is convex for lam >= theta."""
    if n_samples < 2:
        raise ValueError("N_s must be >= 2")
    ns = float(n_samples)
    n_star = ns + 1.0
    val = math.sqrt(n_star) * (math.cos(math.acos(-(ns - 1.0) / n_star) / 3.0) - 0.5)
    if abs(_cubic(val, n_star)) <= 1e-10:
        return val
    # cubic is increasing on lam > 0 with value -1 at 0 and positive at 1/sqrt(3)
    return brentq(_cubic, 0.0, INV_SQRT3, args=(n_star,), xtol=1e-15, rtol=4 * np.finfo(float).eps)


def cubic_residual(n_samples: int, lam: float) -> float:
    return _cubic(lam, n_samples + 1.0)


def min_samples_target(total_halfspaces: int, alpha: float) -> int:
    """Necessary (not sufficient) sample count for a halfspace group.

    Every halfspace contributes at least 1/(N_s+1) to the risk budget.
    """
    if total_halfspaces < 1 or not 0 < alpha < 1:
        raise ValueError("need total_halfspaces >= 1 and alpha in (0, 1)")
    need = math.ceil(total_halfspaces / alpha - 1.0 - 1e-9)
    return max(2, need)


def cantelli_lambda(omega: float) -> float:
    if not 0 < omega < 1:
        raise ValueError(f"risk must lie in (0, 1), got {omega}")
    return math.sqrt((1.0 - omega) / omega)


def scenario_sample_count(alpha: float, confidence: float, n_variables: int) -> int:
    """Sample count N_s >= (2/alpha)(ln(1/beta) + N_o) for the scenario approach."""
    if not 0 < alpha < 1 or not 0 < confidence < 1 or n_variables < 1:
        raise ValueError("need alpha, confidence in (0, 1) and n_variables >= 1")
    return math.ceil(2.0 / alpha * (math.log(1.0 / confidence) + n_variables))


def lambda_near_floor(bound: SampleBound, rel_gap: float = 0.04) -> float:
    """Smallest lam with f(lam) <= (1 + rel_gap) * floor."""
    target = (1.0 + rel_gap) * bound.floor
    hi = 1.0
    while bound.f(hi) > target:
        hi *= 2.0
        if hi > LAMBDA_CLAMP:
            return LAMBDA_CLAMP
    lo = hi / 2.0
    return brentq(lambda x: bound.f(x) - target, lo, hi, xtol=1e-10)
