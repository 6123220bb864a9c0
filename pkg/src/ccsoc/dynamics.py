"""Discrete LTI dynamics, horizon concatenation and the CWH rendezvous model.

State for the CWH model is ``[x, y, z, vx, vy, vz]`` in the chief's local
frame (x radial, y along-track, z cross-track), metres and metres/second.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class DimensionError(ValueError):
    """Array shapes do not agree with the system or horizon."""


@dataclass(frozen=True)
class LtiSystem:
    """x(k+1) = A x(k) + B u(k) + w(k)."""

    A: np.ndarray
    B: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0] or B.shape[1] < 1:
            raise DimensionError(f"B must have {A.shape[0]} rows, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class VehicleState:
    id: int
    x0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())


@dataclass(frozen=True)
class ConcatenatedDynamics:
    """Horizon-stacked maps so that x(k) = A^k x0 + C(k) U + D(k) W.

    ``C[k]`` and ``D[k]`` are stored for k = 0..N, with ``C[0]`` and ``D[0]``
    all zero so that indexing by the time step reads naturally.
    """

    system: LtiSystem
    N: int
    powers: np.ndarray  # (N+1, n, n)
    C: np.ndarray  # (N+1, n, N*m)
    D: np.ndarray  # (N+1, n, N*n)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @cached_property
    def C_stack(self) -> np.ndarray:
        """Rows of C(1)..C(N) stacked, shape (N*n, N*m)."""
        return self.C[1:].reshape(self.N * self.n, self.N * self.m)

    @cached_property
    def D_stack(self) -> np.ndarray:
        return self.D[1:].reshape(self.N * self.n, self.N * self.n)

    @cached_property
    def A_stack(self) -> np.ndarray:
        return self.powers[1:].reshape(self.N * self.n, self.n)

    def state(self, k: int, x0, U, W=None) -> np.ndarray:
        if not 0 <= k <= self.N:
            raise DimensionError(f"time step {k} outside 0..{self.N}")
        x0 = np.asarray(x0, dtype=float).ravel()
        U = np.asarray(U, dtype=float).ravel()
        if x0.size != self.n or U.size != self.N * self.m:
            raise DimensionError(f"expected x0 of length {self.n} and U of length {self.N * self.m}")
        x = self.powers[k] @ x0 + self.C[k] @ U
        if W is not None:
            W = np.asarray(W, dtype=float).ravel()
            if W.size != self.N * self.n:
                raise DimensionError(f"expected W of length {self.N * self.n}")
            x = x + self.D[k] @ W
        return x


def concatenate(system: LtiSystem, N: int) -> ConcatenatedDynamics:
    if N < 1:
        raise DimensionError(f"horizon must be >= 1, got {N}")
    n, m = system.n, system.m
    powers = np.empty((N + 1, n, n))
    powers[0] = np.eye(n)
    for k in range(1, N + 1):
        powers[k] = system.A @ powers[k - 1]
    C = np.zeros((N + 1, n, N * m))
    D = np.zeros((N + 1, n, N * n))
    for k in range(1, N + 1):
        for t in range(k):
            # input/disturbance applied at step t reaches x(k) through A^(k-1-t)
            Ap = powers[k - 1 - t]
            C[k, :, t * m:(t + 1) * m] = Ap @ system.B
            D[k, :, t * n:(t + 1) * n] = Ap
    return ConcatenatedDynamics(system=system, N=N, powers=powers, C=C, D=D)


def simulate(system: LtiSystem, x0, U, W=None) -> np.ndarray:
    """Step-by-step recursion; returns states x(0)..x(N) as rows."""
    n, m = system.n, system.m
    U = np.asarray(U, dtype=float).ravel()
    N = U.size // m
    if U.size != N * m:
        raise DimensionError("U length is not a multiple of m")
    W = np.zeros(N * n) if W is None else np.asarray(W, dtype=float).ravel()
    if W.size != N * n:
        raise DimensionError(f"W must have length {N * n}")
    xs = np.empty((N + 1, n))
    xs[0] = np.asarray(x0, dtype=float)
    for k in range(N):
        xs[k + 1] = system.A @ xs[k] + system.B @ U[k * m:(k + 1) * m] + W[k * n:(k + 1) * n]
    return xs


def mean_trajectory(dyn: ConcatenatedDynamics, x0, U, w_mean=None) -> np.ndarray:
    """States x(1)..x(N) under the mean disturbance, shape (N, n)."""
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float).ravel()
    if x0.shape != (dyn.n,) or U.size != dyn.N * dyn.m:
        raise DimensionError("x0 or U has the wrong size")
    X = dyn.A_stack @ x0 + dyn.C_stack @ U
    if w_mean is not None:
        w_mean = np.asarray(w_mean, dtype=float).ravel()
        if w_mean.size != dyn.N * dyn.n:
            raise DimensionError("disturbance mean has the wrong size")
        X = X + dyn.D_stack @ w_mean
    return X.reshape(dyn.N, dyn.n)


# --- Clohessy-Wiltshire-Hill ------------------------------------------------

MU_EARTH = 398600.4418  # km^3/s^2
GEO_RADIUS = 42164.14  # km


def cwh_continuous(rate: float) -> np.ndarray:
    n2 = rate * rate
    Ac = np.zeros((6, 6))
    Ac[:3, 3:] = np.eye(3)
    Ac[3, 0] = 3.0 * n2
    Ac[3, 4] = 2.0 * rate
    Ac[4, 3] = -2.0 * rate
    Ac[5, 2] = -n2
    return Ac


def cwh_stm(rate: float, t: float) -> np.ndarray:
    """Closed-form CWH state transition matrix over elapsed time ``t``."""
    nt = rate * t
    s, c = np.sin(nt), np.cos(nt)
    omc = 2.0 * np.sin(0.5 * nt) ** 2  # 1 - cos(nt) without cancellation
    n = rate
    return np.array([
        [1 + 3 * omc, 0, 0, s / n, 2 * omc / n, 0],
        [6 * (s - nt), 1, 0, -2 * omc / n, (4 * s - 3 * nt) / n, 0],
        [0, 0, c, 0, 0, s / n],
        [3 * n * s, 0, 0, c, 2 * s, 0],
        [-6 * n * omc, 0, 0, -2 * s, 1 - 4 * omc, 0],
        [0, 0, -n * s, 0, 0, c],
    ])


def orbital_rate(radius_km: float, mu: float = MU_EARTH) -> float:
    return float(np.sqrt(mu / radius_km**3))


def cwh_system(orbital_radius: float = GEO_RADIUS, grav_parameter: float = MU_EARTH,
               dt: float = 60.0) -> LtiSystem:
    """Impulsive-thrust discretization of the CWH equations.

    The input is a velocity change applied at the start of each step and then
    carried through the exact transition matrix, so B = Phi(dt) [0; I3].
    Spacecraft mass is normalized to 1.
    """
    if orbital_radius <= 0 or grav_parameter <= 0 or dt <= 0:
        raise ValueError("radius, gravitational parameter and dt must be positive")
    Phi = cwh_stm(orbital_rate(orbital_radius, grav_parameter), dt)
    return LtiSystem(A=Phi, B=Phi[:, 3:].copy(), dt=dt)


@dataclass(frozen=True)
class CircularElements:
    """Circular-orbit elements; angles in degrees, radius in km."""

    radius_km: float
    inclination_deg: float = 0.0
    raan_deg: float = 0.0
    arg_perigee_deg: float = 0.0
    true_anomaly_deg: float = 0.0


def relative_state_from_elements(chief: CircularElements, delta: CircularElements,
                                 mu: float = MU_EARTH) -> np.ndarray:
    """First-order local-frame state of a deputy given element offsets.

    Both orbits are circular. ``delta`` holds deputy-minus-chief element
    differences. Returns metres and metres/second.
    """
    R = chief.radius_km * 1e3
    rate = orbital_rate(chief.radius_km, mu)
    inc = np.deg2rad(chief.inclination_deg)
    u = np.deg2rad(chief.arg_perigee_deg + chief.true_anomaly_deg)
    dR = delta.radius_km * 1e3
    di = np.deg2rad(delta.inclination_deg)
    dO = np.deg2rad(delta.raan_deg)
    du = np.deg2rad(delta.arg_perigee_deg + delta.true_anomaly_deg)
    x = dR
    y = R * (du + np.cos(inc) * dO)
    z = R * (np.sin(u) * di - np.cos(u) * np.sin(inc) * dO)
    vx = 0.0
    vy = -1.5 * rate * dR
    vz = R * rate * (np.cos(u) * di + np.sin(u) * np.sin(inc) * dO)
    return np.array([x, y, z, vx, vy, vz])
