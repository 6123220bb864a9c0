"""Problem instance: vehicles, horizon, constraint groups and risk thresholds."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dynamics import ConcatenatedDynamics, DimensionError, LtiSystem, VehicleState, concatenate

RISK_MODES = ("uniform", "pwl")


@dataclass(frozen=True)
class TargetSetConstraint:
    """Polytope {x : G x <= h} that vehicle ``vehicle`` must occupy at step ``k``."""

    vehicle: int
    k: int
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if G.shape[0] < 1 or G.shape[0] != h.size:
            raise DimensionError(f"target set needs matching G rows and h, got {G.shape} and {h.shape}")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n_halfspaces(self) -> int:
        return self.G.shape[0]


def box_target(vehicle: int, k: int, center, half_width) -> TargetSetConstraint:
    """Axis-aligned box as the 2n halfspaces I_n (x) [1; -1]."""
    center = np.asarray(center, dtype=float).ravel()
    half = np.broadcast_to(np.asarray(half_width, dtype=float), center.shape)
    n = center.size
    G = np.kron(np.eye(n), np.array([[1.0], [-1.0]]))
    h = np.empty(2 * n)
    h[0::2] = center + half
    h[1::2] = -(center - half)
    return TargetSetConstraint(vehicle, k, G, h)


@dataclass(frozen=True)
class Obstacle:
    """Known object at positions o(1..N); vehicles keep ||S(x - o(k))|| >= r."""

    S: np.ndarray
    r: float
    trajectory: np.ndarray  # (N, n)

    def __post_init__(self):
        object.__setattr__(self, "S", np.atleast_2d(np.asarray(self.S, dtype=float)))
        object.__setattr__(self, "trajectory", np.atleast_2d(np.asarray(self.trajectory, dtype=float)))
        if self.r <= 0 or not np.any(self.S):
            raise ValueError("obstacle needs r > 0 and nonzero S")


@dataclass(frozen=True)
class Separation:
    """Every pair of vehicles keeps ||S(x_i - x_j)|| >= r at every step."""

    S: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "S", np.atleast_2d(np.asarray(self.S, dtype=float)))
        if self.r <= 0 or not np.any(self.S):
            raise ValueError("separation needs r > 0 and nonzero S")


@dataclass(frozen=True)
class CollisionConstraint:
    """One (vehicle or pair, time step) 2-norm keep-out term.

    ``i``/``j`` are vehicle positions in ``ScenarioSpec.vehicles``; ``j`` is
    None for obstacle terms, whose position ``offset`` = o(k) is subtracted.
    """

    kind: str  # "obstacle" | "pairwise"
    i: int
    j: int | None
    k: int
    S: np.ndarray
    r: float
    offset: np.ndarray | None = None
    source: int = 0

    @property
    def group(self) -> str:
        return "obstacle" if self.kind == "obstacle" else "pairwise"


@dataclass(frozen=True)
class ScenarioSpec:
    system: LtiSystem
    N: int
    vehicles: tuple[VehicleState, ...]
    u_lower: np.ndarray
    u_upper: np.ndarray
    targets: tuple[TargetSetConstraint, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()
    separations: tuple[Separation, ...] = ()
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 0.05
    control_weight: np.ndarray | float = 1.0
    risk_mode: str = "uniform"
    pwl_knots: int = 17
    lambda_max: float | None = None
    name: str = "scenario"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        m, n = self.system.m, self.system.n
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "separations", tuple(self.separations))
        lo = np.broadcast_to(np.asarray(self.u_lower, dtype=float), (m,)).copy()
        hi = np.broadcast_to(np.asarray(self.u_upper, dtype=float), (m,)).copy()
        object.__setattr__(self, "u_lower", lo)
        object.__setattr__(self, "u_upper", hi)
        w = np.broadcast_to(np.asarray(self.control_weight, dtype=float), (m,)).copy()
        object.__setattr__(self, "control_weight", w)
        if self.N < 1 or not self.vehicles:
            raise ValueError("need N >= 1 and at least one vehicle")
        if np.any(lo > hi):
            raise ValueError("control lower bound exceeds upper bound")
        if np.any(w < 0):
            raise ValueError("control weights must be nonnegative")
        for name in ("alpha", "beta", "gamma"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.risk_mode not in RISK_MODES:
            raise ValueError(f"risk mode must be one of {RISK_MODES}")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")
        for v in self.vehicles:
            if v.x0.size != n:
                raise DimensionError(f"vehicle {v.id}: x0 has length {v.x0.size}, expected {n}")
        for t in self.targets:
            if t.vehicle not in ids:
                raise ValueError(f"target set refers to unknown vehicle {t.vehicle}")
            if not 1 <= t.k <= self.N or t.G.shape[1] != n:
                raise DimensionError(f"target set for vehicle {t.vehicle} at k={t.k} is malformed")
        for o in self.obstacles:
            if o.trajectory.shape == (1, n):
                object.__setattr__(o, "trajectory", np.repeat(o.trajectory, self.N, axis=0))
            if o.trajectory.shape != (self.N, n) or o.S.shape[1] != n:
                raise DimensionError("obstacle trajectory must be (N, n) and S must have n columns")
        for s in self.separations:
            if s.S.shape[1] != n:
                raise DimensionError("separation S must have n columns")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    def vehicle_index(self, vid: int) -> int:
        for idx, v in enumerate(self.vehicles):
            if v.id == vid:
                return idx
        raise KeyError(vid)

    def dynamics(self) -> ConcatenatedDynamics:
        return concatenate(self.system, self.N)

    @property
    def n_target_halfspaces(self) -> int:
        return sum(t.n_halfspaces for t in self.targets)

    def collision_constraints(self) -> list[CollisionConstraint]:
        out = []
        for oi, obs in enumerate(self.obstacles):
            for i in range(self.n_vehicles):
                for k in range(1, self.N + 1):
                    out.append(CollisionConstraint("obstacle", i, None, k, obs.S, obs.r,
                                                   obs.trajectory[k - 1], source=oi))
        for si, sep in enumerate(self.separations):
            for i, j in combinations(range(self.n_vehicles), 2):
                for k in range(1, self.N + 1):
                    out.append(CollisionConstraint("pairwise", i, j, k, sep.S, sep.r, source=si))
        return out

    def replace(self, **changes) -> "ScenarioSpec":
        from dataclasses import replace
        return replace(self, **changes)
