"""Deterministic surrogate of the chance-constrained problem.

Target halfspaces become affine tightenings ``mean + lam * std <= h``; each
2-norm keep-out term becomes the difference of convex functions

    mean(||zbar + z||^2) - lam * std(||zbar + z||^2) >= r^2,

whose concave part (the mean) is linearized around the previous iterate so
that each convex-concave step is a second-order cone program.

Decision vector layout: ``[U_1 .. U_Nv | lam (pwl only) | t (pwl only) | slack]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import CantelliBound, RiskTooSmallForSampleSize, SampleBound, lambda_near_floor
from .dynamics import ConcatenatedDynamics, DimensionError
from .problem import CollisionConstraint, ScenarioSpec
from .sampling import (
    DisturbanceSampleSet,
    MomentCache,
    QuadraticFormMoments,
    gaussian_quadratic_moments,
    halfspace_moments,
    quadratic_form_moments,
)

LAMBDA_MAX_CANTELLI = 1e4


# --- moment sources -----------------------------------------------------------

class SampleMoments:
    """Moments estimated from per-vehicle disturbance samples."""

    def __init__(self, sample_sets: list[DisturbanceSampleSet]):
        self.sample_sets = list(sample_sets)
        counts = {s.n_samples for s in self.sample_sets}
        if len(counts) != 1:
            raise DimensionError(f"all vehicles need the same sample count, got {sorted(counts)}")
        self.n_samples = counts.pop()
        self.caches = [MomentCache.from_samples(s) for s in self.sample_sets]

    def halfspace(self, v: int, dyn, G_row, k, x0):
        return halfspace_moments(self.caches[v], dyn, G_row, k, x0)

    def quadratic(self, cc: CollisionConstraint, dyn) -> QuadraticFormMoments:
        other = None if cc.j is None else self.sample_sets[cc.j]
        return quadratic_form_moments(self.sample_sets[cc.i], other, dyn, cc.S, cc.k)


class GaussianMoments:
    """Exact moments of a Gaussian disturbance with known mean and covariance."""

    def __init__(self, means: list[np.ndarray], covs: list[np.ndarray]):
        self.caches = [MomentCache(mean=np.asarray(m, float), cov=np.asarray(c, float), n_samples=0)
                       for m, c in zip(means, covs)]

    def halfspace(self, v: int, dyn, G_row, k, x0):
        return halfspace_moments(self.caches[v], dyn, G_row, k, x0)

    def quadratic(self, cc: CollisionConstraint, dyn) -> QuadraticFormMoments:
        SD = cc.S @ dyn.D[cc.k]
        ci = self.caches[cc.i]
        mean, cov = ci.mean, ci.cov
        if cc.j is not None:
            cj = self.caches[cc.j]
            mean, cov = mean - cj.mean, cov + cj.cov
        return gaussian_quadratic_moments(SD @ mean, SD @ cov @ SD.T)


# --- program ------------------------------------------------------------------

@dataclass(frozen=True)
class SocConstraint:
    """scale * ||M x + v|| + a @ x + b <= 0."""

    scale: float
    M: np.ndarray
    v: np.ndarray
    a: np.ndarray
    b: float
    label: str = ""

    def value(self, x) -> float:
        return float(self.scale * np.linalg.norm(self.M @ x + self.v) + self.a @ x + self.b)


@dataclass(frozen=True)
class Layout:
    n_vehicles: int
    block: int  # N*m
    n_targets_var: int  # lam/t count (0 unless pwl)
    n_slack: int

    @property
    def n_u(self) -> int:
        return self.n_vehicles * self.block

    def U(self, v: int) -> slice:
        return slice(v * self.block, (v + 1) * self.block)

    @property
    def lam(self) -> slice:
        return slice(self.n_u, self.n_u + self.n_targets_var)

    @property
    def t(self) -> slice:
        s = self.n_u + self.n_targets_var
        return slice(s, s + self.n_targets_var)

    @property
    def slack(self) -> slice:
        s = self.n_u + 2 * self.n_targets_var
        return slice(s, s + self.n_slack)

    @property
    def size(self) -> int:
        return self.n_u + 2 * self.n_targets_var + self.n_slack


@dataclass(frozen=True)
class ReformulatedProgram:
    """minimize x' diag(P) x + c' x  s.t.  A x <= b,  lb <= x <= ub,  SOC terms."""

    layout: Layout
    P_diag: np.ndarray
    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    socs: tuple[SocConstraint, ...] = ()
    row_labels: tuple[str, ...] = ()

    def objective(self, x) -> float:
        return float(x @ (self.P_diag * x) + self.c @ x)

    def max_violation(self, x) -> float:
        """Largest constraint violation at x, evaluated directly from the data."""
        viol = [0.0]
        if self.A_ub.size:
            viol.append(float(np.max(self.A_ub @ x - self.b_ub)))
        viol.append(float(np.max(self.lb - x)))
        viol.append(float(np.max(x - self.ub)))
        viol.extend(s.value(x) for s in self.socs)
        return max(viol)


# --- risk allocation ------------------------------------------------------------

@dataclass(frozen=True)
class RiskAllocation:
    """Per-constraint violation budgets; target entries are ``None``-free only in uniform mode."""

    mode: str
    target_omega: np.ndarray  # per target halfspace, flattened in spec order
    collision_omega: np.ndarray  # per collision term, spec.collision_constraints() order
    thresholds: dict = field(default_factory=dict)


def allocate_uniform(spec: ScenarioSpec, bound) -> RiskAllocation:
    """Split each group threshold evenly over its members."""
    collisions = spec.collision_constraints()
    n_obs = sum(cc.kind == "obstacle" for cc in collisions)
    n_pair = len(collisions) - n_obs
    T = spec.n_target_halfspaces
    floor = getattr(bound, "floor", 0.0)
    n_samples = getattr(bound, "n_samples", 0)

    def share(threshold, count, what):
        if count == 0:
            return None
        omega = threshold / count
        if omega <= floor:
            raise RiskTooSmallForSampleSize(omega, n_samples, what)
        return omega

    w_t = share(spec.alpha, T, "target halfspace")
    w_o = share(spec.beta, n_obs, "obstacle term")
    w_p = share(spec.gamma, n_pair, "pairwise term")
    coll = np.array([w_o if cc.kind == "obstacle" else w_p for cc in collisions], dtype=float)
    return RiskAllocation(mode=spec.risk_mode, target_omega=np.full(T, w_t if T else np.nan),
                          collision_omega=coll,
                          thresholds={"alpha": spec.alpha, "beta": spec.beta, "gamma": spec.gamma})


def fixed_lambda(bound, omega: float) -> float:
    """Multiplier for a fixed risk, never below the convexity threshold."""
    return max(bound.lambda_of_omega(omega), bound.convexity_threshold())


# --- target sets ------------------------------------------------------------------

@dataclass(frozen=True)
class TargetRow:
    """One halfspace tightening: grad @ U_v + lam * std <= h - const."""

    vehicle: int
    k: int
    grad: np.ndarray
    const: float
    std: float
    h: float
    label: str


def reformulate_target(spec: ScenarioSpec, moments, dyn: ConcatenatedDynamics) -> list[TargetRow]:
    rows = []
    for tc in spec.targets:
        v = spec.vehicle_index(tc.vehicle)
        x0 = spec.vehicles[v].x0
        for r in range(tc.n_halfspaces):
            grad, const, std = moments.halfspace(v, dyn, tc.G[r], tc.k, x0)
            rows.append(TargetRow(v, tc.k, grad, const, std, float(tc.h[r]),
                                  f"target v{tc.vehicle} k{tc.k} row{r + 1}"))
    return rows


def knot_grid(bound, lam_max: float, n_knots: int) -> np.ndarray:
    """Geometric knots on [threshold, lam_max]; grids with 2^p + 1 knots nest."""
    lo = bound.convexity_threshold()
    if n_knots < 2 or lam_max <= lo:
        raise ValueError("need >= 2 knots and lam_max above the convexity threshold")
    return lo * (lam_max / lo) ** np.linspace(0.0, 1.0, n_knots)


def chord_lines(bound, knots) -> tuple[np.ndarray, np.ndarray]:
    """Slopes and intercepts of the chords of f between consecutive knots."""
    knots = np.asarray(knots, dtype=float)
    if knots[0] < bound.convexity_threshold() - 1e-12:
        raise ValueError("knots below the convexity threshold would not over-estimate f")
    fk = bound.f(knots)
    slopes = np.diff(fk) / np.diff(knots)
    return slopes, fk[:-1] - slopes * knots[:-1]


def pwl_value(bound, knots, lam):
    """Chord interpolant of f; equals the max of the chord lines on the knot span."""
    slopes, icpt = chord_lines(bound, knots)
    lam = np.asarray(lam, dtype=float)
    return np.max(slopes[:, None] * np.atleast_1d(lam)[None, :] + icpt[:, None], axis=0)


def pwl_target_risk_constraints(bound, layout: Layout, alpha: float, knots):
    """Affine rows t_j >= chord(lam_j) for every chord, plus sum_j t_j <= alpha.

    f is convex above the threshold, so chords over-estimate it and the
    budget on t implies the true budget on f(lam).
    """
    slopes, icpt = chord_lines(bound, knots)
    T = layout.n_targets_var
    lam0, t0 = layout.lam.start, layout.t.start
    A = np.zeros((T * slopes.size + 1, layout.size))
    b = np.zeros(T * slopes.size + 1)
    labels = []
    r = 0
    for j in range(T):
        for s in range(slopes.size):
            A[r, lam0 + j] = slopes[s]
            A[r, t0 + j] = -1.0
            b[r] = -icpt[s]
            labels.append(f"risk chord target{j + 1} seg{s + 1}")
            r += 1
    A[r, layout.t] = 1.0
    b[r] = alpha
    labels.append("risk budget alpha")
    return A, b, labels


# --- collision terms ----------------------------------------------------------------

@dataclass(frozen=True)
class CollisionTerm:
    """Precomputed data for one keep-out term; zbar(x) = Pz @ x + pz."""

    constraint: CollisionConstraint
    moments: QuadraticFormMoments
    R_std: np.ndarray
    lam: float
    omega: float
    Pz: np.ndarray
    pz: np.ndarray
    label: str

    def zbar(self, x) -> np.ndarray:
        return self.Pz @ x + self.pz

    def exact_margin(self, x) -> float:
        """mean - lam * std - r^2 of ||zbar + z||^2; >= 0 means satisfied."""
        zb = self.zbar(x)
        return self.moments.mean_at(zb) - self.lam * self.moments.std_at(zb) - self.constraint.r ** 2

    def mean_linearized(self, x, x_prev) -> float:
        zp = self.zbar(x_prev)
        grad = 2.0 * (zp + self.moments.z_mean) @ self.Pz
        return self.moments.mean_at(zp) + grad @ (x - x_prev)


def collision_term(cc: CollisionConstraint, qm: QuadraticFormMoments, lam: float, omega: float,
                   spec: ScenarioSpec, dyn: ConcatenatedDynamics, layout: Layout) -> CollisionTerm:
    SC = cc.S @ dyn.C[cc.k]
    Pz = np.zeros((cc.S.shape[0], layout.size))
    Pz[:, layout.U(cc.i)] = SC
    x0i = spec.vehicles[cc.i].x0
    if cc.j is None:
        pz = cc.S @ (dyn.powers[cc.k] @ x0i - cc.offset)
        label = f"obstacle{cc.source + 1} v{spec.vehicles[cc.i].id} k{cc.k}"
    else:
        Pz[:, layout.U(cc.j)] = -SC
        pz = cc.S @ dyn.powers[cc.k] @ (x0i - spec.vehicles[cc.j].x0)
        label = f"pair v{spec.vehicles[cc.i].id}-v{spec.vehicles[cc.j].id} k{cc.k}"
    return CollisionTerm(cc, qm, qm.R_std, lam, omega, Pz, pz, label)


def reformulate_collision(term: CollisionTerm, x_prev, slack_index: int) -> SocConstraint:
    """Convex restriction of a keep-out term around ``x_prev``.

    lam ||R_std [zbar; 1]|| - (mean(zbar_p) + grad'(x - x_p)) - slack <= -r^2,
    exact at x = x_prev because the mean is linearized at its own base point.
    """
    if x_prev is None:
        raise ValueError("collision linearization needs a previous iterate")
    q = term.Pz.shape[0]
    zp = term.zbar(x_prev)
    grad = 2.0 * (zp + term.moments.z_mean) @ term.Pz
    mean_p = term.moments.mean_at(zp)
    a = -grad.copy()
    a[slack_index] -= 1.0
    b = -mean_p + grad @ x_prev + term.constraint.r ** 2
    R = term.R_std
    M = R[:, :q] @ term.Pz
    v = R[:, :q] @ term.pz + R[:, q]
    return SocConstraint(term.lam, M, v, a, float(b), term.label)


# --- assembly -----------------------------------------------------------------------

@dataclass
class StaticReformulation:
    """Everything that does not change across convex-concave iterations."""

    spec: ScenarioSpec
    dyn: ConcatenatedDynamics
    bound: object
    allocation: RiskAllocation
    layout: Layout
    target_rows: list[TargetRow]
    target_lambda: np.ndarray  # fixed multipliers (uniform mode) or NaN
    collision_terms: list[CollisionTerm]
    A_static: np.ndarray
    b_static: np.ndarray
    labels_static: list[str]
    lb: np.ndarray
    ub: np.ndarray
    P_diag: np.ndarray
    knots: np.ndarray | None = None

    def program(self, x_prev=None, slack_weight: float = 10.0) -> ReformulatedProgram:
        L = self.layout
        c = np.zeros(L.size)
        c[L.slack] = slack_weight
        socs = []
        if self.collision_terms:
            if x_prev is None:
                x_prev = np.zeros(L.size)
            socs = [reformulate_collision(t, x_prev, L.slack.start + idx)
                    for idx, t in enumerate(self.collision_terms)]
        return ReformulatedProgram(L, self.P_diag, c, self.A_static, self.b_static, self.lb, self.ub,
                                   tuple(socs), tuple(self.labels_static))

    def controls(self, x) -> list[np.ndarray]:
        return [np.asarray(x[self.layout.U(v)]) for v in range(self.layout.n_vehicles)]

    def objective_J(self, x) -> float:
        u = x[: self.layout.n_u]
        return float(u @ (self.P_diag[: self.layout.n_u] * u))

    def lambdas(self, x) -> np.ndarray:
        if self.spec.risk_mode == "pwl" and self.target_rows:
            return np.asarray(x[self.layout.lam])
        return self.target_lambda


def default_lambda_max(bound, spec: ScenarioSpec) -> float:
    if isinstance(bound, SampleBound):
        return max(50.0, lambda_near_floor(bound, 0.04))
    T = max(spec.n_target_halfspaces, 1)
    return max(50.0, min(LAMBDA_MAX_CANTELLI, bound.lambda_of_omega(spec.alpha / (100.0 * T))))


def build_static(spec: ScenarioSpec, moments, bound, dyn: ConcatenatedDynamics | None = None,
                 allocation: RiskAllocation | None = None) -> StaticReformulation:
    dyn = dyn or spec.dynamics()
    allocation = allocation or allocate_uniform(spec, bound)
    pwl = spec.risk_mode == "pwl"
    rows = reformulate_target(spec, moments, dyn)
    T = len(rows)
    if pwl and T and isinstance(bound, SampleBound) and T * bound.floor >= spec.alpha:
        raise RiskTooSmallForSampleSize(spec.alpha / T, bound.n_samples, "target group")
    collisions = spec.collision_constraints()
    layout = Layout(spec.n_vehicles, spec.N * spec.system.m, T if pwl else 0, len(collisions))

    A_rows, b_vals, labels = [], [], []
    target_lambda = np.full(T, np.nan)
    for idx, row in enumerate(rows):
        a = np.zeros(layout.size)
        a[layout.U(row.vehicle)] = row.grad
        rhs = row.h - row.const
        if pwl:
            a[layout.lam.start + idx] = row.std
        else:
            target_lambda[idx] = fixed_lambda(bound, allocation.target_omega[idx])
            rhs -= target_lambda[idx] * row.std
        A_rows.append(a)
        b_vals.append(rhs)
        labels.append(row.label)

    lb = np.full(layout.size, -np.inf)
    ub = np.full(layout.size, np.inf)
    for v in range(spec.n_vehicles):
        lb[layout.U(v)] = np.tile(spec.u_lower, spec.N)
        ub[layout.U(v)] = np.tile(spec.u_upper, spec.N)
    lb[layout.slack] = 0.0

    knots = None
    if pwl and T:
        lam_max = spec.lambda_max or default_lambda_max(bound, spec)
        knots = knot_grid(bound, lam_max, spec.pwl_knots)
        lb[layout.lam] = knots[0]
        ub[layout.lam] = knots[-1]
        lb[layout.t] = 0.0
        A_pwl, b_pwl, lab_pwl = pwl_target_risk_constraints(bound, layout, spec.alpha, knots)
        A_rows.extend(A_pwl)
        b_vals.extend(b_pwl)
        labels.extend(lab_pwl)

    terms = []
    for idx, cc in enumerate(collisions):
        omega = float(allocation.collision_omega[idx])
        lam = fixed_lambda(bound, omega)
        terms.append(collision_term(cc, moments.quadratic(cc, dyn), lam, omega, spec, dyn, layout))

    P = np.zeros(layout.size)
    for v in range(spec.n_vehicles):
        P[layout.U(v)] = np.tile(spec.control_weight, spec.N)
    A = np.array(A_rows) if A_rows else np.zeros((0, layout.size))
    return StaticReformulation(spec, dyn, bound, allocation, layout, rows, target_lambda, terms,
                               A, np.array(b_vals), labels, lb, ub, P, knots)


def make_bound(kind: str, n_samples: int | None = None):
    if kind == "sample":
        return SampleBound(int(n_samples))
    if kind == "cantelli":
        return CantelliBound()
    raise ValueError(f"unknown bound kind {kind!r}")
