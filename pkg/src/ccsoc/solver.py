"""Convex-concave procedure driver, conic backend and the two baselines."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Protocol

import cvxpy as cp
import numpy as np

from .bounds import CantelliBound, SampleBound
from .dynamics import ConcatenatedDynamics
from .problem import ScenarioSpec
from .reformulation import (
    GaussianMoments,
    ReformulatedProgram,
    SampleMoments,
    StaticReformulation,
    build_static,
)
from .sampling import DisturbanceSampleSet

log = logging.getLogger(__name__)


class InfeasibleSubproblem(RuntimeError):
    def __init__(self, iteration: int, status: str, ledger=None):
        self.iteration = iteration
        self.status = status
        self.ledger = ledger
        super().__init__(f"convex subproblem {iteration} reported {status}")


class BackendFailure(RuntimeError):
    pass


# --- backend ------------------------------------------------------------------

@dataclass(frozen=True)
class BackendResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float | None = None
    solve_time: float = 0.0
    detail: str = ""  # raw backend status, e.g. optimal_inaccurate
    objective_scale: float = 1.0


class SubproblemBackend(Protocol):
    capabilities: frozenset

    def solve(self, program: ReformulatedProgram, objective_scale: float | None = None) -> BackendResult: ...


class CvxpyBackend:
    """Affine + second-order cone + convex quadratic objective through cvxpy.

    Interior-point gap tolerances are absolute for objectives below one, so
    small objectives are rescaled to order one: the problem is solved with
    ``objective_scale`` (or 1) and, when the optimum falls outside
    ``SCALE_BAND``, solved again with the scale 1/|objective|.
    """

    capabilities = frozenset({"affine", "soc", "quadratic_objective"})
    SCALE_BAND = (0.2, 1e3)

    def __init__(self, solver: str = "CLARABEL", **solver_opts):
        self.solver = solver
        if solver == "CLARABEL" and not solver_opts:
            solver_opts = {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10,
                           "tol_ktratio": 1e-8, "max_iter": 500}
        self.solver_opts = solver_opts

    def solve(self, program: ReformulatedProgram, objective_scale: float | None = None) -> BackendResult:
        scale = 1.0 if objective_scale is None else float(objective_scale)
        res = self._solve_scaled(program, scale)
        lo, hi = self.SCALE_BAND
        if res.status == "optimal" and res.objective and not lo <= abs(res.objective) * scale <= hi:
            again = self._solve_scaled(program, 1.0 / abs(res.objective))
            again = BackendResult(again.status, again.x, again.objective, again.solve_time + res.solve_time,
                                  again.detail, again.objective_scale)
            if again.status == "optimal":
                return again
        return res

    def _solve_scaled(self, program: ReformulatedProgram, scale: float) -> BackendResult:
        n = program.layout.size
        x = cp.Variable(n)
        quad = np.sqrt(program.P_diag * scale)
        objective = cp.sum_squares(cp.multiply(quad, x)) + (program.c * scale) @ x
        cons = []
        if program.A_ub.shape[0]:
            cons.append(program.A_ub @ x <= program.b_ub)
        lo = np.isfinite(program.lb)
        hi = np.isfinite(program.ub)
        if lo.any():
            cons.append(x[lo] >= program.lb[lo])
        if hi.any():
            cons.append(x[hi] <= program.ub[hi])
        for s in program.socs:
            rhs = -(s.a @ x + s.b)
            if s.scale > 0:
                cons.append(cp.SOC(rhs / s.scale, s.M @ x + s.v))
            else:
                cons.append(rhs >= 0)
        prob = cp.Problem(cp.Minimize(objective), cons)
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                # inaccurate solves are reported through the ledger instead
                warnings.filterwarnings("ignore", message="Solution may be inaccurate")
                prob.solve(solver=self.solver, **self.solver_opts)
        except cp.SolverError as exc:
            raise BackendFailure(str(exc)) from exc
        elapsed = time.perf_counter() - t0
        status = prob.status
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return BackendResult("optimal", np.asarray(x.value, dtype=float), float(prob.value) / scale, elapsed,
                                 status, scale)
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return BackendResult("infeasible", None, None, elapsed, status, scale)
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return BackendResult("unbounded", None, None, elapsed, status, scale)
        raise BackendFailure(f"backend returned status {status!r}")


# --- configuration and results ----------------------------------------------------

@dataclass(frozen=True)
class CcpConfig:
    max_iterations: int = 100
    objective_tol: float = 1e-6
    slack_tol: float = 1e-8
    slack_weight: float = 10.0
    slack_growth: float = 5.0
    slack_weight_cap: float = 1e6
    warm_start: tuple | None = None  # per-vehicle U, default all zeros

    def __post_init__(self):
        if self.max_iterations < 1 or self.objective_tol <= 0 or self.slack_tol <= 0:
            raise ValueError("need max_iterations >= 1 and positive tolerances")
        if self.slack_weight <= 0 or self.slack_growth < 1 or self.slack_weight_cap < self.slack_weight:
            raise ValueError("invalid slack penalty schedule")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    penalized_objective: float
    slack_sum: float
    slack_weight: float
    status: str
    step_norm: float
    solve_time: float


@dataclass
class CcpLedger:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"  # converged | max_iterations | infeasible_subproblem

    @property
    def iterations(self) -> int:
        return len(self.records)


@dataclass
class Solution:
    method: str
    controls: list[np.ndarray]
    objective: float
    ledger: CcpLedger
    target_lambda: np.ndarray
    target_omega: np.ndarray
    collision_lambda: np.ndarray
    collision_omega: np.ndarray
    x: np.ndarray | None = None
    solve_time: float = 0.0
    static: StaticReformulation | None = field(default=None, repr=False)
    validation: object | None = None

    @property
    def status(self) -> str:
        return self.ledger.status

    @property
    def U(self) -> np.ndarray:
        return np.concatenate(self.controls)


def _warm_x(static: StaticReformulation, config: CcpConfig) -> np.ndarray:
    x = np.zeros(static.layout.size)
    if config.warm_start is not None:
        for v, U in enumerate(config.warm_start):
            x[static.layout.U(v)] = np.asarray(U, dtype=float).ravel()
    return x


def run_ccp(static: StaticReformulation, config: CcpConfig, backend: SubproblemBackend,
            method: str = "proposed") -> Solution:
    """Iterate linearize / solve / penalty update until both tolerances hold."""
    L = static.layout
    ledger = CcpLedger()
    x_prev = _warm_x(static, config)
    weight = config.slack_weight
    prev_J = None
    has_dc = bool(static.collision_terms)
    total_time = 0.0
    x = x_prev
    scale = None
    for it in range(1, config.max_iterations + 1):
        program = static.program(x_prev, weight)
        res = backend.solve(program, scale)
        total_time += res.solve_time
        if res.status != "optimal":
            ledger.records.append(IterationRecord(it, np.nan, np.nan, np.nan, weight, res.status, np.nan,
                                                  res.solve_time))
            ledger.status = "infeasible_subproblem"
            raise InfeasibleSubproblem(it, res.status, ledger)
        scale = res.objective_scale
        x = res.x.copy()
        x[L.slack] = np.clip(x[L.slack], 0.0, None)
        J = static.objective_J(x)
        slack_sum = float(np.sum(x[L.slack]))
        step = float(np.linalg.norm(x[:L.n_u] - x_prev[:L.n_u]))
        ledger.records.append(IterationRecord(it, J, program.objective(x), slack_sum, weight,
                                              res.detail or res.status, step, res.solve_time))
        log.debug("ccp %d: J=%.9g slack=%.3e weight=%.3g", it, J, slack_sum, weight)
        if not has_dc or (prev_J is not None and abs(J - prev_J) < config.objective_tol
                          and slack_sum < config.slack_tol):
            ledger.status = "converged"
            break
        if slack_sum > config.slack_tol:
            weight = min(weight * config.slack_growth, config.slack_weight_cap)
        prev_J = J
        x_prev = x
    else:
        ledger.status = "max_iterations"
    alloc = static.allocation
    return Solution(
        method=method,
        controls=static.controls(x),
        objective=static.objective_J(x),
        ledger=ledger,
        target_lambda=static.lambdas(x),
        target_omega=(static.bound.f(static.lambdas(x)) if len(static.target_rows) else np.zeros(0)),
        collision_lambda=np.array([t.lam for t in static.collision_terms]),
        collision_omega=np.asarray(alloc.collision_omega, dtype=float),
        x=x,
        solve_time=total_time,
        static=static,
    )


def solve_ccp(spec: ScenarioSpec, samples: list[DisturbanceSampleSet], config: CcpConfig | None = None,
              backend: SubproblemBackend | None = None) -> Solution:
    """Sample-statistics reformulation solved by the convex-concave procedure."""
    config = config or CcpConfig()
    backend = backend or CvxpyBackend()
    moments = SampleMoments(samples)
    static = build_static(spec, moments, SampleBound(moments.n_samples))
    return run_ccp(static, config, backend, "proposed")


def solve_cantelli_baseline(spec: ScenarioSpec, true_means, true_covs, backend=None,
                            config: CcpConfig | None = None) -> Solution:
    """Same pipeline with exact Gaussian moments and Cantelli multipliers."""
    config = config or CcpConfig()
    backend = backend or CvxpyBackend()
    moments = GaussianMoments(list(true_means), list(true_covs))
    static = build_static(spec, moments, CantelliBound())
    return run_ccp(static, config, backend, "cantelli")


def scenario_program(spec: ScenarioSpec, samples: list[DisturbanceSampleSet],
                     dyn: ConcatenatedDynamics | None = None) -> ReformulatedProgram:
    """One affine row per (halfspace, sample): G(A^k x0 + C(k)U + D(k)W^[s]) <= h."""
    from .reformulation import Layout

    if spec.obstacles or spec.separations:
        raise ValueError("the scenario baseline handles target-set constraints only")
    dyn = dyn or spec.dynamics()
    L = Layout(spec.n_vehicles, spec.N * spec.system.m, 0, 0)
    blocks_A, blocks_b, labels = [], [], []
    for tc in spec.targets:
        v = spec.vehicle_index(tc.vehicle)
        W = samples[v].samples
        x0 = spec.vehicles[v].x0
        GC = tc.G @ dyn.C[tc.k]
        const = tc.G @ dyn.powers[tc.k] @ x0
        GDW = W @ (tc.G @ dyn.D[tc.k]).T  # (N_s, rows)
        A = np.zeros((W.shape[0] * tc.n_halfspaces, L.size))
        A[:, L.U(v)] = np.tile(GC, (W.shape[0], 1))
        b = (tc.h - const - GDW).ravel()
        blocks_A.append(A)
        blocks_b.append(b)
        labels.extend(f"scenario v{tc.vehicle} k{tc.k}" for _ in range(b.size))
    lb = np.concatenate([np.tile(spec.u_lower, spec.N) for _ in spec.vehicles])
    ub = np.concatenate([np.tile(spec.u_upper, spec.N) for _ in spec.vehicles])
    P = np.concatenate([np.tile(spec.control_weight, spec.N) for _ in spec.vehicles])
    A = np.vstack(blocks_A) if blocks_A else np.zeros((0, L.size))
    b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    return ReformulatedProgram(L, P, np.zeros(L.size), A, b, lb, ub, (), tuple(labels))


def solve_scenario_baseline(spec: ScenarioSpec, samples: list[DisturbanceSampleSet],
                            backend: SubproblemBackend | None = None) -> Solution:
    backend = backend or CvxpyBackend()
    program = scenario_program(spec, samples)
    res = backend.solve(program)
    ledger = CcpLedger()
    if res.status != "optimal":
        ledger.records.append(IterationRecord(1, np.nan, np.nan, 0.0, 0.0, res.status, np.nan, res.solve_time))
        ledger.status = "infeasible_subproblem"
        raise InfeasibleSubproblem(1, res.status, ledger)
    x = res.x
    J = program.objective(x)
    ledger.records.append(IterationRecord(1, J, J, 0.0, 0.0, res.status, float(np.linalg.norm(x)),
                                          res.solve_time))
    ledger.status = "converged"
    L = program.layout
    return Solution("scenario", [x[L.U(v)] for v in range(spec.n_vehicles)], J, ledger,
                    np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), x=x, solve_time=res.solve_time)


# --- independent checks -------------------------------------------------------------

def verify_solution(solution: Solution, spec: ScenarioSpec, samples: list[DisturbanceSampleSet] | None = None
                    ) -> dict[str, float]:
    """Worst violation per constraint family, recomputed from trajectories.

    With samples, target and keep-out statistics come from propagating every
    sample directly rather than from the cached moment matrices.
    """
    static = solution.static
    dyn = static.dyn if static is not None else spec.dynamics()
    bound = static.bound if static is not None else None
    U = solution.controls
    out = {"control_bounds": 0.0}
    for Ui in U:
        Ui = Ui.reshape(spec.N, spec.system.m)
        out["control_bounds"] = max(out["control_bounds"], float(np.max(Ui - spec.u_upper)),
                                    float(np.max(spec.u_lower - Ui)))

    def states(v, k):
        x0 = spec.vehicles[v].x0
        base = dyn.powers[k] @ x0 + dyn.C[k] @ U[v]
        return base[None, :] + samples[v].samples @ dyn.D[k].T

    worst = 0.0
    idx = 0
    for tc in spec.targets:
        v = spec.vehicle_index(tc.vehicle)
        for r in range(tc.n_halfspaces):
            lam = solution.target_lambda[idx]
            if samples is not None:
                vals = states(v, tc.k) @ tc.G[r]
                mean, std = vals.mean(), np.sqrt(np.mean((vals - vals.mean()) ** 2))
            else:
                row = static.target_rows[idx]
                mean = row.grad @ U[v] + row.const
                std = row.std
            worst = max(worst, float(mean + lam * std - tc.h[r]))
            idx += 1
    out["target_tightening"] = worst
    if spec.risk_mode == "pwl" and idx and bound is not None:
        out["risk_budget"] = float(np.sum(bound.f(solution.target_lambda)) - spec.alpha)
        out["lambda_threshold"] = float(np.max(bound.convexity_threshold() - solution.target_lambda))

    worst = 0.0
    terms = static.collision_terms if static is not None else []
    for t, lam in zip(terms, solution.collision_lambda):
        cc = t.constraint
        if samples is not None:
            Xi = states(cc.i, cc.k)
            if cc.j is None:
                d = (Xi - cc.offset) @ cc.S.T
            else:
                d = (Xi - states(cc.j, cc.k)) @ cc.S.T
            sq = np.einsum("ij,ij->i", d, d)
            margin = sq.mean() - lam * np.sqrt(np.mean((sq - sq.mean()) ** 2)) - cc.r**2
        else:
            margin = t.exact_margin(solution.x)
        worst = max(worst, float(-margin))
    out["collision"] = worst
    return out
