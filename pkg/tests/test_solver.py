import numpy as np
import pytest
from conftest import make_planar_spec, planar_samples

from ccsoc.problem import ScenarioSpec
from ccsoc.reformulation import SampleMoments, build_static
from ccsoc.bounds import SampleBound
from ccsoc.solver import (
    BackendFailure,
    BackendResult,
    CcpConfig,
    CvxpyBackend,
    InfeasibleSubproblem,
    run_ccp,
    scenario_program,
    solve_ccp,
    solve_scenario_baseline,
    verify_solution,
)


class RecordingBackend:
    """Delegates to cvxpy and keeps every program it was handed."""

    capabilities = frozenset({"affine", "soc", "quadratic_objective"})

    def __init__(self):
        self.inner = CvxpyBackend()
        self.programs = []

    def solve(self, program, objective_scale=None):
        self.programs.append(program)
        return self.inner.solve(program, objective_scale)


class InfeasibleBackend:
    capabilities = frozenset({"affine", "soc", "quadratic_objective"})

    def solve(self, program, objective_scale=None):
        return BackendResult("infeasible", None)


def test_ccp_converges_on_planar_instance():
    spec = make_planar_spec()
    samples = planar_samples(spec)
    sol = solve_ccp(spec, samples)
    assert sol.status == "converged"
    last, prev = sol.ledger.records[-1], sol.ledger.records[-2]
    assert abs(last.objective - prev.objective) < 1e-6
    assert last.slack_sum < 1e-8
    checks = verify_solution(sol, spec, samples)
    assert max(checks.values()) <= 1e-6


def test_ledger_is_monotone_in_penalty():
    spec = make_planar_spec()
    sol = solve_ccp(spec, planar_samples(spec))
    weights = [r.slack_weight for r in sol.ledger.records]
    assert weights[0] == 10.0
    assert all(b >= a for a, b in zip(weights, weights[1:]))
    assert max(weights) <= 1e6


def test_every_subproblem_is_exact_at_its_base_point():
    spec = make_planar_spec()
    backend = RecordingBackend()
    sol = solve_ccp(spec, planar_samples(spec), backend=backend)
    assert len(backend.programs) == sol.ledger.iterations
    # program i+1 is linearized at the solution of program i
    static = sol.static
    x = np.zeros(static.layout.size)
    for prog in backend.programs[:1]:
        for soc, t in zip(prog.socs, static.collision_terms):
            assert soc.value(x) == pytest.approx(-t.exact_margin(x), rel=1e-9, abs=1e-9)


def test_infeasible_subproblem_carries_ledger():
    spec = make_planar_spec()
    with pytest.raises(InfeasibleSubproblem) as info:
        solve_ccp(spec, planar_samples(spec), backend=InfeasibleBackend())
    assert info.value.iteration == 1
    assert info.value.ledger.status == "infeasible_subproblem"
    assert info.value.ledger.records[0].status == "infeasible"


def test_unknown_solver_is_backend_failure():
    spec = make_planar_spec()
    with pytest.raises(BackendFailure):
        solve_ccp(spec, planar_samples(spec), backend=CvxpyBackend("NOT_A_SOLVER"))


def test_iteration_cap_reports_status():
    spec = make_planar_spec()
    sol = solve_ccp(spec, planar_samples(spec), CcpConfig(max_iterations=1))
    assert sol.status == "max_iterations"
    assert sol.ledger.iterations == 1


def test_without_collision_terms_one_iteration(los_cfg, los_samples):
    sol = solve_ccp(los_cfg.spec, los_samples)
    assert sol.status == "converged" and sol.ledger.iterations == 1


def test_warm_start_reaches_same_point():
    spec = make_planar_spec()
    samples = planar_samples(spec)
    cold = solve_ccp(spec, samples)
    warm = solve_ccp(spec, samples, CcpConfig(warm_start=tuple(cold.controls)))
    assert warm.status == "converged"
    assert warm.ledger.iterations <= cold.ledger.iterations
    assert warm.objective == pytest.approx(cold.objective, rel=1e-5)


def test_config_validation():
    with pytest.raises(ValueError):
        CcpConfig(max_iterations=0)
    with pytest.raises(ValueError):
        CcpConfig(slack_growth=0.5)
    with pytest.raises(ValueError):
        CcpConfig(slack_weight=10.0, slack_weight_cap=1.0)


def test_reruns_are_bit_identical():
    spec = make_planar_spec()
    samples = planar_samples(spec)
    a, b = solve_ccp(spec, samples), solve_ccp(spec, samples)
    assert a.U.tobytes() == b.U.tobytes()
    assert [r.objective for r in a.ledger.records] == [r.objective for r in b.ledger.records]


# --- scenario baseline -----------------------------------------------------------------

def test_scenario_program_rows(los_cfg):
    from ccsoc.sampling import synth_disturbances

    spec = los_cfg.spec
    samples = [synth_disturbances("skewed", {"shape": 1.5, "scale": [1e-2] * 3 + [1e-4] * 3}, 300, 1, 5, 6)]
    prog = scenario_program(spec, samples)
    assert prog.A_ub.shape[0] == 300 * spec.n_target_halfspaces
    sol = solve_scenario_baseline(spec, samples)
    dyn = spec.dynamics()
    x0 = spec.vehicles[0].x0
    for tc in spec.targets:
        X = np.array([dyn.state(tc.k, x0, sol.controls[0], w) for w in samples[0].samples])
        assert np.all(X @ tc.G.T <= tc.h + 1e-7)


def test_scenario_rejects_collision_terms():
    spec = make_planar_spec()
    with pytest.raises(ValueError):
        scenario_program(spec, planar_samples(spec))


# --- piecewise-linear refinement ----------------------------------------------------------

def test_nested_knot_refinement_never_raises_cost(los_cfg, los_samples):
    costs = []
    for knots in (17, 33, 65):
        sol = solve_ccp(los_cfg.spec.replace(pwl_knots=knots), los_samples)
        assert sol.status == "converged"
        costs.append(sol.objective)
    assert all(b <= a * (1 + 1e-7) for a, b in zip(costs, costs[1:]))


def test_pwl_solution_respects_budget(los_cfg, los_samples):
    sol = solve_ccp(los_cfg.spec, los_samples)
    checks = verify_solution(sol, los_cfg.spec, los_samples)
    assert checks["risk_budget"] <= 1e-6
    assert checks["lambda_threshold"] <= 1e-9
    assert checks["target_tightening"] <= 1e-6
    assert np.all(sol.target_omega > 1 / 2075)


def test_fixed_static_reuse():
    spec = make_planar_spec()
    samples = planar_samples(spec)
    static = build_static(spec, SampleMoments(samples), SampleBound(400))
    a = run_ccp(static, CcpConfig(), CvxpyBackend())
    b = run_ccp(static, CcpConfig(), CvxpyBackend())
    assert a.U.tobytes() == b.U.tobytes()


def test_spec_rejects_bad_thresholds():
    spec = make_planar_spec()
    with pytest.raises(ValueError):
        spec.replace(alpha=0.0)
    with pytest.raises(ValueError):
        spec.replace(risk_mode="adaptive")
    assert isinstance(spec.replace(alpha=0.2), ScenarioSpec)


def test_penalized_objective_never_increases(gaussian_solution):
    spec = make_planar_spec()
    planar = solve_ccp(spec, planar_samples(spec))
    for sol in (planar, gaussian_solution):
        pen = [r.penalized_objective for r in sol.ledger.records]
        assert all(b <= a + 1e-7 * max(1.0, abs(a)) for a, b in zip(pen, pen[1:]))


def test_scenario_baseline_at_full_size(los_cfg):
    samples = los_cfg.load_samples(count=2073)
    prog = scenario_program(los_cfg.spec, samples)
    assert prog.A_ub.shape[0] == 32 * 2073 == 66_336
    sol = solve_scenario_baseline(los_cfg.spec, samples)
    assert sol.status == "converged" and sol.objective > 0
