"""Command line entry point: ``ccsoc solve|validate|bound-check|gen-samples``.

Exit codes: 0 success, 2 configuration or input error (including a config
hash mismatch), 3 infeasible or unconverged solve, 4 risk budget too small
for the sample count, 5 backend failure, 6 validation or tail test below
its threshold.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bounds import RiskTooSmallForSampleSize, SampleBound
from .config import ConfigError, ScenarioConfig, load_config
from .dynamics import DimensionError, mean_trajectory
from .sampling import DegenerateSampleError, ParseError, PsdViolationError, write_csv
from .solver import (
    BackendFailure,
    InfeasibleSubproblem,
    Solution,
    solve_cantelli_baseline,
    solve_ccp,
    solve_scenario_baseline,
    verify_solution,
)

log = logging.getLogger("ccsoc")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_RISK, EXIT_BACKEND, EXIT_VALIDATION = 0, 2, 3, 4, 5, 6
SOLUTION_FORMAT = "ccsoc-solution/1"
CWH_COLUMNS = ["x", "y", "z", "vx", "vy", "vz"]


class UsageError(ValueError):
    pass


# --- helpers ------------------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    """Comma list ``a,b,c`` or range ``start:stop:count`` (inclusive, evenly spaced)."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            vals = np.linspace(float(start), float(stop), int(count)).tolist()
        else:
            vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse grid {text!r}") from None
    if not vals:
        raise UsageError(f"empty grid {text!r}")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse integer list {text!r}") from None


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def state_columns(n: int) -> list[str]:
    return CWH_COLUMNS if n == 6 else [f"s{d + 1}" for d in range(n)]


def _mean_disturbance(cfg: ScenarioConfig, samples) -> list[np.ndarray]:
    gen = cfg.generator
    if gen is not None:
        return [np.tile(gen["mean"], cfg.spec.N)] * cfg.spec.n_vehicles
    return [s.samples.mean(axis=0) for s in samples]


def solution_to_dict(sol: Solution, cfg: ScenarioConfig, seed, n_samples) -> dict:
    spec = cfg.spec
    m = spec.system.m
    out = {
        "format": SOLUTION_FORMAT,
        "scenario": spec.name,
        "config_hash": cfg.config_hash,
        "method": sol.method,
        "risk_mode": spec.risk_mode,
        "sample_seed": seed,
        "n_samples": n_samples,
        "status": sol.status,
        "objective": sol.objective,
        "controls": {str(v.id): sol.controls[i].reshape(spec.N, m).tolist() for i, v in enumerate(spec.vehicles)},
        "target": [],
        "collision": [],
        "ledger": [{k: getattr(r, k) for k in ("iteration", "objective", "penalized_objective", "slack_sum",
                                               "slack_weight", "status", "step_norm")}
                   for r in sol.ledger.records],
    }
    if sol.static is not None:
        for row, lam, om in zip(sol.static.target_rows, sol.target_lambda, sol.target_omega):
            out["target"].append({"vehicle": spec.vehicles[row.vehicle].id, "k": row.k, "label": row.label,
                                  "lambda": float(lam), "omega": float(om)})
        for t in sol.static.collision_terms:
            cc = t.constraint
            out["collision"].append({"kind": cc.kind, "i": spec.vehicles[cc.i].id,
                                     "j": None if cc.j is None else spec.vehicles[cc.j].id, "k": cc.k,
                                     "lambda": float(t.lam), "omega": float(t.omega)})
    return out


# --- commands -----------------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.spec
    if args.risk_mode:
        spec = spec.replace(risk_mode=args.risk_mode)
        cfg.spec = spec
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    backend = cfg.backend()
    samples = None
    seed = cfg.sample_seed(args.seed)
    if args.method == "cantelli":
        means, covs = cfg.true_moments()
        sol = solve_cantelli_baseline(spec, means, covs, backend, cfg.ccp)
        n_samples = None
    else:
        samples = cfg.load_samples(args.seed)
        n_samples = samples[0].n_samples
        if args.method == "scenario":
            if spec.obstacles or spec.separations:
                raise UsageError("the scenario baseline supports target-set constraints only")
            sol = solve_scenario_baseline(spec, samples, backend)
        else:
            sol = solve_ccp(spec, samples, cfg.ccp, backend)
    doc = solution_to_dict(sol, cfg, seed, n_samples)
    checks = verify_solution(sol, spec, samples) if sol.static is not None else {}
    doc["verification"] = checks
    _write_json(out / "solution.json", doc)

    dyn = spec.dynamics()
    wmean = _mean_disturbance(cfg, samples) if samples is not None or cfg.generator else None
    cols = state_columns(spec.system.n)
    rows, trajs = [], {}
    for i, v in enumerate(spec.vehicles):
        X = np.vstack([v.x0, mean_trajectory(dyn, v.x0, sol.controls[i], None if wmean is None else wmean[i])])
        trajs[v.id] = X
        for k, x in enumerate(X):
            rows.append({"vehicle": v.id, "k": k, **{c: repr(float(a)) for c, a in zip(cols, x)}})
    _write_rows(out / "trajectory.csv", rows)
    _write_json(out / "timing.json", {"method": sol.method, "solve_time": sol.solve_time,
                                      "per_iteration": [r.solve_time for r in sol.ledger.records]})
    if not args.no_figures:
        from .plotting import plot_ledger, plot_trajectories

        plot_trajectories(trajs, out / "trajectory.png")
        plot_ledger(sol.ledger.records, out / "ccp.png")
    print(f"{sol.method}: status={sol.status} cost={sol.objective:.6g} iterations={sol.ledger.iterations} "
          f"time={sol.solve_time:.3f}s -> {out / 'solution.json'}")
    final = sol.ledger.records[-1]
    if sol.status != "converged" and final.slack_sum > cfg.ccp.slack_tol:
        print(f"no feasible point found: slack {final.slack_sum:.3e} after {sol.ledger.iterations} iterations",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


class _Controls:
    def __init__(self, controls):
        self.controls = controls


def cmd_validate(args) -> int:
    from .validation import validate_solution

    cfg = load_config(args.config)
    sol_path = Path(args.solution) if args.solution else Path(args.out) / "solution.json"
    try:
        doc = json.loads(sol_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read solution {sol_path}: {exc}") from None
    if doc.get("format") != SOLUTION_FORMAT:
        raise UsageError(f"{sol_path} is not a solution file")
    if doc.get("config_hash") != cfg.config_hash:
        raise UsageError(f"config hash mismatch: solution was produced from {doc.get('config_hash', '?')[:12]}, "
                         f"config is {cfg.config_hash[:12]}")
    spec = cfg.spec
    try:
        controls = [np.asarray(doc["controls"][str(v.id)], dtype=float).ravel() for v in spec.vehicles]
    except KeyError as exc:
        raise UsageError(f"solution has no controls for vehicle {exc}") from None
    trials = args.trials or cfg.validation_trials
    seed = cfg.validation_seed if args.seed is None else args.seed
    report = validate_solution(_Controls(controls), spec, cfg.validation_sampler(seed), trials, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    body = report.to_dict()
    body.pop("elapsed")
    body.update({"config_hash": cfg.config_hash, "method": doc.get("method"), "passed": report.passed()})
    _write_json(out / "validation.json", body)
    _write_rows(out / "validation.csv", report.table_rows())
    for row in report.table_rows():
        print(f"{row['constraint']:<18} {row['ratio']}  (threshold {row['threshold']}, {trials} draws)")
    return EXIT_OK if report.passed() else EXIT_VALIDATION


def cmd_bound_check(args) -> int:
    sizes = _int_list(args.samples)
    lambdas = _float_list(args.lambdas)
    if any(ns < 2 for ns in sizes) or any(lam <= 0 for lam in lambdas):
        raise UsageError("sample sizes must be >= 2 and lambdas positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ns in sizes:
        b = SampleBound(ns)
        th = b.theta()
        grid = sorted(set(lambdas) | {th})
        for lam in grid:
            rows.append({"n_samples": ns, "lambda": repr(float(lam)), "f": repr(float(b.f(lam))),
                         "floor": repr(b.floor), "cantelli": repr(1.0 / (lam * lam + 1.0)),
                         "marker": "convexity_threshold" if lam == th else ""})
        print(f"N_s={ns}: floor 1/{ns + 1} = {b.floor:.6g}, convexity threshold {th:.10f}, "
              f"f({lambdas[-1]:g}) = {float(b.f(lambdas[-1])):.6g}")
    _write_rows(out / "bound_table.csv", rows)
    if not args.no_figures:
        from .plotting import plot_bound_curves

        plot_bound_curves(sizes, np.linspace(min(lambdas), max(lambdas), 400), out / "bound_curves.png")
    if args.empirical is None:
        return EXIT_OK

    from .validation import DISTRIBUTIONS, tail_suite

    dists = args.empirical or list(DISTRIBUTIONS)
    bad = [d for d in dists if d not in DISTRIBUTIONS]
    if bad:
        raise UsageError(f"unknown distributions {bad}; choose from {list(DISTRIBUTIONS)}")
    if args.trials < 10_000:
        raise UsageError("tail tests need at least 10000 trials")
    tail_lambdas = _float_list(args.tail_lambdas)
    reports = tail_suite(dists, sizes, tail_lambdas, args.trials, args.seed or 0)
    _write_rows(out / "tail_tests.csv", [row for r in reports for row in r.rows()])
    if not args.no_figures:
        from .plotting import plot_tail_reports

        plot_tail_reports(reports, out / "tail_tests.png")
    failed = [(r.distribution, r.n_samples) for r in reports if not r.all_passed]
    print(f"tail tests: {len(reports) - len(failed)}/{len(reports)} (distribution, N_s) blocks passed")
    for d, ns in failed:
        print(f"  FAILED {d} N_s={ns}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_VALIDATION


def cmd_gen_samples(args) -> int:
    cfg = load_config(args.config)
    if cfg.generator is None:
        raise UsageError("config has no sample generator")
    count = cfg.sample_count if args.count is None else args.count
    if count < 2:
        raise UsageError(f"need at least 2 samples, got {count}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec
    for s, v in zip(cfg.load_samples(args.seed, count), spec.vehicles):
        path = out / f"samples_v{v.id}.csv"
        write_csv(s, path, spec.N, spec.system.n)
        print(f"vehicle {v.id}: {count} samples -> {path}")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccsoc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a scenario and write solution.json and trajectory.csv")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=".")
    s.add_argument("--seed", type=int, help="override the sample generator seed")
    s.add_argument("--method", choices=("proposed", "scenario", "cantelli"), default="proposed")
    s.add_argument("--risk-mode", choices=("uniform", "pwl"))
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="Monte Carlo check of a solution against fresh disturbances")
    v.add_argument("--config", required=True)
    v.add_argument("--solution", help="solution JSON (default: <out>/solution.json)")
    v.add_argument("--out", default=".")
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bound-check", help="tabulate the tail bound and optionally test it empirically")
    b.add_argument("--samples", default="10,100,1000", help="comma list of sample sizes")
    b.add_argument("--lambdas", default="0.1:20:200", help="comma list or start:stop:count")
    b.add_argument("--empirical", nargs="*", metavar="DIST", help="run tail tests (default: all distributions)")
    b.add_argument("--tail-lambdas", default="0.5,1,2,4")
    b.add_argument("--trials", type=int, default=100_000)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", default=".")
    b.add_argument("--no-figures", action="store_true")
    b.set_defaults(func=cmd_bound_check)

    g = sub.add_parser("gen-samples", help="write synthetic disturbance CSVs, one per vehicle")
    g.add_argument("--config", required=True)
    g.add_argument("--count", type=int, help="override the sample count")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_gen_samples)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RiskTooSmallForSampleSize as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RISK
    except InfeasibleSubproblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except BackendFailure as exc:
        print(f"error: solver backend failed: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, UsageError, DimensionError, ParseError, DegenerateSampleError, PsdViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
