"""Monte Carlo checks: chance-constraint satisfaction and empirical tail tests."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .bounds import SampleBound
from .problem import ScenarioSpec
from .sampling import DegenerateSampleError, _standard_draws

BLOCK = 2000

# Draws fresh disturbances: (block index, count) -> per-vehicle (count, N*n) arrays.
Sampler = Callable[[int, int], list]


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Generator for one fixed-size trial block, independent of execution order."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def generator_sampler(kind: str, params: dict, n_vehicles: int, N: int, n: int, seed: int) -> Sampler:
    """Fresh synthetic draws; stream 1 keeps them apart from the solve-time samples."""
    scale = np.broadcast_to(np.asarray(params.get("scale", 1.0), dtype=float), (n,))
    mean = np.broadcast_to(np.asarray(params.get("mean", 0.0), dtype=float), (n,))

    def draw(block: int, count: int) -> list:
        rng = block_rng(seed, block, stream=1)
        out = []
        for _ in range(n_vehicles):
            Z = _standard_draws(kind, rng, (count, N, n), params)
            out.append((mean + scale * Z).reshape(count, N * n))
        return out

    return draw


def table_sampler(tables: list[np.ndarray]) -> Sampler:
    """Replay held-out disturbance rows in order (one table per vehicle)."""

    def draw(block: int, count: int) -> list:
        lo = block * BLOCK
        if lo + count > min(t.shape[0] for t in tables):
            raise ValueError("not enough held-out rows for the requested number of trials")
        return [t[lo:lo + count] for t in tables]

    return draw


def zero_sampler(n_vehicles: int, dim: int) -> Sampler:
    return lambda block, count: [np.zeros((count, dim)) for _ in range(n_vehicles)]


@dataclass
class ValidationReport:
    ratios: dict[str, float]
    trials: int
    seed: int
    events: dict[str, str]
    marginal_min: dict[str, float] = field(default_factory=dict)
    thresholds: dict[str, float] = field(default_factory=dict)
    elapsed: float = 0.0

    def passed(self) -> bool:
        return all(self.ratios[g] >= 1.0 - self.thresholds[g] for g in self.ratios)

    def to_dict(self) -> dict:
        return asdict(self)

    def table_rows(self) -> list[dict]:
        names = {"target": "Target sets", "obstacle": "Avoid obstacles", "pairwise": "Avoid each other"}
        return [{"constraint": names.get(g, g), "group": g, "ratio": f"{r:.4f}",
                 "threshold": self.thresholds.get(g), "trials": self.trials}
                for g, r in self.ratios.items()]


def _group_satisfaction(spec: ScenarioSpec, dyn, U: list[np.ndarray], Ws: list[np.ndarray]):
    """Per-trial joint flags per group, and per-member satisfied counts per group."""
    X = []
    for v, veh in enumerate(spec.vehicles):
        mean = dyn.A_stack @ veh.x0 + dyn.C_stack @ U[v]
        X.append((mean[None, :] + Ws[v] @ dyn.D_stack.T).reshape(-1, dyn.N, dyn.n))
    count = Ws[0].shape[0]
    groups: dict[str, np.ndarray] = {}
    members: dict[str, list] = {}
    for tc in spec.targets:
        x = X[spec.vehicle_index(tc.vehicle)][:, tc.k - 1, :]
        member = x @ tc.G.T <= tc.h
        groups["target"] = groups.get("target", np.ones(count, dtype=bool)) & member.all(axis=1)
        members.setdefault("target", []).extend(member.sum(axis=0).tolist())
    for cc in spec.collision_constraints():
        xi = X[cc.i][:, cc.k - 1, :]
        other = cc.offset[None, :] if cc.j is None else X[cc.j][:, cc.k - 1, :]
        d = (xi - other) @ cc.S.T
        member = np.einsum("ij,ij->i", d, d) >= cc.r**2
        g = cc.group
        groups[g] = groups.get(g, np.ones(count, dtype=bool)) & member
        members.setdefault(g, []).append(int(member.sum()))
    return groups, {g: np.asarray(v) for g, v in members.items()}


def validate_solution(solution, spec: ScenarioSpec, sampler: Sampler, trials: int, seed: int = 0,
                      dyn=None) -> "ValidationReport":
    """Fraction of fresh disturbance draws under which each joint chance-constraint event holds."""
    if trials < 1:
        raise ValueError("need at least one trial")
    t0 = time.perf_counter()
    dyn = dyn or spec.dynamics()
    U = [np.asarray(u, dtype=float).ravel() for u in solution.controls]
    if len(U) != spec.n_vehicles or any(u.size != dyn.N * dyn.m for u in U):
        raise ValueError("solution controls do not match the scenario dimensions")
    counts: dict[str, int] = {}
    member_counts: dict[str, np.ndarray] = {}
    done, block = 0, 0
    while done < trials:
        count = min(BLOCK, trials - done)
        Ws = sampler(block, count)
        if any(W.shape != (count, dyn.N * dyn.n) for W in Ws):
            raise ValueError("sampler returned disturbances of the wrong shape")
        groups, members = _group_satisfaction(spec, dyn, U, Ws)
        for g, flags in groups.items():
            counts[g] = counts.get(g, 0) + int(flags.sum())
            member_counts[g] = member_counts.get(g, 0) + members[g]
        done += count
        block += 1
    events = {
        "target": "all target halfspaces of all vehicles at their steps hold together",
        "obstacle": "every vehicle clears every obstacle at every step",
        "pairwise": "every vehicle pair keeps its separation at every step",
    }
    thresholds = {"target": spec.alpha, "obstacle": spec.beta, "pairwise": spec.gamma}
    ratios = {g: counts[g] / trials for g in counts}
    return ValidationReport(
        ratios=ratios, trials=trials, seed=int(seed),
        events={g: events[g] for g in ratios},
        marginal_min={g: float(member_counts[g].min()) / trials for g in ratios},
        thresholds={g: thresholds[g] for g in ratios},
        elapsed=time.perf_counter() - t0,
    )


# --- tail tests -------------------------------------------------------------------

DISTRIBUTIONS = ("gaussian", "exponential", "uniform", "mixture")


def draw_scalar(dist: str, rng: np.random.Generator, shape) -> np.ndarray:
    if dist == "gaussian":
        return rng.standard_normal(shape)
    if dist == "exponential":
        return rng.exponential(1.0, shape)
    if dist == "uniform":
        return rng.random(shape)
    if dist == "mixture":
        # equal-weight components at -2 and +2 with unit spread
        return np.where(rng.random(shape) < 0.5, -2.0, 2.0) + rng.standard_normal(shape)
    if dist == "constant":
        return np.ones(shape)
    raise ValueError(f"unknown distribution {dist!r}")


@dataclass
class TailTestReport:
    distribution: str
    n_samples: int
    lambdas: list[float]
    trials: int
    exceed: list[float]
    bound: list[float]
    stderr: list[float]
    passed: list[bool]
    in_sample_exceed: list[float]
    in_sample_bound: list[float]
    in_sample_stderr: list[float]
    in_sample_passed: list[bool]
    lower_exceed: list[float]
    lower_passed: list[bool]

    @property
    def all_passed(self) -> bool:
        return all(self.passed) and all(self.in_sample_passed) and all(self.lower_passed)

    def rows(self) -> list[dict]:
        out = []
        for c, lam in enumerate(self.lambdas):
            out.append({
                "distribution": self.distribution, "n_samples": self.n_samples, "lambda": lam,
                "trials": self.trials, "exceed": self.exceed[c], "bound": self.bound[c],
                "stderr": self.stderr[c], "pass": self.passed[c],
                "lower_exceed": self.lower_exceed[c], "lower_pass": self.lower_passed[c],
                "in_sample_exceed": self.in_sample_exceed[c], "in_sample_bound": self.in_sample_bound[c],
                "in_sample_pass": self.in_sample_passed[c],
            })
        return out


def _band(p_hat, p_bound, trials):
    # binomial standard error evaluated at the bound (the null being tested)
    se = np.sqrt(np.clip(p_bound * (1 - p_bound), 0, None) / trials)
    return se, p_hat <= p_bound + 3.0 * se


def tail_test(dist: str, n_samples: int, lambdas, trials: int, seed: int = 0,
              chunk: int | None = None) -> TailTestReport:
    """Empirical P(x - mean >= lam * std) for a fresh x versus the bound f(lam).

    Each trial draws a new set of N_s samples and one extra independent x.
    The in-sample variant tests the first sample of the set against
    1 / (lam^2 + 1); the lower tail tests x - mean <= -lam * std against f.
    """
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if trials < 1e4:
        raise ValueError("tail tests need at least 10^4 trials")
    if lambdas.size == 0 or np.any(lambdas <= 0):
        raise ValueError("lambda grid must be nonempty and positive")
    bound = SampleBound(n_samples)
    chunk = chunk or max(1, min(trials, 4_000_000 // (n_samples + 1)))
    hi = np.zeros(lambdas.size, dtype=np.int64)
    lo = np.zeros(lambdas.size, dtype=np.int64)
    ins = np.zeros(lambdas.size, dtype=np.int64)
    done, block = 0, 0
    while done < trials:
        count = min(chunk, trials - done)
        rng = block_rng(seed, block, stream=n_samples)
        data = draw_scalar(dist, rng, (count, n_samples + 1))
        xs, fresh = data[:, :n_samples], data[:, n_samples]
        mean = xs.mean(axis=1)
        std = np.sqrt(np.mean((xs - mean[:, None]) ** 2, axis=1))
        if np.any(std == 0):
            raise DegenerateSampleError(f"{dist}: a sample set has zero spread")
        dev = (fresh - mean) / std
        dev_in = (xs[:, 0] - mean) / std
        hi += (dev[:, None] >= lambdas[None, :]).sum(axis=0)
        lo += (dev[:, None] <= -lambdas[None, :]).sum(axis=0)
        ins += (dev_in[:, None] >= lambdas[None, :]).sum(axis=0)
        done += count
        block += 1
    p_hi, p_lo, p_in = hi / trials, lo / trials, ins / trials
    fb = bound.f(lambdas)
    cb = 1.0 / (lambdas**2 + 1.0)
    se, ok = _band(p_hi, fb, trials)
    _, ok_lo = _band(p_lo, fb, trials)
    se_in, ok_in = _band(p_in, cb, trials)
    return TailTestReport(
        distribution=dist, n_samples=n_samples, lambdas=lambdas.tolist(), trials=trials,
        exceed=p_hi.tolist(), bound=np.atleast_1d(fb).tolist(), stderr=np.atleast_1d(se).tolist(),
        passed=np.atleast_1d(ok).tolist(),
        in_sample_exceed=p_in.tolist(), in_sample_bound=cb.tolist(), in_sample_stderr=se_in.tolist(),
        in_sample_passed=np.atleast_1d(ok_in).tolist(),
        lower_exceed=p_lo.tolist(), lower_passed=np.atleast_1d(ok_lo).tolist(),
    )


def tail_suite(dists=DISTRIBUTIONS, sample_sizes=(10, 100, 1000), lambdas=(0.5, 1.0, 2.0, 4.0),
               trials: int = 100_000, seed: int = 0) -> list[TailTestReport]:
    return [tail_test(d, ns, lambdas, trials, seed=seed + 7919 * i)
            for i, d in enumerate(dists) for ns in sample_sizes]
