"""Scenario configuration files (YAML) with line-aware diagnostics.

See README.md for the full grammar. Every field error is reported as
``<file>:<line>: <dotted.path>: <message>``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import (
    GEO_RADIUS,
    MU_EARTH,
    CircularElements,
    DimensionError,
    LtiSystem,
    VehicleState,
    cwh_system,
    relative_state_from_elements,
)
from .problem import RISK_MODES, Obstacle, ScenarioSpec, Separation, TargetSetConstraint, box_target
from .sampling import KINDS, DisturbanceSampleSet, gaussian_covariance, ingest_csv, synth_disturbances
from .solver import CcpConfig, CvxpyBackend

TOP_KEYS = {"name", "system", "horizon", "chief", "vehicles", "controls", "targets", "obstacles",
            "separation", "thresholds", "risk", "samples", "validation", "ccp", "backend"}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent-only floats such as ``1e-5``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                    |[-+]?\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None, file: str | None = None):
        self.field = path
        self.line = line
        self.file = file
        where = f"{file or '<config>'}:{line if line is not None else '?'}"
        super().__init__(f"{where}: {path}: {message}" if path else f"{where}: {message}")


def _node_lines(node, prefix=()) -> dict:
    """Map key paths to 1-based source lines using the composed YAML tree."""
    out = {prefix: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            out.update(_node_lines(value, prefix + (key.value,)))
            out.setdefault(prefix + (key.value,), key.start_mark.line + 1)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            out.update(_node_lines(value, prefix + (i,)))
    return out


def _fmt(path: tuple) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s


class _Reader:
    """Typed accessors that raise ConfigError with the offending field and line."""

    def __init__(self, data: dict, lines: dict, file: str):
        self.data = data
        self.lines = lines
        self.file = file

    def error(self, path: tuple, message: str) -> ConfigError:
        line = None
        for cut in range(len(path), -1, -1):
            if path[:cut] in self.lines:
                line = self.lines[path[:cut]]
                break
        return ConfigError(message, _fmt(path), line, self.file)

    def get(self, path: tuple, default=...):
        node = self.data
        for p in path:
            try:
                node = node[p]
            except (KeyError, IndexError, TypeError):
                if default is ...:
                    raise self.error(path, "required field is missing") from None
                return default
        if node is None and default is not ...:
            return default
        return node

    def number(self, path, default=..., positive=False, integer=False):
        v = self.get(path, default)
        if v is None:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(path, f"expected a number, got {v!r}")
        if integer and int(v) != v:
            raise self.error(path, f"expected an integer, got {v!r}")
        if positive and not v > 0:
            raise self.error(path, f"must be positive, got {v!r}")
        return int(v) if integer else float(v)

    def vector(self, path, default=..., length=None):
        v = self.get(path, default)
        if v is None:
            return v
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v] * (length or 1)
        if not isinstance(v, list) or not all(isinstance(a, (int, float)) and not isinstance(a, bool)
                                              for a in v):
            raise self.error(path, "expected a list of numbers")
        if length is not None and len(v) != length:
            raise self.error(path, f"expected {length} entries, got {len(v)}")
        return np.asarray(v, dtype=float)

    def matrix(self, path, cols=None):
        v = self.get(path)
        if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
            raise self.error(path, "expected a nonempty list of rows")
        width = len(v[0]) if cols is None else cols
        for i, row in enumerate(v):
            if len(row) != width:
                raise self.error(path + (i,), f"row has {len(row)} entries, expected {width}")
            if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in row):
                raise self.error(path + (i,), "row entries must be numbers")
        return np.asarray(v, dtype=float)


@dataclass
class ScenarioConfig:
    spec: ScenarioSpec
    path: Path
    raw: dict
    config_hash: str
    sample_count: int
    sample_source: dict  # {"generator": {...}} or {"csv": [paths]}
    validation_source: dict
    validation_trials: int
    validation_seed: int
    ccp: CcpConfig
    backend_opts: dict = field(default_factory=dict)

    def backend(self) -> CvxpyBackend:
        opts = dict(self.backend_opts)
        return CvxpyBackend(opts.pop("solver", "CLARABEL"), **opts)

    @property
    def generator(self) -> dict | None:
        return self.sample_source.get("generator")

    def sample_seed(self, override: int | None = None) -> int | None:
        gen = self.generator
        if gen is None:
            return None
        return int(override) if override is not None else int(gen["seed"])

    def load_samples(self, seed: int | None = None, count: int | None = None) -> list[DisturbanceSampleSet]:
        spec = self.spec
        N, n = spec.N, spec.system.n
        if "csv" in self.sample_source:
            return [ingest_csv(p, N, n, vehicle=v.id) for p, v in zip(self.sample_source["csv"], spec.vehicles)]
        gen = self.generator
        count = self.sample_count if count is None else count
        return [synth_disturbances(gen["kind"], gen, count, self.sample_seed(seed), N, n, vehicle=v.id)
                for v in spec.vehicles]

    def validation_sampler(self, seed: int | None = None):
        from .validation import generator_sampler, table_sampler

        spec = self.spec
        src = self.validation_source
        if "csv" in src:
            tables = [ingest_csv(p, spec.N, spec.system.n, v.id).samples for p, v in zip(src["csv"], spec.vehicles)]
            return table_sampler(tables)
        gen = src["generator"]
        return generator_sampler(gen["kind"], gen, spec.n_vehicles, spec.N, spec.system.n,
                                 self.validation_seed if seed is None else int(seed))

    def true_moments(self):
        """Exact disturbance mean and covariance, available for the Gaussian generator only."""
        gen = self.generator
        if gen is None or gen["kind"] != "gaussian":
            raise ConfigError("the analytic baseline needs a gaussian sample generator", "samples.generator",
                              None, str(self.path))
        mean, cov = gaussian_covariance(gen, self.spec.N, self.spec.system.n)
        return [mean] * self.spec.n_vehicles, [cov] * self.spec.n_vehicles


def _parse_generator(r: _Reader, path: tuple, n: int, need_seed: bool = True) -> dict:
    kind = r.get(path + ("kind",))
    if kind not in KINDS:
        raise r.error(path + ("kind",), f"unknown generator {kind!r}; choose from {list(KINDS)}")
    g = r.get(path)
    if "scale" in g and "variance" in g:
        raise r.error(path, "give either scale or variance, not both")
    if "variance" in g:
        var = r.vector(path + ("variance",), length=n)
        if np.any(var < 0):
            raise r.error(path + ("variance",), "variances must be nonnegative")
        scale = np.sqrt(var)
    else:
        scale = r.vector(path + ("scale",), 1.0, length=n)
        if np.any(scale < 0):
            raise r.error(path + ("scale",), "scales must be nonnegative")
    out = {"kind": kind, "scale": scale.tolist(), "mean": r.vector(path + ("mean",), 0.0, length=n).tolist()}
    for key in ("shape", "weight", "separation", "width"):
        if key in g:
            out[key] = r.number(path + (key,))
    if need_seed or "seed" in g:
        out["seed"] = r.number(path + ("seed",), integer=True)
    unknown = set(g) - {"kind", "scale", "variance", "mean", "shape", "weight", "separation", "width", "seed"}
    if unknown:
        raise r.error(path, f"unknown generator keys {sorted(unknown)}")
    return out


def _csv_paths(r: _Reader, path: tuple, base: Path, count: int) -> list[Path]:
    paths = r.get(path)
    if isinstance(paths, str):
        paths = [paths]
    if not isinstance(paths, list) or len(paths) != count:
        raise r.error(path, f"expected one csv path per vehicle ({count})")
    out = []
    for i, p in enumerate(paths):
        full = (base / str(p)).resolve()
        if not full.is_file():
            raise r.error(path + (i,), f"file not found: {full}")
        out.append(full)
    return out


def _elements(r: _Reader, path: tuple) -> CircularElements:
    r.get(path)
    return CircularElements(
        radius_km=r.number(path + ("radius_km",)),
        inclination_deg=r.number(path + ("inclination_deg",), 0.0),
        raan_deg=r.number(path + ("raan_deg",), 0.0),
        arg_perigee_deg=r.number(path + ("arg_perigee_deg",), 0.0),
        true_anomaly_deg=r.number(path + ("true_anomaly_deg",), 0.0),
    )


def parse_config(text: str, file: str = "<config>", base_dir: Path | None = None) -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML: {getattr(exc, 'problem', exc)}", "",
                          mark.line + 1 if mark else None, file) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", "", 1, file)
    r = _Reader(data, _node_lines(node), file)
    base = base_dir or Path(".")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise r.error((sorted(unknown)[0],), "unknown top-level key")

    # system
    sysd = r.get(("system",))
    if not isinstance(sysd, dict):
        raise r.error(("system",), "expected a mapping")
    if "cwh" in sysd:
        c = ("system", "cwh")
        r.get(c, {})
        system = cwh_system(r.number(c + ("radius_km",), GEO_RADIUS, positive=True),
                            r.number(c + ("mu",), MU_EARTH, positive=True),
                            r.number(c + ("dt",), 60.0, positive=True))
    else:
        A = r.matrix(("system", "A"))
        B = r.matrix(("system", "B"))
        try:
            system = LtiSystem(A, B, r.number(("system", "dt"), 1.0, positive=True))
        except (DimensionError, ValueError) as exc:
            raise r.error(("system",), str(exc)) from None
    n, m = system.n, system.m
    N = r.number(("horizon",), integer=True, positive=True)

    # vehicles
    vlist = r.get(("vehicles",))
    if not isinstance(vlist, list) or not vlist:
        raise r.error(("vehicles",), "expected a nonempty list")
    chief = _elements(r, ("chief",)) if "chief" in data else None
    vehicles = []
    for i, vd in enumerate(vlist):
        p = ("vehicles", i)
        vid = r.number(p + ("id",), integer=True)
        if "x0" in (vd or {}):
            x0 = r.vector(p + ("x0",), length=n)
        elif "elements" in (vd or {}):
            if chief is None:
                raise r.error(p + ("elements",), "element offsets need a chief block")
            if n != 6:
                raise r.error(p + ("elements",), "element offsets need the 6-state CWH model")
            x0 = relative_state_from_elements(chief, _elements(r, p + ("elements",)),
                                              r.number(("system", "cwh", "mu"), MU_EARTH))
        else:
            raise r.error(p, "vehicle needs x0 or elements")
        vehicles.append(VehicleState(vid, x0))
    ids = [v.id for v in vehicles]

    # controls
    lower = r.vector(("controls", "lower"), length=m)
    upper = r.vector(("controls", "upper"), length=m)
    weight = r.vector(("controls", "weight"), 1.0, length=m)

    # targets
    targets = []
    for i, td in enumerate(r.get(("targets",), []) or []):
        p = ("targets", i)
        vid = r.number(p + ("vehicle",), integer=True)
        if vid not in ids:
            raise r.error(p + ("vehicle",), f"unknown vehicle id {vid}")
        ks = r.get(p + ("k",))
        ks = ks if isinstance(ks, list) else [ks]
        for j, k in enumerate(ks):
            if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= N:
                raise r.error(p + ("k",), f"time step {k!r} must be an integer in 1..{N}")
        if "box" in td:
            center = r.vector(p + ("box", "center"), length=n)
            half = r.vector(p + ("box", "half_width"), length=n)
            if np.any(half < 0):
                raise r.error(p + ("box", "half_width"), "half widths must be nonnegative")
            targets += [box_target(vid, k, center, half) for k in ks]
        else:
            G = r.matrix(p + ("G",), cols=n)
            h = r.vector(p + ("h",), length=G.shape[0])
            targets += [TargetSetConstraint(vid, k, G, h) for k in ks]

    # obstacles and separation
    obstacles = []
    for i, od in enumerate(r.get(("obstacles",), []) or []):
        p = ("obstacles", i)
        S = r.matrix(p + ("S",), cols=n)
        rad = r.number(p + ("r",), positive=True)
        if "trajectory" in od:
            traj = r.matrix(p + ("trajectory",), cols=n)
            if traj.shape[0] != N:
                raise r.error(p + ("trajectory",), f"expected {N} rows, got {traj.shape[0]}")
        else:
            traj = np.tile(r.vector(p + ("position",), length=n), (N, 1))
        obstacles.append(Obstacle(S, rad, traj))
    separations = []
    if r.get(("separation",), None) is not None:
        separations.append(Separation(r.matrix(("separation", "S"), cols=n),
                                      r.number(("separation", "r"), positive=True)))

    # thresholds and risk
    th = {}
    for key in ("alpha", "beta", "gamma"):
        v = r.number(("thresholds", key), 0.05)
        if not 0 < v < 1:
            raise r.error(("thresholds", key), f"must lie in (0, 1), got {v}")
        th[key] = v
    mode = r.get(("risk", "mode"), "uniform")
    if mode not in RISK_MODES:
        raise r.error(("risk", "mode"), f"must be one of {list(RISK_MODES)}")
    knots = r.number(("risk", "knots"), 17, integer=True)
    if knots < 2:
        raise r.error(("risk", "knots"), "need at least 2 knots")
    lam_max = r.number(("risk", "lambda_max"), None, positive=True)

    try:
        spec = ScenarioSpec(system, N, tuple(vehicles), lower, upper, tuple(targets), tuple(obstacles),
                            tuple(separations), th["alpha"], th["beta"], th["gamma"], weight, mode, knots,
                            lam_max, name=str(r.get(("name",), "scenario")))
    except (DimensionError, ValueError) as exc:
        raise ConfigError(str(exc), "", None, file) from None

    # samples
    sd = r.get(("samples",))
    count = r.number(("samples", "count"), None, integer=True)
    if "csv" in sd and "generator" in sd:
        raise r.error(("samples",), "give either csv or generator, not both")
    if "csv" in sd:
        source = {"csv": _csv_paths(r, ("samples", "csv"), base, len(vehicles))}
    elif "generator" in sd:
        source = {"generator": _parse_generator(r, ("samples", "generator"), n)}
        if count is None:
            raise r.error(("samples", "count"), "required with a generator")
        if count < 2:
            raise r.error(("samples", "count"), f"need at least 2 samples, got {count}")
    else:
        raise r.error(("samples",), "needs csv or generator")

    # validation
    vd = r.get(("validation",), {}) or {}
    trials = r.number(("validation", "trials"), 10_000, integer=True, positive=True)
    vseed = r.number(("validation", "seed"), 2024, integer=True)
    if "csv" in vd:
        vsource = {"csv": _csv_paths(r, ("validation", "csv"), base, len(vehicles))}
    elif "generator" in vd:
        vsource = {"generator": _parse_generator(r, ("validation", "generator"), n, need_seed=False)}
    elif "generator" in source:
        vsource = {"generator": {k: v for k, v in source["generator"].items() if k != "seed"}}
    else:
        raise r.error(("validation",), "csv samples need a validation csv or generator")

    # solver settings
    cd = r.get(("ccp",), {}) or {}
    allowed = {"max_iterations", "objective_tol", "slack_tol", "slack_weight", "slack_growth", "slack_weight_cap"}
    if set(cd) - allowed:
        raise r.error(("ccp",), f"unknown keys {sorted(set(cd) - allowed)}")
    try:
        ccp = CcpConfig(**{k: (int(v) if k == "max_iterations" else float(v)) for k, v in cd.items()})
    except (TypeError, ValueError) as exc:
        raise r.error(("ccp",), str(exc)) from None
    backend = dict(r.get(("backend",), {}) or {})

    raw_for_hash = json.loads(json.dumps(data, sort_keys=True, default=str))
    h = hashlib.sha256(json.dumps(raw_for_hash, sort_keys=True, separators=(",", ":")).encode())
    for src in (source, vsource):
        for p in src.get("csv", []):
            h.update(Path(p).read_bytes())
    return ScenarioConfig(spec, Path(file), data, h.hexdigest(), count or 0, source, vsource, trials, vseed,
                          ccp, backend)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "", None, str(path)) from None
    return parse_config(text, str(path), path.parent)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``gaussian_rendezvous``."""
    p = Path(__file__).parent / "configs" / (name if name.endswith(".cfg") else name + ".cfg")
    if not p.is_file():
        raise FileNotFoundError(p)
    return p
