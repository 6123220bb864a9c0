"""Disturbance sample sets and the sample moments the reformulation needs.

All statistics use divisor N_s (no Bessel correction); the tail bound in
:mod:`ccsoc.bounds` is stated for exactly these statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ConcatenatedDynamics, DimensionError

PSD_REL_TOL = 1e-10


class DegenerateSampleError(ValueError):
    """Samples carry no spread (all equal), so no sample bound applies."""


class ParseError(ValueError):
    pass


class PsdViolationError(ValueError):
    pass


@dataclass(frozen=True)
class DisturbanceSampleSet:
    """N_s concatenated disturbance draws W^[j] for one vehicle, one per row."""

    samples: np.ndarray
    vehicle: int = 1
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if W.shape[0] < 2:
            raise DimensionError(f"need at least 2 samples, got {W.shape[0]}")
        if not np.all(np.isfinite(W)):
            raise ParseError("samples contain non-finite values")
        if np.all(W == W[0]):
            raise DegenerateSampleError(f"vehicle {self.vehicle}: all samples are identical")
        W.setflags(write=False)
        object.__setattr__(self, "samples", W)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def sample_mean_std_scalar(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise DimensionError("need at least 2 values")
    mean = x.mean()
    std = np.sqrt(np.mean((x - mean) ** 2))
    if std == 0.0:
        raise DegenerateSampleError("all values are equal")
    return float(mean), float(std)


def psd_sqrt(M: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Symmetric square root R with R R = M, tolerating round-off negatives."""
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    scale = max(np.max(np.abs(vals)), np.finfo(float).tiny)
    if vals.min() < -PSD_REL_TOL * scale:
        raise PsdViolationError(f"{what} has eigenvalue {vals.min():.3e} (norm {scale:.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class MomentCache:
    """Sample mean and covariance of the concatenated disturbance of one vehicle."""

    mean: np.ndarray
    cov: np.ndarray
    n_samples: int

    @classmethod
    def from_samples(cls, sset: DisturbanceSampleSet) -> "MomentCache":
        W = sset.samples
        mean = W.mean(axis=0)
        Wc = W - mean
        cov = Wc.T @ Wc / W.shape[0]
        cov = 0.5 * (cov + cov.T)
        return cls(mean=mean, cov=cov, n_samples=W.shape[0])


def halfspace_moments(cache: MomentCache, dyn: ConcatenatedDynamics, G_row, k: int,
                      x0, U=None) -> tuple[np.ndarray, float, float]:
    """Sample mean and standard deviation of G x(k).

    Returns ``(grad, const, std)`` where the mean is ``grad @ U + const`` and
    ``std`` does not depend on the control. If ``U`` is given the mean value
    can be formed directly by the caller.
    """
    G_row = np.asarray(G_row, dtype=float).ravel()
    if G_row.size != dyn.n:
        raise DimensionError(f"halfspace normal must have length {dyn.n}")
    if not 1 <= k <= dyn.N:
        raise DimensionError(f"time step {k} outside 1..{dyn.N}")
    grad = G_row @ dyn.C[k]
    gd = G_row @ dyn.D[k]
    const = float(G_row @ dyn.powers[k] @ np.asarray(x0, dtype=float) + gd @ cache.mean)
    var = float(gd @ cache.cov @ gd)
    if var < -1e-12:
        raise PsdViolationError(f"halfspace variance is negative ({var:.3e})")
    return grad, const, float(np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class QuadraticFormMoments:
    """Moments of z and z'z giving mean and std of ||zbar + z||^2 as norms.

    mean(||zbar + z||^2) = || R_mean [zbar; 1] ||^2
    std(||zbar + z||^2)  = || R_std  [zbar; 1] ||
    """

    z_mean: np.ndarray
    z_cov: np.ndarray
    m2: float
    v2: float
    c: np.ndarray
    n_samples: int | None = None

    @property
    def q(self) -> int:
        return self.z_mean.size

    @property
    def M_mean(self) -> np.ndarray:
        q = self.q
        M = np.empty((q + 1, q + 1))
        M[:q, :q] = np.eye(q)
        M[:q, q] = M[q, :q] = self.z_mean
        M[q, q] = self.m2
        return M

    @property
    def M_std(self) -> np.ndarray:
        q = self.q
        M = np.empty((q + 1, q + 1))
        M[:q, :q] = 4.0 * self.z_cov
        M[:q, q] = M[q, :q] = 2.0 * self.c
        M[q, q] = self.v2
        return M

    @property
    def R_mean(self) -> np.ndarray:
        return psd_sqrt(self.M_mean, "mean moment matrix")

    @property
    def R_std(self) -> np.ndarray:
        return psd_sqrt(self.M_std, "std moment matrix")

    def mean_at(self, zbar) -> float:
        zbar = np.asarray(zbar, dtype=float)
        return float(zbar @ zbar + 2.0 * self.z_mean @ zbar + self.m2)

    def std_at(self, zbar) -> float:
        zbar = np.asarray(zbar, dtype=float)
        var = 4.0 * zbar @ self.z_cov @ zbar + 4.0 * self.c @ zbar + self.v2
        return float(np.sqrt(max(var, 0.0)))


def quadratic_moments_from_z(z: np.ndarray) -> QuadraticFormMoments:
    """Moments from stochastic parts z^[j], one sample per row."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    ns = z.shape[0]
    zm = z.mean(axis=0)
    zc = z - zm
    V = zc.T @ zc / ns
    s = np.einsum("ij,ij->i", z, z)
    m2 = s.mean()
    v2 = np.mean((s - m2) ** 2)
    if v2 <= 0.0:
        raise DegenerateSampleError("z'z is constant over the samples")
    c = zc.T @ (s - m2) / ns
    return QuadraticFormMoments(z_mean=zm, z_cov=0.5 * (V + V.T), m2=float(m2),
                                v2=float(v2), c=c, n_samples=ns)


def quadratic_form_moments(samples_i: DisturbanceSampleSet, samples_j: DisturbanceSampleSet | None,
                           dyn: ConcatenatedDynamics, S, k: int) -> QuadraticFormMoments:
    """Moments of z^[j] = S D(k) (W_i^[j] - W_j^[j]); obstacle form when ``samples_j`` is None.

    Vehicles are paired by sample index, so both sets need the same N_s.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != dyn.n:
        raise DimensionError(f"S must have {dyn.n} columns")
    W = samples_i.samples
    if samples_j is not None:
        if samples_j.n_samples != samples_i.n_samples:
            raise DimensionError("paired vehicles need equal sample counts")
        W = W - samples_j.samples
    z = W @ (S @ dyn.D[k]).T
    return quadratic_moments_from_z(z)


def gaussian_quadratic_moments(mean, cov) -> QuadraticFormMoments:
    """Exact moments for z ~ Normal(mean, cov).

    E[z'z] = |mu|^2 + tr(S), Var(z'z) = 4 mu'S mu + 2 tr(S^2), Cov(z, z'z) = 2 S mu.
    """
    mu = np.asarray(mean, dtype=float).ravel()
    Sig = np.atleast_2d(np.asarray(cov, dtype=float))
    Sig = 0.5 * (Sig + Sig.T)
    v2 = 4.0 * mu @ Sig @ mu + 2.0 * np.trace(Sig @ Sig)
    if v2 <= 0.0:
        raise DegenerateSampleError("Gaussian quadratic form has zero variance")
    return QuadraticFormMoments(z_mean=mu, z_cov=Sig, m2=float(mu @ mu + np.trace(Sig)),
                                v2=float(v2), c=2.0 * Sig @ mu)


# --- CSV ingestion ----------------------------------------------------------

def csv_header(N: int, n: int) -> list[str]:
    return [f"w_t{k}_d{d}" for k in range(N) for d in range(1, n + 1)]


def write_csv(sset: DisturbanceSampleSet, path, N: int, n: int) -> None:
    if sset.dim != N * n:
        raise DimensionError(f"sample dimension {sset.dim} != N*n = {N * n}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(N, n))
        for row in sset.samples:
            w.writerow([repr(float(v)) for v in row])


def ingest_csv(path, N: int, n: int, vehicle: int = 1) -> DisturbanceSampleSet:
    """Read one vehicle's samples; header must be ``w_t{k}_d{dim}`` in W order."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = csv_header(N, n)
    if len(header) != len(expected):
        raise DimensionError(f"{path}: {len(header)} columns, expected {len(expected)}")
    if header != expected:
        bad = next(i for i, (a, b) in enumerate(zip(header, expected)) if a != b)
        raise ParseError(f"{path}: column {bad + 1} is {header[bad]!r}, expected {expected[bad]!r}")
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    data = np.empty((len(body), len(expected)))
    for i, r in enumerate(body):
        if len(r) != len(expected):
            raise DimensionError(f"{path}: line {i + 2} has {len(r)} fields, expected {len(expected)}")
        try:
            data[i] = [float(c) for c in r]
        except ValueError as exc:
            raise ParseError(f"{path}: line {i + 2}: {exc}") from None
    if data.shape[0] < 2:
        raise DimensionError(f"{path}: need at least 2 sample rows, got {data.shape[0]}")
    return DisturbanceSampleSet(data, vehicle=vehicle, provenance={"source": str(path)})


# --- synthetic generators ----------------------------------------------------

KINDS = ("gaussian", "mixture", "skewed", "uniform")


def _standard_draws(kind: str, rng: np.random.Generator, shape, params: dict) -> np.ndarray:
    """Zero-mean, unit-variance draws of the requested family."""
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), shape)
    if kind == "skewed":
        k = float(params.get("shape", 2.0))
        if k <= 0:
            raise ValueError("skewed generator needs shape > 0")
        return (rng.gamma(k, 1.0, shape) - k) / np.sqrt(k)
    if kind == "mixture":
        # two Gaussian components at +-sep, weight p on the positive one
        p = float(params.get("weight", 0.3))
        sep = float(params.get("separation", 2.0))
        width = float(params.get("width", 0.5))
        if not 0 < p < 1 or width <= 0:
            raise ValueError("mixture needs weight in (0, 1) and width > 0")
        pos = rng.random(shape) < p
        centers = np.where(pos, sep * (1 - p), -sep * p)
        x = centers + width * rng.standard_normal(shape)
        var = sep**2 * p * (1 - p) + width**2
        return x / np.sqrt(var)
    raise ValueError(f"unknown generator kind {kind!r}; choose from {KINDS}")


def synth_disturbances(kind: str, params: dict, n_samples: int, seed: int, N: int, n: int,
                       vehicle: int = 1) -> DisturbanceSampleSet:
    """Draw N_s concatenated disturbances of length N*n.

    ``params['scale']`` is the per-state standard deviation (length n, reused
    at every step), ``params['mean']`` an optional per-state offset. The
    Gaussian kind with scale sqrt([1e-5]*3 + [1e-8]*3) reproduces the
    rendezvous experiment's I_5 (x) blkdiag(1e-5 I3, 1e-8 I3) covariance.
    """
    if n_samples < 2:
        raise DimensionError(f"need at least 2 samples, got {n_samples}")
    scale = np.broadcast_to(np.asarray(params.get("scale", 1.0), dtype=float), (n,))
    mean = np.broadcast_to(np.asarray(params.get("mean", 0.0), dtype=float), (n,))
    if np.any(scale < 0):
        raise ValueError("scale must be nonnegative")
    rng = vehicle_rng(seed, vehicle)
    Z = _standard_draws(kind, rng, (n_samples, N, n), params)
    W = (mean + scale * Z).reshape(n_samples, N * n)
    return DisturbanceSampleSet(W, vehicle=vehicle,
                                provenance={"kind": kind, "seed": int(seed), "params": _plain(params)})


def vehicle_rng(seed: int, vehicle: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(vehicle), int(stream)))))


def gaussian_covariance(params: dict, N: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """True mean and covariance of W for a Gaussian generator spec."""
    scale = np.broadcast_to(np.asarray(params.get("scale", 1.0), dtype=float), (n,))
    mean = np.broadcast_to(np.asarray(params.get("mean", 0.0), dtype=float), (n,))
    return np.tile(mean, N), np.kron(np.eye(N), np.diag(scale**2))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in np.asarray(obj).tolist()] if isinstance(obj, np.ndarray) else [_plain(v) for v in obj]
    return obj
