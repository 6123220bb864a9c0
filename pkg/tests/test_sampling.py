import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccsoc.dynamics import DimensionError, concatenate, cwh_system
from ccsoc.sampling import (
    KINDS,
    DegenerateSampleError,
    DisturbanceSampleSet,
    MomentCache,
    ParseError,
    PsdViolationError,
    csv_header,
    gaussian_covariance,
    gaussian_quadratic_moments,
    halfspace_moments,
    ingest_csv,
    psd_sqrt,
    quadratic_form_moments,
    quadratic_moments_from_z,
    sample_mean_std_scalar,
    synth_disturbances,
    write_csv,
)

DYN = concatenate(cwh_system(), 3)
S_POS = np.hstack([np.eye(3), np.zeros((3, 3))])


def brute_moments(values):
    """Per-sample mean and divisor-N standard deviation."""
    v = np.asarray(values, dtype=float)
    m = v.sum() / v.size
    return m, np.sqrt(((v - m) ** 2).sum() / v.size)


def test_sample_statistics_use_divisor_n():
    m, s = sample_mean_std_scalar([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5
    assert s == pytest.approx(np.sqrt(1.25))
    with pytest.raises(DegenerateSampleError):
        sample_mean_std_scalar([2.0, 2.0, 2.0])
    with pytest.raises(DimensionError):
        sample_mean_std_scalar([1.0])


def test_sample_set_validation():
    with pytest.raises(DimensionError):
        DisturbanceSampleSet(np.ones((1, 4)))
    with pytest.raises(DegenerateSampleError):
        DisturbanceSampleSet(np.ones((5, 4)))
    with pytest.raises(ParseError):
        DisturbanceSampleSet(np.array([[0.0, np.nan], [1.0, 2.0]]))
    s = DisturbanceSampleSet(np.arange(8.0).reshape(4, 2))
    assert s.n_samples == 4 and s.dim == 2
    with pytest.raises(ValueError):
        s.samples[0, 0] = 3.0


@given(st.integers(0, 2**31), st.integers(2, 60), st.integers(1, 3))
def test_halfspace_moments_match_brute_force(seed, ns, k):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((ns, DYN.N * DYN.n)) * rng.uniform(0.1, 3.0)
    sset = DisturbanceSampleSet(W)
    cache = MomentCache.from_samples(sset)
    G = rng.standard_normal(6)
    x0 = rng.standard_normal(6)
    U = rng.standard_normal(DYN.N * DYN.m)
    grad, const, std = halfspace_moments(cache, DYN, G, k, x0)
    vals = np.array([G @ DYN.state(k, x0, U, w) for w in W])
    m, s = brute_moments(vals)
    assert grad @ U + const == pytest.approx(m, rel=1e-9, abs=1e-9)
    assert std == pytest.approx(s, rel=1e-9, abs=1e-12)


def test_halfspace_rejects_bad_inputs():
    cache = MomentCache.from_samples(synth_disturbances("gaussian", {}, 10, 0, 3, 6))
    with pytest.raises(DimensionError):
        halfspace_moments(cache, DYN, np.ones(5), 1, np.zeros(6))
    with pytest.raises(DimensionError):
        halfspace_moments(cache, DYN, np.ones(6), 0, np.zeros(6))


@given(st.integers(0, 2**31), st.integers(3, 80), st.integers(1, 4), st.floats(0.01, 100.0))
def test_quadratic_form_identities(seed, ns, q, spread):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((ns, q)) * spread + rng.standard_normal(q)
    zbar = rng.standard_normal(q) * spread * 3
    qm = quadratic_moments_from_z(z)
    vals = np.einsum("ij,ij->i", zbar + z, zbar + z)
    m, s = brute_moments(vals)
    y = np.append(zbar, 1.0)
    assert y @ qm.M_mean @ y == pytest.approx(m, rel=1e-9)
    assert np.linalg.norm(qm.R_mean @ y) ** 2 == pytest.approx(m, rel=1e-9)
    assert np.linalg.norm(qm.R_std @ y) == pytest.approx(s, rel=1e-7)
    assert qm.mean_at(zbar) == pytest.approx(m, rel=1e-9)
    assert qm.std_at(zbar) == pytest.approx(s, rel=1e-9)


def test_pairwise_moments_pair_by_index():
    a = synth_disturbances("uniform", {"scale": 0.3}, 50, 1, 3, 6, vehicle=1)
    b = synth_disturbances("uniform", {"scale": 0.3}, 50, 1, 3, 6, vehicle=2)
    qm = quadratic_form_moments(a, b, DYN, S_POS, 2)
    z = (a.samples - b.samples) @ (S_POS @ DYN.D[2]).T
    ref = quadratic_moments_from_z(z)
    np.testing.assert_allclose(qm.z_mean, ref.z_mean)
    assert qm.v2 == pytest.approx(ref.v2)
    c = synth_disturbances("uniform", {"scale": 0.3}, 40, 1, 3, 6, vehicle=3)
    with pytest.raises(DimensionError):
        quadratic_form_moments(a, c, DYN, S_POS, 2)
    with pytest.raises(DimensionError):
        quadratic_form_moments(a, None, DYN, np.eye(3), 2)


def test_psd_sqrt():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 3))
    M = A @ A.T  # rank 3, two zero eigenvalues up to round-off
    R = psd_sqrt(M)
    np.testing.assert_allclose(R, R.T)
    np.testing.assert_allclose(R @ R, M, atol=1e-10)
    with pytest.raises(PsdViolationError):
        psd_sqrt(np.diag([1.0, -0.1]))
    # round-off scale negatives are clamped
    R = psd_sqrt(np.diag([1.0, -1e-13]))
    assert R[1, 1] == 0.0


def test_degenerate_quadratic_form():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])  # |z| constant
    with pytest.raises(DegenerateSampleError):
        quadratic_moments_from_z(z)


def test_gaussian_moments_against_monte_carlo():
    rng = np.random.default_rng(42)
    q = 3
    mu = np.array([0.5, -1.0, 2.0])
    L = rng.standard_normal((q, q)) * 0.7
    cov = L @ L.T + 0.1 * np.eye(q)
    gm = gaussian_quadratic_moments(mu, cov)
    draws = rng.multivariate_normal(mu, cov, size=2_000_000)
    s = np.einsum("ij,ij->i", draws, draws)
    mc_mean, mc_var = s.mean(), s.var()
    mc_c = (draws - draws.mean(0)).T @ (s - mc_mean) / s.size
    se_mean = np.sqrt(mc_var / s.size)
    assert abs(gm.m2 - mc_mean) < 5 * se_mean
    assert gm.v2 == pytest.approx(mc_var, rel=1e-2)
    np.testing.assert_allclose(gm.c, mc_c, rtol=2e-2, atol=2e-2 * np.abs(gm.c).max())


def test_csv_roundtrip(tmp_path):
    s = synth_disturbances("mixture", {"scale": [1, 2, 3, 0.1, 0.2, 0.3]}, 25, 9, 3, 6)
    p = tmp_path / "w.csv"
    write_csv(s, p, 3, 6)
    header = p.read_text().splitlines()[0].split(",")
    assert header == csv_header(3, 6)
    assert header[:2] == ["w_t0_d1", "w_t0_d2"] and header[-1] == "w_t2_d6"
    back = ingest_csv(p, 3, 6)
    np.testing.assert_array_equal(back.samples, s.samples)


def test_csv_errors(tmp_path):
    hdr = ",".join(csv_header(1, 2))
    cases = {
        "cols.csv": ("w_t0_d1\n1\n2\n", DimensionError, "columns"),
        "name.csv": ("w_t0_d1,w_t0_d3\n1,2\n3,4\n", ParseError, "column 2"),
        "ragged.csv": (hdr + "\n1,2\n3\n", DimensionError, "line 3"),
        "text.csv": (hdr + "\n1,2\n3,x\n", ParseError, "line 3"),
        "short.csv": (hdr + "\n1,2\n", DimensionError, "at least 2"),
        "empty.csv": ("", ParseError, "empty"),
    }
    for name, (body, exc, msg) in cases.items():
        p = tmp_path / name
        p.write_text(body)
        with pytest.raises(exc, match=msg):
            ingest_csv(p, 1, 2)


@pytest.mark.parametrize("kind", KINDS)
def test_generators_are_standardised_and_reproducible(kind):
    params = {"scale": [2.0, 0.5], "mean": [1.0, -1.0], "shape": 1.5}
    a = synth_disturbances(kind, params, 20000, 5, 4, 2)
    b = synth_disturbances(kind, params, 20000, 5, 4, 2)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = synth_disturbances(kind, params, 20000, 5, 4, 2, vehicle=2)
    assert not np.array_equal(a.samples, c.samples)
    X = a.samples.reshape(-1, 2)
    np.testing.assert_allclose(X.mean(0), [1.0, -1.0], atol=0.03)
    np.testing.assert_allclose(X.std(0), [2.0, 0.5], rtol=0.03)


def test_skewed_generator_is_right_skewed():
    w = synth_disturbances("skewed", {"shape": 1.5}, 20000, 0, 1, 1).samples.ravel()
    skew = np.mean((w - w.mean()) ** 3) / w.std() ** 3
    assert skew == pytest.approx(2 / np.sqrt(1.5), rel=0.15)


def test_generator_errors():
    with pytest.raises(ValueError):
        synth_disturbances("cauchy", {}, 10, 0, 1, 1)
    with pytest.raises(DimensionError):
        synth_disturbances("gaussian", {}, 1, 0, 1, 1)


def test_gaussian_covariance_block_structure():
    mean, cov = gaussian_covariance({"scale": np.sqrt([1e-5] * 3 + [1e-8] * 3)}, 5, 6)
    assert mean.shape == (30,) and not mean.any()
    np.testing.assert_allclose(np.diag(cov), np.tile([1e-5] * 3 + [1e-8] * 3, 5))
    assert np.count_nonzero(cov - np.diag(np.diag(cov))) == 0
