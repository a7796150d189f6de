import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impure_mm.errors import ConfigError, InputError
from impure_mm.graphs import TrueDag
from impure_mm.sem import (
    CovMatrix,
    DataMatrix,
    LinearSem,
    cov_from_text,
    cov_to_text,
    data_from_csv,
    data_to_csv,
    implied_covariance,
    random_sem,
    sample,
    sample_covariance,
    sem_from_text,
    sem_to_text,
)
from impure_mm.tetrad import tetrad_differences


def one_factor(k=4):
    obs = [f"Y{i}" for i in range(1, k + 1)]
    return TrueDag([("X", "latent")] + [(y, "observed") for y in obs], [("X", y) for y in obs])


def two_factor():
    nodes = [("X1", "latent"), ("X2", "latent")] + [(f"Y{i}", "observed") for i in range(1, 7)]
    edges = [("X1", "X2")] + [("X1", f"Y{i}") for i in (1, 2, 3)] + [("X2", f"Y{i}") for i in (4, 5, 6)]
    return TrueDag(nodes, edges)


def test_hand_computed_one_factor():
    g = one_factor()
    m = LinearSem(g, {e: 1.0 for e in g.edges}, {"X": 1.0, **{y: 0.5 for y in g.observed}})
    c = implied_covariance(m)
    expect = np.full((4, 4), 1.0) + 0.5 * np.eye(4)
    np.testing.assert_allclose(c.values, expect, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_one_factor_tetrads_vanish(seed):
    c = implied_covariance(random_sem(one_factor(), seed))
    assert max(abs(d) for d in tetrad_differences(c, "Y1", "Y2", "Y3", "Y4")) < 1e-10


def test_random_sem_ranges_and_determinism():
    g = two_factor()
    assert random_sem(g, 5) == random_sem(g, 5)
    coefs, variances = [], []
    for seed in range(1500):
        m = random_sem(g, seed)
        coefs += list(m.coeffs.values())
        variances += list(m.error_vars.values())
    coefs = np.abs(np.array(coefs))
    assert len(coefs) >= 10**4
    assert coefs.min() >= 0.5 and coefs.max() <= 1.5
    assert 0 < min(variances) and max(variances) <= 0.5
    # both signs occur
    signs = np.sign([v for seed in range(50) for v in random_sem(g, seed).coeffs.values()])
    assert (signs > 0).any() and (signs < 0).any()


def test_random_sem_bad_range():
    with pytest.raises(InputError):
        random_sem(two_factor(), 0, coef_low=1.0, coef_high=0.5)
    with pytest.raises(InputError):
        random_sem(two_factor(), 0, var_high=0.0)


def test_linear_sem_validation():
    g = one_factor()
    with pytest.raises(InputError):
        LinearSem(g, {}, {n: 1.0 for n in g.names})
    with pytest.raises(InputError):
        LinearSem(g, {e: 1.0 for e in g.edges}, {**{n: 1.0 for n in g.names}, "X": 0.0})


def test_monte_carlo_matches_implied():
    m = random_sem(two_factor(), 11)
    s = sample_covariance(sample(m, 10**6, 3))
    sigma = implied_covariance(m).values
    assert np.all(np.abs(s.values - sigma) <= 0.02 * np.abs(sigma))


def test_sample_n1e5_within_3pct():
    m = random_sem(two_factor(), 2)
    s = sample_covariance(sample(m, 10**5, 1))
    sigma = implied_covariance(m).values
    assert np.all(np.abs(s.values - sigma) <= 0.03 * np.abs(sigma))


def test_sample_determinism_and_shape():
    m = random_sem(two_factor(), 1)
    a, b = sample(m, 200, 7), sample(m, 200, 7)
    assert a.values.shape == (200, 6)
    assert np.array_equal(a.values, b.values)
    with pytest.raises(InputError):
        sample(m, 0, 1)


def test_zero_coefficients_uncorrelated():
    g = two_factor()
    m = LinearSem(g, {e: 0.0 for e in g.edges}, {n: 0.3 for n in g.names})
    c = implied_covariance(m).values
    assert np.allclose(c - np.diag(np.diag(c)), 0.0)


def test_sample_covariance_small_cases():
    c = sample_covariance(DataMatrix(["a"], np.array([[0.0], [2.0]])))
    assert c.values[0, 0] == pytest.approx(2.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        c = sample_covariance(DataMatrix(["a", "b", "c"], np.array([[1.0, 1, 0], [2, 2, 1], [3, 3, 5], [4, 4, 2]])))
    assert c.rank_deficient and any("rank" in str(x.message) for x in w)
    with pytest.raises(InputError):
        sample_covariance(DataMatrix(["a", "b"], np.array([[1.0, 2.0]])))


def test_node_reordering_permutes_covariance():
    g = two_factor()
    m = random_sem(g, 4)
    names = list(reversed(g.names))
    g2 = TrueDag([(n, g.kind(n)) for n in names], list(g.edges))
    c1 = implied_covariance(m)
    c2 = implied_covariance(LinearSem(g2, m.coeffs, m.error_vars))
    np.testing.assert_allclose(c2.subset(c1.names).values, c1.values, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.2, 5.0))
def test_scaling_loadings_scales_block(seed, c):
    g = one_factor(5)
    m = random_sem(g, seed)
    scaled = LinearSem(g, {e: v * c for e, v in m.coeffs.items()}, m.error_vars)
    a, b = implied_covariance(m).values, implied_covariance(scaled).values
    off = ~np.eye(5, dtype=bool)
    np.testing.assert_allclose(b[off], c * c * a[off], rtol=1e-10)
    cov = implied_covariance(scaled)
    for q in itertools.combinations(g.observed, 4):
        assert max(abs(d) for d in tetrad_differences(cov, *q)) < 1e-10 * max(1.0, np.max(b) ** 2)


def test_cov_matrix_invariants():
    with pytest.raises(InputError):
        CovMatrix(["a", "b"], np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(InputError):
        CovMatrix(["a", "a"], np.eye(2))
    c = CovMatrix(["a", "b"], np.eye(2))
    assert c.is_positive_definite()
    with pytest.raises(InputError):
        c.index("z")


def test_file_round_trips():
    m = random_sem(two_factor(), 9)
    assert sem_from_text(sem_to_text(m)) == m
    c = implied_covariance(m)
    c.n = 200
    back = cov_from_text(cov_to_text(c))
    assert back.n == 200 and np.array_equal(back.values, c.values)
    d = sample(m, 10, 1)
    back = data_from_csv(data_to_csv(d))
    assert back.names == d.names and np.array_equal(back.values, d.values)


def test_cov_file_errors():
    with pytest.raises(ConfigError):
        cov_from_text("a,b\n1,0\n0,1\n")
    with pytest.raises(InputError, match="line 4"):
        cov_from_text("n=10\na,b\n1,0\n0,x\n")
    with pytest.raises(InputError, match="line 3"):
        data_from_csv("a,b\n1,2\n3\n")
