import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from hdinfer import Dataset, adjust_pvalues, ols_low_dim_inference
from hdinfer.errors import RankError
from hdinfer.stats import (PVALUE_FLOOR, compatibility_diagnostic, max_statistic_pvalue,
                           normal_pvalue, repair_covariance)

pvectors = arrays(float, st.integers(1, 30), elements=st.floats(0.0, 1.0))


@pytest.mark.parametrize("method", ["bonferroni", "holm", "benjamini-yekutieli"])
def test_adjust_trivial_cases(method):
    np.testing.assert_array_equal(adjust_pvalues(np.ones(7), method), np.ones(7))
    np.testing.assert_allclose(adjust_pvalues([0.037], method), [0.037])


def test_holm_hand_example():
    np.testing.assert_allclose(adjust_pvalues([0.01, 0.04, 0.03], "holm"), [0.03, 0.06, 0.06])


def test_benjamini_yekutieli_hand_example():
    # harmonic number H_3 = 11/6; step-up from the largest p-value
    h = 11 / 6
    p = np.array([0.01, 0.04, 0.03])
    expected = [0.03 * h, 0.04 * h, 0.04 * h]
    np.testing.assert_allclose(adjust_pvalues(p, "benjamini-yekutieli"), expected)


def test_adjust_domain_check():
    with pytest.raises(ValueError):
        adjust_pvalues([0.1, 1.2])


@given(pvectors)
def test_holm_dominates_raw_and_preserves_order(p):
    holm = adjust_pvalues(p, "holm")
    assert np.all(holm >= p - 1e-15)
    assert np.all(holm <= adjust_pvalues(p, "bonferroni") + 1e-15)
    order = np.argsort(p, kind="mergesort")
    assert np.all(np.diff(holm[order]) >= -1e-15)
    # Holm dominates the Bonferroni factor on the ordered values (m - i + 1)·p_(i)
    m = p.size
    ranked = np.minimum(np.sort(p) * (m - np.arange(m)), 1.0)
    assert np.all(holm[order] >= ranked - 1e-15)


@given(pvectors)
def test_by_is_monotone_and_bounded(p):
    by = adjust_pvalues(p, "benjamini-yekutieli")
    order = np.argsort(p, kind="mergesort")
    assert np.all(np.diff(by[order]) >= -1e-15)
    assert np.all((by >= p - 1e-15) & (by <= 1.0))


def test_ols_exact_fit_hits_floor(rng):
    x = rng.standard_normal((20, 2))
    p = ols_low_dim_inference(x, 1.0 + x @ [1.0, -2.0]).pvalue
    assert np.all(p <= 1e-250) and np.all(p >= PVALUE_FLOOR)


def test_ols_orthogonal_hand_computation(rng):
    n = 40
    x = rng.standard_normal((n, 2))
    x = x - x.mean(axis=0)
    x, _ = np.linalg.qr(x)
    x *= np.sqrt(n)
    y = x @ [0.7, -0.2] + rng.standard_normal(n)
    res = ols_low_dim_inference(x, y)
    beta = x.T @ (y - y.mean()) / n
    resid = y - y.mean() - x @ beta
    sigma = np.sqrt(resid @ resid / (n - 3))
    np.testing.assert_allclose(res.estimate, beta, atol=1e-10)
    np.testing.assert_allclose(res.tstat, beta / (sigma / np.sqrt(n)), atol=1e-10)
    assert res.dof == n - 3


def test_ols_rank_error_names_columns(rng):
    x = rng.standard_normal((15, 3))
    x[:, 2] = x[:, 0] + x[:, 1]
    with pytest.raises(RankError) as info:
        ols_low_dim_inference(x, rng.standard_normal(15))
    assert len(info.value.columns) == 1


def test_ols_null_pvalues_uniform():
    p = np.empty(1000)
    for k in range(1000):
        r = np.random.default_rng([7, k])
        p[k] = ols_low_dim_inference(r.standard_normal((30, 1)), r.standard_normal(30)).pvalue[0]
    ks = stats.kstest(p, "uniform")
    assert ks.statistic < 1.63 / np.sqrt(1000)


def test_normal_pvalue_symmetry():
    z = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
    np.testing.assert_allclose(normal_pvalue(z), 2 * stats.norm.sf(np.abs(z)))
    assert normal_pvalue(0.0) == pytest.approx(1.0)


def test_compatibility_identity_design():
    n = 64
    x = np.linalg.qr(np.random.default_rng(0).standard_normal((n, 8)))[0]
    x = x - x.mean(axis=0)
    u, _, vt = np.linalg.svd(x, full_matrices=False)
    d = Dataset(u @ vt * np.sqrt(n), np.zeros(n) + np.arange(n))
    assert compatibility_diagnostic(d, [0, 3], n_draws=2000).value >= 1.0 - 1e-8


def test_compatibility_duplicate_column_collapses(rng):
    x = rng.standard_normal((50, 10))
    x[:, 1] = x[:, 0]
    d = Dataset(x, rng.standard_normal(50))
    small = compatibility_diagnostic(d, [0, 1], n_draws=200, seed=1).value
    large = compatibility_diagnostic(d, [0, 1], n_draws=20_000, seed=1).value
    assert large <= small and large < 0.05


def test_compatibility_equicorrelated_reproducible(rng):
    cov = np.full((20, 20), 0.8) + 0.2 * np.eye(20)
    x = rng.standard_normal((100, 20)) @ np.linalg.cholesky(cov).T
    d = Dataset(x, rng.standard_normal(100))
    a = compatibility_diagnostic(d, [0, 1, 2], seed=5)
    b = compatibility_diagnostic(d, [0, 1, 2], seed=5)
    assert a.value > 0 and a.value == b.value
    assert "heuristic" in a.label or "biased" in a.label


def test_repair_covariance_clips_negative_eigenvalues():
    cov = np.array([[1.0, 2.0], [2.0, 1.0]])
    factor, repaired, min_eig = repair_covariance(cov)
    assert repaired and min_eig == pytest.approx(-1.0)
    assert np.linalg.eigvalsh(factor @ factor.T).min() >= -1e-12


def test_max_statistic_singleton_matches_normal():
    res = max_statistic_pvalue(1.96, np.array([[1.0]]), n_mc=40_000, seed=3)
    assert res.pvalue == pytest.approx(0.05, abs=3 * np.sqrt(0.05 * 0.95 / 40_000))


def test_max_statistic_deterministic_per_seed():
    cov = np.eye(3)
    a = max_statistic_pvalue(2.0, cov, n_mc=5000, seed=9).pvalue
    assert a == max_statistic_pvalue(2.0, cov, n_mc=5000, seed=9).pvalue
