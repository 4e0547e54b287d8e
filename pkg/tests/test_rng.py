import math

import numpy as np
import pytest
from scipy import stats as sps

from cbilab.rng import PathStreams, mix64, mix_int

N = 200_000


@pytest.fixture(scope="module")
def ps():
    return PathStreams(42, np.arange(N))


def test_mix64_matches_scalar_version():
    z = np.array([0, 1, 2 ** 63, 12345678901234], dtype=np.uint64)
    assert [int(v) for v in mix64(z.copy())] == [mix_int(int(v)) for v in z]


def test_seed_required():
    with pytest.raises(ValueError):
        PathStreams(None, [0])


def test_draws_depend_only_on_seed_id_and_key(ps):
    sub = PathStreams(42, np.arange(N)[::7])
    np.testing.assert_array_equal(ps.uniform("u", 3)[::7], sub.uniform("u", 3))
    np.testing.assert_array_equal(ps.uniform("u", 3, rows=np.arange(0, N, 7)), sub.uniform("u", 3))
    assert not np.array_equal(ps.uniform("u", 3), ps.uniform("u", 4))
    assert not np.array_equal(ps.uniform("u", 3), ps.uniform("v", 3))
    assert not np.array_equal(ps.uniform("u", 3), PathStreams(43, np.arange(N)).uniform("u", 3))


def test_uniform_ks(ps):
    u = ps.uniform("ks", 0)
    assert np.all((u > 0) & (u < 1))
    assert sps.kstest(u, "uniform").pvalue > 1e-3


def test_consecutive_streams_uncorrelated(ps):
    a, b = ps.uniform("c", 0), ps.uniform("c", 1)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(N)


def test_normal_and_gamma_ks(ps):
    assert sps.kstest(ps.normal("n", 0), "norm").pvalue > 1e-3
    assert sps.kstest(ps.gamma(2.5, "g", 0), sps.gamma(2.5).cdf).pvalue > 1e-3
    assert np.all(ps.gamma(0.0, "g", 1) == 0)


@pytest.mark.parametrize("mu", [0.3, 4.0, 40.0])
def test_poisson_pmf(ps, mu):
    k = ps.poisson(np.full(N, mu), "p", 0)
    assert k.dtype.kind in "iu"
    vals = np.arange(int(mu + 6 * math.sqrt(mu) + 5))
    obs = np.array([(k == v).sum() for v in vals])
    exp = N * sps.poisson.pmf(vals, mu)
    keep = exp > 20
    chi = np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep])
    assert sps.chi2.sf(chi, keep.sum() - 1) > 1e-3


@pytest.mark.parametrize("n,p", [(5, 0.3), (200, 0.1), (10_000, 0.5)])
def test_binomial_mean_and_variance(ps, n, p):
    k = ps.binomial(np.full(N, n), p, "b", 0)
    assert np.all((k >= 0) & (k <= n))
    assert abs(k.mean() - n * p) <= 4 * math.sqrt(n * p * (1 - p) / N)
    assert k.var() == pytest.approx(n * p * (1 - p), rel=0.03)


def test_stable_laplace(ps):
    alpha = 1.5
    x = ps.stable_positive(alpha, "s", 0)
    for lam in (0.2, 0.5):
        e = np.exp(-lam * x)
        expected = math.exp(lam ** alpha / abs(math.cos(math.pi * alpha / 2)))
        assert abs(e.mean() - expected) <= 4 * e.std() / math.sqrt(N)
