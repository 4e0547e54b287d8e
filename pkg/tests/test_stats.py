import math

import numpy as np
import pytest
from scipy import stats as sps

from cbilab import (BranchingMechanism, ConfigError, DomainError, LawQuery, PathConfig,
                    StableDensity, quadratic, single_atom)
from cbilab import laws, stats
from cbilab.stats import ComparisonReport, bonferroni_z, empirical_laplace, with_rerun


def test_all_zero_samples():
    emp = empirical_laplace(np.zeros(100), [0.5, 2.0])
    np.testing.assert_array_equal(emp.estimates, 1.0)
    np.testing.assert_array_equal(emp.std_errs, 0.0)


def test_constant_samples():
    emp = empirical_laplace(np.full(50, 1.7), [0.0, 0.5, 3.0])
    np.testing.assert_allclose(emp.estimates, np.exp(-1.7 * np.array([0.0, 0.5, 3.0])), rtol=1e-15)
    np.testing.assert_allclose(emp.std_errs, 0.0, atol=1e-15)


def test_empirical_laplace_validation():
    with pytest.raises(DomainError):
        empirical_laplace([1.0], [1.0])
    with pytest.raises(DomainError):
        empirical_laplace([1.0, -0.1], [1.0])


def test_empirical_laplace_exponential_samples():
    x = sps.expon.rvs(size=50_000, random_state=np.random.default_rng(1))
    emp = empirical_laplace(x, [1.0, 3.0])
    assert np.all(np.abs(emp.estimates - 1 / (1 + emp.lambda_grid)) <= 4 * emp.std_errs)


def test_bonferroni():
    assert bonferroni_z(1) == 3.0
    assert bonferroni_z(0) == 3.0
    alpha = 2 * sps.norm.sf(3.0)
    for n in (2, 10, 36):
        z = bonferroni_z(n)
        assert 2 * n * sps.norm.sf(z) == pytest.approx(alpha, rel=1e-10)
    assert bonferroni_z(2) < bonferroni_z(10) < bonferroni_z(36)


def test_proportion_and_mean():
    assert stats.proportion_and_se([True, True]) == (1.0, 0.0)
    p, se = stats.proportion_and_se([True, False, False, False])
    assert p == 0.25 and se == pytest.approx(math.sqrt(0.25 * 0.75 / 4))
    m, se = stats.mean_and_se([1.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1.0)


def test_report_scoring_and_kinds():
    rep = ComparisonReport("r")
    rep.add("a", "", 1.0, 1.02, 0.01)
    assert rep.passed
    assert rep.rows[0].z_score == pytest.approx(2.0)
    rep.add("b", "", 1.0, 1.1, 0.01)
    assert not rep.passed
    rep.rows[1].slack = 0.08
    assert rep.passed
    up = ComparisonReport("u").add("bias", "", 0.1, -5.0, 0.01, kind="upper")
    assert up.passed
    up.add("bias2", "", 0.1, 0.2, 0.01, kind="upper")
    assert not up.passed
    info = ComparisonReport("i").add("x", "", 0.0, 10.0, 0.1, gate=False)
    assert info.passed and info.max_abs_z == 0.0
    with pytest.raises(ValueError):
        rep.add("c", "", 0, 0, 0, kind="lower")


def test_zero_se_rows():
    rep = ComparisonReport("z").add("exact", "", 0.5, 0.5, 0.0)
    assert rep.passed and rep.rows[0].z_score == 0.0
    rep = ComparisonReport("z").add("off", "", 0.5, 0.6, 0.0)
    assert not rep.passed and math.isinf(rep.rows[0].z_score)


def test_report_threshold_counts_only_gating_equal_rows():
    rep = ComparisonReport("t")
    for _ in range(4):
        rep.add("q", "", 0, 0, 1)
    rep.add("u", "", 0, 0, 1, kind="upper").add("i", "", 0, 0, 1, gate=False)
    assert rep.adjusted_threshold == bonferroni_z(4)


def test_report_csv_and_text(tmp_path):
    rep = ComparisonReport("demo").add("laplace", "lambda=1", 0.5, 0.51, 0.01)
    text = rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert text.splitlines() == lines
    assert lines[0] == "quantity,params,analytic,empirical,std_err,slack,z_score,gate,kind,pass"
    assert lines[1].startswith("laplace,lambda=1,0.5,0.51,0.01,0.0,")
    assert rep.to_text().startswith("demo: PASS")


def test_with_rerun():
    seeds = []

    def flaky(seed):
        seeds.append(seed)
        ok = len(seeds) > 1
        return ComparisonReport("f").add("q", "", 0.0, 0.0 if ok else 10.0, 1.0)
    rep = with_rerun(flaky, 5)
    assert rep.passed and rep.attempts == 2 and seeds == [5, 5 + 1_000_003]
    assert rep.notes["first_attempt_max_abs_z"] == 10.0

    def bad(seed):
        return ComparisonReport("b").add("q", "", 0.0, 10.0, 1.0)
    rep = with_rerun(bad, 1)
    assert not rep.passed and rep.attempts == 2

    def good(seed):
        return ComparisonReport("g").add("q", "", 0.0, 0.0, 1.0)
    assert with_rerun(good, 1).attempts == 1


def test_compare_laplace_with_mean():
    x = np.full(10, 2.0)
    rep = stats.compare_laplace("c", x, [1.0], math.exp(-2.0), 2.0)
    assert [r.quantity for r in rep.rows] == ["laplace", "mean"]
    assert rep.passed


# jump maxima and coalescence examples
HEAVY = BranchingMechanism(1.0, 0.5, StableDensity(0.5, 1.0, 0.0, 20.0))
JUMP_CFG = PathConfig(dt=0.01, jump_cutoff_eps=0.05)


def test_max_jump_above_support_is_certain():
    rep = stats.max_jump_check(single_atom(0.0, 1.0, 1.0, 1.0), 1.0, 1.0, (1.5,), 500,
                               PathConfig(dt=0.01), seed=1)
    assert rep.rows[0].analytic == 1.0 and rep.rows[0].empirical == 1.0 and rep.passed
    rep = stats.global_max_jump_check(single_atom(1.0, 1.0, 1.0, 1.0), 1.0, (1.5,), 10.0, 200,
                                      PathConfig(dt=0.05), seed=1)
    assert rep.rows[0].analytic == 1.0 and rep.rows[0].empirical == 1.0


def test_max_jump_cutoff_must_sit_below_grid():
    with pytest.raises(ConfigError):
        stats.max_jump_check(HEAVY, 1.0, 1.0, (0.01,), 10, JUMP_CFG, seed=1)


def test_max_jump_tail_ratio():
    # P{max > r} ~ x b^-1 (1 - e^-bt) m(r, inf) once r is large
    x, t, b, r = 1.0, 1.0, HEAVY.b, 12.0
    tail = x / b * -math.expm1(-b * t) * HEAVY.tail_mass(r)
    p_exceed = 1 - laws.max_jump_cdf(LawQuery(HEAVY, None, x, t), r)
    assert abs(p_exceed / tail - 1) <= 0.05
    rep = stats.max_jump_check(HEAVY, x, t, (2.0, r), 40_000, JUMP_CFG, seed=5)
    assert rep.passed


def test_global_max_jump_tail_ratio():
    # P{sup jump > r} ~ x b^-1 m(r, inf) once r is large
    x, r = 1.0, 12.0
    p_exceed = 1 - laws.global_max_jump_cdf(HEAVY, x, r)
    assert abs(p_exceed / (x / HEAVY.b * HEAVY.tail_mass(r)) - 1) <= 0.10
    rep = stats.global_max_jump_check(HEAVY, x, (2.0, r), 8.0, 40_000, JUMP_CFG, seed=6)
    assert rep.passed


def test_global_max_jump_needs_long_horizon():
    with pytest.raises(DomainError):
        stats.global_max_jump_check(HEAVY, 1.0, (2.0,), 1.0, 10, JUMP_CFG, seed=1)


def test_coalescence_subcritical_long_time_is_certain():
    assert laws.coalescence_prob(quadratic(1.0, 1.0), 1.0, 2.0, 30.0) == pytest.approx(1.0, abs=1e-10)
