"""Property tests for the discrete chains, simulators, cluster samplers and estimators."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cbilab import (BranchingMechanism, FiniteAtoms, ImmigrationMechanism, PathConfig,
                    quadratic, single_atom)
from cbilab import clusters, discrete, pathsim
from cbilab.cumulant import solve_v, vbar
from cbilab.stats import empirical_laplace, proportion_and_se

pos = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)
Z_MC = 4.0   # per-example threshold; hypothesis runs many examples per property

tables = st.lists(pos(0.0, 1.0), min_size=2, max_size=4).filter(lambda p: sum(p) > 0.05).map(
    lambda p: list(np.asarray(p) / sum(p)))


# discrete ---------------------------------------------------------------------------------

@settings(max_examples=25)
@given(tables, st.integers(1, 3), pos(0.0, 1.0))
def test_transition_row_is_pgf_power(probs, i, z):
    law = discrete.explicit_table_law(probs)
    row = discrete.transition_row(law, i, i * (len(probs) - 1))
    # independent oracle: explicit convolution of the table
    conv = np.array([1.0])
    for _ in range(i):
        conv = np.convolve(conv, probs)
    np.testing.assert_allclose(row, conv, atol=1e-12)
    assert np.polynomial.polynomial.polyval(z, row) == pytest.approx(law.pgf(z) ** i, abs=1e-10)


@settings(max_examples=20)
@given(tables, tables, st.integers(1, 2), st.integers(1, 3), pos(0.0, 1.0))
def test_gwi_pgf_product_form(g, h, i, n, z):
    gl, hl = discrete.explicit_table_law(g), discrete.explicit_table_law(h)
    # n-step law by direct convolution: dist' = sum_j dist(j) g^{*j} * h
    dist = np.zeros(i + 1)
    dist[i] = 1.0
    for _ in range(n):
        new = np.zeros(1)
        for j, pj in enumerate(dist):
            if pj == 0:
                continue
            row = np.array([1.0])
            for _ in range(j):
                row = np.convolve(row, g)
            row = np.convolve(row, h) * pj
            if row.size > new.size:
                new = np.pad(new, (0, row.size - new.size))
            new[:row.size] += row
        dist = new
    direct = np.polynomial.polynomial.polyval(z, dist)
    formula = discrete.pgf_iterate(gl, n, z) ** i * math.prod(
        hl.pgf(discrete.pgf_iterate(gl, j - 1, z)) for j in range(1, n + 1))
    assert direct == pytest.approx(formula, abs=1e-10)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_vk_error_decreases_with_k(t):
    mech = quadratic(0.0, 1.0)
    lam = np.array([0.5, 1.0, 2.0])
    exact = solve_v(mech, lam, t)
    errs = [np.abs(discrete.vk_recursion(discrete.mechanism_to_offspring(mech, k), t, lam) - exact)
            for k in (10, 100, 1000, 10_000)]
    assert np.all(np.diff(np.array(errs), axis=0) < 0)


@settings(max_examples=15)
@given(pos(-1.0, 1.0), pos(0.0, 1.0), pos(0.1, 2.0), pos(0.0, 1.5))
def test_phi_k_gap_shrinks_like_one_over_k(b, c, u0, mass):
    mech = BranchingMechanism(b, c, FiniteAtoms(((u0, mass),)))
    z = np.linspace(0.0, 10.0, 21)
    gaps = [k * np.max(np.abs(discrete.phi_k(discrete.mechanism_to_offspring(mech, k), z)
                              - mech.phi(z))) for k in (100, 1000, 10_000)]
    # k * gap stays bounded: the gap is O(1/k)
    assert max(gaps) <= 2 * max(gaps[0], 1e-9) + 1e-6


# path simulation ---------------------------------------------------------------------------

sim_mechs = st.builds(lambda b, c, u, m: single_atom(b, c, u, m), pos(-0.5, 1.0), pos(0.0, 2.0),
                      pos(0.1, 2.0), pos(0.0, 2.0))
sim_imms = st.builds(lambda b, u, m: ImmigrationMechanism(b, FiniteAtoms(((u, m),))),
                     pos(0.0, 1.5), pos(0.1, 1.0), pos(0.0, 1.0))


@settings(max_examples=15)
@given(sim_mechs, sim_imms, pos(0.0, 3.0), st.integers(0, 2 ** 31))
def test_paths_non_negative_and_reproducible(mech, imm, x, seed):
    import warnings
    cfg = PathConfig(dt=0.05, record_every=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ens = pathsim.simulate_cbi(mech, imm, x, cfg, seed, n_paths=40)
        sub = pathsim.simulate_cbi(mech, imm, x, cfg, seed, path_ids=np.arange(10, 40, 3))
    assert np.all(ens.states >= 0) and np.all(ens.integral >= 0)
    np.testing.assert_array_equal(ens.states[10:40:3], sub.states)


@settings(max_examples=4)
@given(sim_mechs, sim_imms, st.integers(0, 2 ** 31))
def test_parallel_runs_are_bit_identical(mech, imm, seed):
    import warnings
    cfg = PathConfig(dt=0.05)
    old = pathsim.CHUNK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ref = pathsim.simulate_cbi(mech, imm, 1.0, cfg, seed, n_paths=90)
            pathsim.CHUNK = 25
            par = pathsim.simulate_cbi(mech, imm, 1.0, cfg, seed, n_paths=90, workers=2)
    finally:
        pathsim.CHUNK = old
    np.testing.assert_array_equal(ref.terminal, par.terminal)


@pytest.mark.filterwarnings("ignore:clamp rate")
@settings(max_examples=10)
@given(pos(0.2, 1.0), pos(0.0, 1.0), pos(1.0, 3.0), pos(0.0, 2.0), st.integers(0, 2 ** 31))
def test_coupled_pair_is_ordered(c, b, x, dx, seed):
    cfg = PathConfig(dt=0.02, record_every=1)
    cp = pathsim.simulate_coupled_pair(single_atom(b, c, 0.5, 1.0), ImmigrationMechanism(0.5),
                                       x, x + dx, cfg, seed, n_paths=200)
    assert cp.violations() == 0


# clusters ------------------------------------------------------------------------------------

@settings(max_examples=10)
@given(pos(0.3, 2.0), pos(-0.5, 1.0), pos(0.1, 2.0), pos(0.2, 2.0), st.integers(0, 2 ** 31))
def test_excursion_void_probability(c, b, z, t, seed):
    x = clusters.sample_quadratic_excursion_marginal(c, b, z, t, seed, n_samples=20_000)
    p, se = proportion_and_se(x == 0)
    void = math.exp(-z * vbar(quadratic(b, c), t))
    assert abs(p - void) <= Z_MC * max(se, 1 / x.size)


@settings(max_examples=10)
@given(pos(0.0, 1.0), pos(0.1, 2.0), pos(0.1, 1.5), pos(0.2, 1.5), st.integers(0, 2 ** 31))
def test_immigration_cluster_void_without_extinction(b, u0, mass, t, seed):
    # c = 0 with a finite Levy measure never hits zero, so void means no arrivals
    rate = clusters.ExpDecay(1.3, 0.7)
    batch = clusters.sample_immigration_cluster(single_atom(b, 0.0, 1.0, 1.0),
                                                FiniteAtoms(((u0, mass),)), rate, t,
                                                PathConfig(dt=0.05), seed, n_samples=4000)
    p, se = proportion_and_se(batch.total == 0)
    void = math.exp(-float(rate.integrated(t)) * mass)
    assert abs(p - void) <= Z_MC * max(se, 1 / batch.total.size)
    assert np.allclose(batch.total, batch.deterministic + np.bincount(
        np.searchsorted(batch.sample_ids, batch.member_sample), weights=batch.contributions,
        minlength=batch.total.size))


@settings(max_examples=8)
@given(pos(0.3, 2.0), pos(0.0, 1.0), pos(0.1, 1.5), pos(0.1, 1.5), st.integers(0, 2 ** 30))
def test_excursion_marginal_is_infinitely_divisible(c, b, z1, z2, seed):
    n = 20_000
    lam = np.array([0.5, 2.0])
    whole = clusters.sample_quadratic_excursion_marginal(c, b, z1 + z2, 1.0, seed, n_samples=n)
    a = clusters.sample_quadratic_excursion_marginal(c, b, z1, 1.0, seed + 1, n_samples=n)
    d = clusters.sample_quadratic_excursion_marginal(c, b, z2, 1.0, seed + 2, n_samples=n)
    e1, e2 = empirical_laplace(whole, lam), empirical_laplace(a + d, lam)
    se = np.hypot(e1.std_errs, e2.std_errs)
    assert np.all(np.abs(e1.estimates - e2.estimates) <= Z_MC * np.maximum(se, 1 / n))


# estimators ------------------------------------------------------------------------------------

samples = hnp.arrays(np.float64, st.integers(2, 60),
                     elements=st.floats(0.0, 1e6, allow_nan=False, allow_infinity=False))


@settings(max_examples=60)
@given(samples)
def test_empirical_laplace_bounds(x):
    lam = np.array([0.0, 0.1, 1.0, 10.0])
    emp = empirical_laplace(x, lam)
    assert np.all((emp.estimates >= 0) & (emp.estimates <= 1))
    assert emp.estimates[0] == 1.0
    assert np.all(emp.std_errs >= 0)
    assert np.all(np.diff(emp.estimates) <= 0)


@settings(max_examples=30)
@given(st.floats(0.0, 50.0), st.integers(2, 40))
def test_constant_samples_give_exact_transform(a, n):
    lam = np.array([0.0, 0.3, 2.0])
    emp = empirical_laplace(np.full(n, a), lam)
    np.testing.assert_allclose(emp.estimates, np.exp(-lam * a), rtol=1e-14)
    np.testing.assert_allclose(emp.std_errs, 0.0, atol=1e-15)
