"""Property tests for mechanisms, the cumulant flow and the analytic laws."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from cbilab import (BranchingMechanism, Density, ExponentialDensity, FiniteAtoms,
                    ImmigrationMechanism, LawQuery, StableDensity, TruncatedStable, ZeroMeasure)
from cbilab import laws
from cbilab.cumulant import solve_v, solve_v_general, v_prime, vbar

pos = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)

atoms = st.lists(st.tuples(pos(0.05, 3.0), pos(0.0, 2.0)), min_size=1, max_size=3).map(
    lambda a: FiniteAtoms(tuple(a)))
measures = st.one_of(
    st.just(ZeroMeasure()),
    atoms,
    st.builds(ExponentialDensity, pos(0.0, 2.0), pos(0.3, 3.0)),
    st.builds(StableDensity, pos(0.1, 0.9)),
    st.builds(lambda a, lo, w: TruncatedStable(a, lo, lo * w), pos(0.1, 0.9), pos(0.05, 1.0),
              pos(1.5, 20.0)),
)
mechanisms = st.builds(BranchingMechanism, pos(-1.0, 2.0), pos(0.0, 2.0), measures)
# Grey's condition holds whenever c > 0
grey_mechanisms = st.builds(BranchingMechanism, pos(-1.0, 2.0), pos(0.2, 2.0), measures)
imm_atoms = st.lists(st.tuples(pos(0.05, 3.0), pos(0.0, 2.0)), min_size=0, max_size=2)

Z = np.linspace(0.0, 20.0, 41)


# mechanisms ----------------------------------------------------------------------------

@settings(max_examples=40)
@given(mechanisms)
def test_phi_zero_and_convex(mech):
    assert mech.phi(0.0) == 0.0
    z = np.sort(np.concatenate([Z, [0.013, 0.4, 7.3]]))
    f = mech.phi(z)
    z1, z2, z3 = z[:-2], z[1:-1], z[2:]
    w = (z2 - z1) / (z3 - z1)
    chord = (1 - w) * f[:-2] + w * f[2:]
    assert np.all(f[1:-1] <= chord + 1e-10 * (1 + np.abs(chord)))


@settings(max_examples=40)
@given(mechanisms, pos(0.01, 50.0))
def test_phi_prime_matches_central_differences(mech, z):
    h = 1e-5 * max(z, 1.0)
    fd = (mech.phi(z + h) - mech.phi(z - h)) / (2 * h)
    d = mech.phi_prime(z)
    assert abs(fd - d) <= 1e-6 * max(abs(d), 1.0)


@settings(max_examples=40)
@given(mechanisms, pos(0.1, 5.0))
def test_truncation_dominates(mech, r):
    try:
        tr = mech.truncate(r)
    except Exception:
        assume(False)
    assert np.all(tr.phi(Z) >= mech.phi(Z) - 1e-10 * (1 + np.abs(mech.phi(Z))))


@settings(max_examples=40)
@given(mechanisms, pos(0.0, 30.0))
def test_phi_inverse_on_increasing_branch(mech, dz):
    t0 = mech.theta0()
    assume(np.isfinite(t0) and mech.phi_prime_inf() > 0 and not mech.is_degenerate)
    z = t0 + dz
    assume(mech.phi_prime(z) > 1e-6)
    # phi(theta0) can round to a tiny negative
    assert mech.phi_inverse(max(mech.phi(z), 0.0)) == pytest.approx(z, rel=1e-10, abs=1e-10)


@settings(max_examples=20)
@given(pos(0.05, 0.95), pos(0.1, 10.0))
def test_stable_density_quadrature(alpha, z):
    dens = alpha * (1 + alpha) / gamma_fn(1 - alpha)
    generic = BranchingMechanism(0.0, 0.0, Density(lambda u: dens * u ** (-2 - alpha),
                                                   log_fn=lambda s: math.log(dens) - (2 + alpha) * s))
    assert generic.phi(z) == pytest.approx(z ** (1 + alpha), rel=1e-8)
    assert BranchingMechanism(0.0, 0.0, StableDensity(alpha)).phi(z) == pytest.approx(
        z ** (1 + alpha), rel=1e-12)


# cumulant ------------------------------------------------------------------------------

@settings(max_examples=20)
@given(mechanisms, pos(0.0, 5.0), pos(0.0, 5.0), pos(0.0, 5.0))
def test_semigroup(mech, r, t, lam):
    direct = solve_v(mech, lam, r + t)
    composed = solve_v(mech, solve_v(mech, lam, t), r)
    assert abs(direct - composed) <= 1e-7 * max(1.0, abs(direct))


@settings(max_examples=30)
@given(mechanisms, pos(0.05, 5.0))
def test_strictly_increasing_in_lambda(mech, t):
    lam = np.linspace(0.0, 10.0, 21)
    assert np.all(np.diff(solve_v(mech, lam, t)) > 0)


long_time = st.builds(BranchingMechanism,
                      st.one_of(pos(-1.0, -0.3), pos(0.5, 2.0)), pos(0.5, 2.0), measures)


@settings(max_examples=12)
@given(long_time)
def test_long_time_limit(mech):
    t0 = mech.theta0()
    for lam in (0.5 * t0, t0 + 0.5 * max(t0, 1.0)):
        if lam <= 0:
            continue
        path = solve_v(mech, lam, np.array([1.0, 5.0, 20.0, 50.0]))
        assert abs(path[-1] - t0) <= 1e-4
        gaps = np.abs(path - t0)
        assert np.all(np.diff(gaps) <= 1e-12)
        assert np.all(path <= t0 + 1e-12) if lam < t0 else np.all(path >= t0 - 1e-12)


@settings(max_examples=15)
@given(mechanisms, pos(0.1, 5.0), pos(0.05, 3.0))
def test_v_prime_matches_finite_differences(mech, lam, t):
    h = 1e-5
    fd = (solve_v(mech, lam + h, t) - solve_v(mech, lam - h, t)) / (2 * h)
    assert v_prime(mech, lam, t) == pytest.approx(fd, rel=1e-4)


@settings(max_examples=10)
@given(grey_mechanisms, pos(0.2, 5.0))
def test_vbar_is_large_lambda_limit(mech, t):
    vb = vbar(mech, t)
    assume(np.isfinite(vb))
    assert abs(solve_v(mech, 1e6, t) - vb) <= 1e-4 * max(1.0, vb)


@settings(max_examples=20)
@given(grey_mechanisms, pos(0.1, 5.0))
def test_vbar_flow(mech, t):
    h = 1e-4 * t
    vb = vbar(mech, np.array([t - h, t, t + h]))
    assume(np.all(np.isfinite(vb)))
    deriv = (vb[2] - vb[0]) / (2 * h)
    target = -mech.phi(vb[1])
    assert abs(deriv - target) <= 1e-3 * max(abs(target), 1e-6 + 1e-3 * abs(vb[1]))


@settings(max_examples=10)
@given(mechanisms, pos(0.2, 3.0), pos(0.0, 1.0), pos(0.05, 3.0))
def test_comparison_under_truncation(mech, r, theta, t):
    # phi_r >= phi pointwise, so the truncated solution sits below
    try:
        tr = mech.truncate(r)
    except Exception:
        assume(False)
    lam = np.linspace(0.0, 5.0, 11)
    lo = solve_v_general(tr, lam, t, theta)
    hi = solve_v_general(mech, lam, t, theta)
    assert np.all(lo <= hi + 1e-9 * (1 + np.abs(hi)))


# laws ------------------------------------------------------------------------------------

LAM = np.linspace(0.0, 6.0, 25)


@settings(max_examples=25)
@given(mechanisms, st.builds(lambda b, a: ImmigrationMechanism(b, FiniteAtoms(tuple(a))),
                             pos(0.0, 2.0), imm_atoms),
       pos(0.0, 3.0), pos(0.05, 3.0))
def test_transforms_decreasing_and_log_convex(mech, imm, x, t):
    q = LawQuery(mech, imm, x, t)
    for f in (laws.laplace_Q(q, LAM), laws.laplace_P(q, LAM)):
        assert np.all(np.diff(f) <= 1e-10)
        lf = np.log(f)
        assert np.all(lf[:-2] + lf[2:] - 2 * lf[1:-1] >= -1e-10)


@settings(max_examples=15)
@given(mechanisms, pos(0.0, 3.0), pos(0.0, 3.0), pos(0.05, 3.0))
def test_branching_property(mech, x1, x2, t):
    Q = lambda x: laws.laplace_Q(LawQuery(mech, None, x, t), LAM)
    np.testing.assert_allclose(Q(x1 + x2), Q(x1) * Q(x2), rtol=1e-12, atol=1e-300)


@settings(max_examples=12)
@given(mechanisms, pos(0.0, 2.0), imm_atoms, pos(0.0, 2.0), imm_atoms, pos(0.0, 2.0),
       pos(0.05, 3.0))
def test_immigration_additivity(mech, b1, a1, b2, a2, x, t):
    i1 = ImmigrationMechanism(b1, FiniteAtoms(tuple(a1)))
    i2 = ImmigrationMechanism(b2, FiniteAtoms(tuple(a2)))
    both = ImmigrationMechanism(b1 + b2, FiniteAtoms(tuple(a1 + a2)))
    P = lambda imm, xx: laws.laplace_P(LawQuery(mech, imm, xx, t), LAM)
    np.testing.assert_allclose(P(both, x), P(i1, x) * P(i2, 0.0), rtol=1e-10)


# a finite second moment keeps log L smooth at 0; stable tails add a lambda^(1+alpha) term
light_tailed = st.builds(BranchingMechanism, pos(-1.0, 2.0), pos(0.0, 2.0),
                         st.one_of(st.just(ZeroMeasure()), atoms,
                                   st.builds(ExponentialDensity, pos(0.0, 2.0), pos(0.3, 3.0))))


@settings(max_examples=25)
@given(light_tailed, pos(0.1, 3.0), pos(0.05, 3.0))
def test_mean_is_log_derivative_at_zero(mech, x, t):
    q = LawQuery(mech, None, x, t)
    h = 1e-4
    f0, f1, f2 = np.log(laws.laplace_Q(q, np.array([0.0, h, 2 * h])))
    slope = -(-3 * f0 + 4 * f1 - f2) / (2 * h)
    assert slope == pytest.approx(laws.mean_Q(q), rel=1e-6)


@settings(max_examples=15)
@given(pos(-1.0, 2.0), pos(0.2, 2.0), pos(0.1, 3.0))
def test_size_biased_law_at_zero_start_has_no_atom(b, c, t):
    mech = BranchingMechanism(b, c, ZeroMeasure())
    assert laws.laplace_Qb(LawQuery(mech, None, 0.0, t), 1e8) < 1e-6
