import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from cbilab import BranchingMechanism, DomainError, FiniteAtoms, quadratic, single_atom, stable
from cbilab.cumulant import (closed_form_v, closed_form_vbar, entrance_law,
                             entrance_law_quadratic, flow, forward_residual, q_fn, solve_u_r,
                             solve_v, solve_v_general, tabulate, tail_time, v_prime, vbar)
from cbilab.ode import SolverConfig, integrate


CRIT = quadratic(0, 1)


def test_solve_v_quadratic_critical():
    assert solve_v(CRIT, 1.0, 1.0) == pytest.approx(0.5, abs=1e-10)


def test_solve_v_zero_is_fixed():
    for mech in (CRIT, single_atom(0.5, 0.5, 1, 1), stable(1, 0.5, -1)):
        assert solve_v(mech, 0.0, 3.0) == 0.0


def test_solve_v_stable_value():
    expected = math.exp(-1) * 2 / (1 + (1 - math.exp(-0.5)) * 2 ** 0.5) ** 2
    assert solve_v(stable(1.0, 0.5, 1.0), 2.0, 1.0) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.30371, abs=1e-5)


def test_solve_v_single_atom_against_scipy():
    mech = single_atom(0.3, 0.2, 1.5, 2.0)
    ref = solve_ivp(lambda t, v: -mech.phi(v), (0, 2.0), [3.0], method="DOP853",
                    rtol=1e-12, atol=1e-14).y[0, -1]
    assert solve_v(mech, 3.0, 2.0) == pytest.approx(ref, rel=1e-9)


def test_solve_v_general_examples():
    assert solve_v_general(CRIT, 0.0, 1.0, 1.0) == pytest.approx(math.tanh(1), abs=1e-10)
    assert solve_v_general(CRIT, 2.0, 1.7, 4.0) == pytest.approx(2.0, abs=1e-12)
    assert solve_v_general(CRIT, 1.5, 0.8, 0.0) == solve_v(CRIT, 1.5, 0.8)


def test_v_prime_examples():
    assert v_prime(CRIT, 1.0, 1.0) == pytest.approx(0.25, rel=1e-9)
    assert v_prime(CRIT, 1.0, 0.0) == 1.0
    assert v_prime(quadratic(math.log(2), 0), 3.0, 1.0) == pytest.approx(0.5, rel=1e-10)


def test_vbar_examples():
    assert vbar(quadratic(1, 1), math.log(2)) == pytest.approx(1.0, rel=1e-9)
    assert vbar(quadratic(1, 0), 1.0) == math.inf
    assert vbar(CRIT, 2.0) == pytest.approx(0.5, rel=1e-9)


def test_vbar_stable_against_closed_form():
    for t in (0.1, 1.0, 4.0):
        assert vbar(stable(2.0, 0.5, 0.7), t) == pytest.approx(closed_form_vbar(2.0, 0.5, 0.7, t),
                                                              rel=1e-8)


def test_vbar_largest_root_limit():
    # phi(z) = z^2 - z: vbar decreases to the positive root 1
    assert vbar(quadratic(-1, 1), 30.0) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("t", [0.5, 5.0, 14.0, 20.0, 30.0])
def test_vbar_supercritical_closed_form(t):
    # int_v^inf dz / (z^2 - z) = t  gives  v = 1 / (1 - e^{-t})
    assert vbar(quadratic(-1, 1), t) == pytest.approx(1 / -math.expm1(-t), rel=1e-11)


def test_solve_u_r_examples():
    assert solve_u_r(CRIT, 0.5, 3.0) == 0.0
    mech = BranchingMechanism(0, 1, FiniteAtoms(((1.0, 1.0),)))
    assert solve_u_r(mech, 0.5, 0.0) == 0.0
    # u' = 1 - u - u^2 has the closed form below
    s5 = math.sqrt(5)
    root = (s5 - 1) / 2
    t = 1.3
    k = math.exp(-s5 * t)
    expected = root * (1 - k) / (1 + root * k / ((s5 + 1) / 2))
    assert solve_u_r(mech, 0.5, t) == pytest.approx(expected, rel=1e-9)
    assert solve_u_r(mech, 0.5, 40.0) == pytest.approx(root, abs=1e-10)


def test_closed_form_examples():
    assert closed_form_v(1.0, 1.0, 0.0, 2.0, 1.0) == pytest.approx(1 / 3, rel=1e-15)
    assert closed_form_v(1.0, 1.0, 0.0, 2.0, 0.0) == 0.0
    assert q_fn(1e-12, 0.7, 2.0) == pytest.approx(q_fn(0.0, 0.7, 2.0), abs=1e-9)


def test_closed_form_large_lambda_tends_to_vbar():
    v = closed_form_v(1.0, 0.5, 0.3, 1.0, 1e300)
    assert v == pytest.approx(closed_form_vbar(1.0, 0.5, 0.3, 1.0), rel=1e-12)


def test_entrance_law_examples():
    law = entrance_law_quadratic(1.0, 0.0, 1.0)
    assert (law.theta, law.A, law.mass) == (1.0, 1.0, 1.0)
    assert entrance_law_quadratic(1.0, 0.0, 2.0).mass == pytest.approx(0.5)
    assert entrance_law_quadratic(1.0, 0.0, 0.01).mass > 99


def test_entrance_law_reproduces_v():
    law = entrance_law(quadratic(0.4, 0.8), 1.2)
    lam = np.array([0.5, 2.0, 9.0])
    np.testing.assert_allclose(law.laplace(lam), closed_form_v(0.8, 1.0, 0.4, 1.2, lam), rtol=1e-13)
    lin = entrance_law(quadratic(0.5, 0), 2.0)
    assert lin.h == pytest.approx(math.exp(-1)) and lin.mass == 0.0
    with pytest.raises(DomainError):
        entrance_law(single_atom(0, 1, 1, 1), 1.0)


def test_forward_residual_small():
    mech = single_atom(0.5, 0.5, 1, 1)
    res = forward_residual(mech, np.array([0.5, 2.0]), np.array([1.0, 3.0]))
    assert np.max(np.abs(res)) < 1e-8


def test_tabulate_and_csv(tmp_path):
    sol = tabulate(CRIT, [0.0, 1.0, 2.0], [0.0, 1.0, 2.0, 4.0])
    np.testing.assert_allclose(sol.v, closed_form_v(1, 1, 0, sol.t_grid[:, None], sol.lam_grid[None, :]),
                               atol=1e-10)
    p = tmp_path / "v.csv"
    sol.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,lambda,v,v_prime" and len(lines) == 13
    assert sol(1.0, 1.0) == pytest.approx(0.5, abs=1e-10)


def test_flow_rejects_negative_input():
    with pytest.raises(DomainError):
        flow(CRIT, -1.0, 1.0)


def test_tail_time_quadratic():
    # int_x^inf dz / z^2 = 1/x
    assert tail_time(CRIT, 4.0) == pytest.approx(0.25, rel=1e-9)


def test_ode_integrator_exponential():
    y, st = integrate(lambda y: -y, np.array([[1.0, 2.0]]), 3.0, SolverConfig())
    np.testing.assert_allclose(y, np.array([[1.0, 2.0]]) * math.exp(-3), rtol=1e-9)
    assert st.steps > 0
