"""Analytic functionals of CB and CBI laws built on the cumulant flow.

Every routine here is deterministic and is the single analytic oracle used
by the Monte Carlo comparisons in ``stats`` and the acceptance suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cumulant import DEFAULT_SOLVER, flow, q_fn, solve_u_r, vbar
from .errors import DomainError
from .mechanisms import NO_IMMIGRATION, BranchingMechanism, ImmigrationMechanism
from .ode import SolverConfig
from .quadrature import gauss_legendre, gl_fixed


@dataclass(frozen=True)
class LawQuery:
    mech: BranchingMechanism
    imm: ImmigrationMechanism = field(default_factory=ImmigrationMechanism)
    x: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.imm is None:
            object.__setattr__(self, "imm", NO_IMMIGRATION)
        if self.x < 0 or self.t < 0:
            raise DomainError("initial state and time must be non-negative")


def _psi_extra(imm):
    return lambda v, vp: imm.psi(v)


def laplace_Q(q: LawQuery, lam, cfg: SolverConfig = DEFAULT_SOLVER):
    """E_x exp(-lambda X_t) for the CB process."""
    return np.exp(-q.x * flow(q.mech, lam, q.t, cfg=cfg).v)


def laplace_P(q: LawQuery, lam, cfg: SolverConfig = DEFAULT_SOLVER):
    """E_x exp(-lambda Y_t) for the CBI process."""
    if q.imm.is_zero:
        return laplace_Q(q, lam, cfg)
    res = flow(q.mech, lam, q.t, extras=[_psi_extra(q.imm)], cfg=cfg)
    return np.exp(-q.x * res.v - res.integrals[0])


def laplace_Qb(q: LawQuery, lam, cfg: SolverConfig = DEFAULT_SOLVER):
    """Laplace transform of the size-biased law: immigration psi = phi' - b."""
    mech = q.mech
    res = flow(mech, lam, q.t, extras=[lambda v, vp: mech.phi_prime(v) - mech.b], cfg=cfg)
    return np.exp(-q.x * res.v - res.integrals[0])


def mean_Q(q: LawQuery) -> float:
    return q.x * float(np.exp(-q.mech.b * q.t))


def mean_P(q: LawQuery) -> float:
    b, t = q.mech.b, q.t
    if not np.isfinite(q.imm.psi_prime0()):
        raise DomainError("mean needs psi'(0) < inf")
    return q.x * float(np.exp(-b * t)) + q.imm.psi_prime0() * q_fn(b, 1.0, t)


def extinction_prob(q: LawQuery) -> float:
    """P_x{tau_0 <= t} = exp(-x vbar_t)."""
    if q.x == 0:
        return 1.0
    vb = vbar(q.mech, q.t)
    return 0.0 if np.isinf(vb) else float(np.exp(-q.x * vb))


def extinction_ever(mech: BranchingMechanism, x: float) -> float:
    """P_x{tau_0 < inf} = exp(-x bar v), bar v the largest root of phi."""
    if x == 0:
        return 1.0
    if not mech.grey().holds:
        return 0.0
    return float(np.exp(-x * mech.theta0()))


@dataclass(frozen=True)
class LimitDistribution:
    """Weights of the t -> inf limit e^{-x theta0} delta_0 + (1 - e^{-x theta0}) delta_inf."""

    weight_at_0: float
    weight_at_inf: float


def limit_distribution(mech: BranchingMechanism, x: float) -> LimitDistribution:
    if mech.is_degenerate:
        raise DomainError("phi vanishes identically; v_t(lambda) = lambda for all t")
    t0 = mech.theta0()
    w0 = 1.0 if x == 0 else (0.0 if np.isinf(t0) else float(np.exp(-x * t0)))
    return LimitDistribution(w0, 1.0 - w0)


def joint_laplace(q: LawQuery, lam, theta: float, cfg: SolverConfig = DEFAULT_SOLVER):
    """E exp(-lambda Y_t - theta int_0^t Y_s ds)."""
    extras = [] if q.imm.is_zero else [_psi_extra(q.imm)]
    res = flow(q.mech, lam, q.t, theta=theta, extras=extras, cfg=cfg)
    out = -q.x * res.v
    if extras:
        out = out - res.integrals[0]
    return np.exp(out)


def total_integral_laplace(mech: BranchingMechanism, x: float, theta):
    """E_x exp(-theta int_0^inf X_s ds) for theta > 0."""
    th = np.asarray(theta, dtype=float)
    if np.any(th <= 0):
        raise DomainError("theta must be positive")
    if mech.phi_prime_inf() <= 0:
        val = 0.0 if x > 0 else 1.0
        return np.full(th.shape, val) if th.ndim else val
    inv = mech.phi_inverse(th)
    return np.exp(-x * inv)


def total_integral_finite_prob(mech: BranchingMechanism, x: float) -> float:
    """P_x{int_0^inf X_s ds < inf}."""
    if x == 0:
        return 1.0
    if mech.phi_prime_inf() <= 0:
        return 0.0
    return float(np.exp(-x * mech.phi_inverse(0.0)))


def _stat_integrand(mech, imm):
    b = mech.b
    lim = imm.psi_prime0() / b

    def f(z):
        z = np.asarray(z, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = imm.psi(z) / mech.phi(z)
        return np.where(z == 0, lim, out)
    return f


def stationary_laplace(mech: BranchingMechanism, imm: ImmigrationMechanism, lam):
    """exp(-int_0^lambda psi(z)/phi(z) dz) for the subcritical (b > 0) CBI."""
    if mech.b <= 0:
        raise DomainError("stationary distribution needs b > 0")
    f = _stat_integrand(mech, imm)
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.empty_like(lam_arr)
    for i, L in enumerate(lam_arr):
        if L == 0:
            out[i] = 1.0
            continue
        # geometric grading towards 0 where psi/phi may be singular in slope
        edges = L * np.concatenate([[0.0], np.geomspace(1e-12, 1.0, 26)])
        total = 0.0
        for a, c in zip(edges[:-1], edges[1:]):
            total += float(gl_fixed(lambda s: f(s), a, c, panels=1, order=20))
        out[i] = np.exp(-total)
    return out if np.ndim(lam) else float(out[0])


def stationary_mean(mech: BranchingMechanism, imm: ImmigrationMechanism) -> float:
    if mech.b <= 0:
        raise DomainError("stationary distribution needs b > 0")
    return imm.psi_prime0() / mech.b


def tv_bound(mech: BranchingMechanism, x: float, y: float, t: float) -> float:
    """2 (1 - exp(-vbar_t |x - y|)) bounds the total variation distance."""
    if not mech.grey().holds:
        raise DomainError("total variation bound needs Grey's condition")
    vb = vbar(mech, t)
    return float(2.0 * -np.expm1(-vb * abs(x - y)))


def ergodicity_bound(mech: BranchingMechanism, imm: ImmigrationMechanism, x: float,
                     r: float, t: float) -> float:
    """2 [x + psi'(0)/b] vbar_r e^{b(r - t)} for t >= r > 0."""
    if mech.b <= 0:
        raise DomainError("ergodicity bound needs b > 0")
    if not mech.grey().holds:
        raise DomainError("ergodicity bound needs Grey's condition")
    if not np.isfinite(imm.psi_prime0()):
        raise DomainError("ergodicity bound needs psi'(0) < inf")
    if not (0 < r <= t):
        raise DomainError("need 0 < r <= t")
    return float(2.0 * (x + imm.psi_prime0() / mech.b) * vbar(mech, r) * np.exp(mech.b * (r - t)))


def coalescence_prob(mech: BranchingMechanism, x: float, y: float, t: float) -> float:
    """P{tau <= t} = exp(-|x - y| vbar_t) for the coupled pair."""
    vb = vbar(mech, t)
    if x == y:
        return 1.0
    return 0.0 if np.isinf(vb) else float(np.exp(-abs(x - y) * vb))


def coalescence_tol_bias(mech: BranchingMechanism, x: float, y: float, t: float,
                         tol: float, cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    """Upper bound on P{0 < |Y_t - X_t| <= tol} for the coupled pair.

    The difference is a CB process D from |x - y|; with lambda = 1 / tol,
    P{0 < D_t <= tol} <= e E[e^{-lambda D_t}; D_t > 0]
                       = e (e^{-d v_t(lambda)} - e^{-d vbar_t}).
    """
    if tol <= 0 or x == y:
        return 0.0
    d = abs(x - y)
    vt = float(flow(mech, 1.0 / tol, t, cfg=cfg).v)
    vb = vbar(mech, t)
    return float(np.e * (np.exp(-d * vt) - (0.0 if np.isinf(vb) else np.exp(-d * vb))))


# maximal jumps --------------------------------------------------------------

def max_jump_cdf(q: LawQuery, r: float, cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    """P{largest branching jump on (0, t] <= r} for the CB process."""
    u = solve_u_r(q.mech, r, q.t, cfg)
    return float(np.exp(-q.x * u))


def max_jump_cdf_cbi(q: LawQuery, r: float, cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    """P{no jump of size > r on (0, t]} for the CBI process, counting both the
    branching jumps and the immigrant arrivals."""
    mech_r = q.mech.truncate(r)
    imm_r = q.imm.truncate(r)
    theta = q.mech.tail_mass(r)
    extras = [] if imm_r.is_zero else [_psi_extra(imm_r)]
    res = flow(mech_r, 0.0, q.t, theta=theta, extras=extras, cfg=cfg)
    expo = -q.x * res.v - q.imm.tail_mass(r) * q.t
    if extras:
        expo -= res.integrals[0]
    return float(np.exp(expo))


def global_max_jump_cdf(mech: BranchingMechanism, x: float, r: float) -> float:
    """P{sup_{t > 0} Delta X_t <= r} = exp(-x phi_r^{-1}(m(r, inf)))."""
    mech_r = mech.truncate(r)
    return float(np.exp(-x * mech_r.phi_inverse(mech.tail_mass(r))))


# generator identity -------------------------------------------------------------

def generator_residual(q: LawQuery, lam: float, cfg: SolverConfig = DEFAULT_SOLVER,
                       panels: int = 8, order: int = 20) -> float:
    """Residual of  P_t e_lambda(x) = e^{-x lambda}
    + int_0^t int [y phi(lambda) - psi(lambda)] e^{-y lambda} P_s(x, dy) ds.

    The inner integrals are evaluated from the flow: int e^{-y lambda} P_s(dy)
    is the Laplace transform L(s) and int y e^{-y lambda} P_s(dy) equals
    L(s) [x v'_s + int_0^s psi'(v_r) v'_r dr].  The outer integral uses
    composite Gauss-Legendre nodes.
    """
    mech, imm, x, t = q.mech, q.imm, q.x, q.t
    lhs = float(laplace_P(q, lam, cfg))
    if t == 0:
        return abs(lhs - np.exp(-x * lam))
    xg, wg = gauss_legendre(order)
    edges = np.linspace(0.0, t, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (a + b) + 0.5 * (b - a) * xg).ravel()
    w = (0.5 * (b - a) * wg).ravel()
    extras = [_psi_extra(imm), lambda v, vp: imm.psi_prime(v) * vp]
    res = flow(mech, np.full_like(s, lam), s, extras=extras, cfg=cfg)
    L0 = np.exp(-x * res.v - res.integrals[0])
    L1 = L0 * (x * res.v_prime + res.integrals[1])
    integrand = mech.phi(lam) * L1 - imm.psi(lam) * L0
    rhs = np.exp(-x * lam) + float(np.dot(w, integrand))
    return abs(lhs - rhs)


def generator_identity_residual(mech: BranchingMechanism, imm: ImmigrationMechanism | None,
                                x: float, t: float, lam: float,
                                cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    return generator_residual(LawQuery(mech, imm or NO_IMMIGRATION, x, t), lam, cfg)


def laplace_inhomogeneous(mech: BranchingMechanism, nu_imm: ImmigrationMechanism,
                          rate, t: float, lam, x: float = 0.0, panels: int = 16,
                          order: int = 20, cfg: SolverConfig = DEFAULT_SOLVER):
    """exp{-x v_t(lambda) - int_0^t psi(v_{t-s}(lambda)) rho(s) ds} for an
    immigration rate density rho(s) (a callable of s)."""
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    xg, wg = gauss_legendre(order)
    edges = np.linspace(0.0, t, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (a + b) + 0.5 * (b - a) * xg).ravel()
    w = (0.5 * (b - a) * wg).ravel()
    S, Lm = np.meshgrid(s, lam_arr, indexing="ij")
    v = flow(mech, Lm, t - S, cfg=cfg).v
    integ = np.tensordot(w * np.asarray(rate(s), dtype=float), nu_imm.psi(v), axes=(0, 0))
    vt = flow(mech, lam_arr, t, cfg=cfg).v if x else 0.0
    out = np.exp(-x * vt - integ)
    return out if np.ndim(lam) else float(out[0])


__all__ = [
    "LawQuery", "laplace_Q", "laplace_P", "laplace_Qb", "mean_Q", "mean_P",
    "extinction_prob", "extinction_ever", "limit_distribution", "joint_laplace",
    "total_integral_laplace", "total_integral_finite_prob", "stationary_laplace",
    "stationary_mean", "tv_bound", "ergodicity_bound", "coalescence_prob",
    "coalescence_tol_bias", "max_jump_cdf", "max_jump_cdf_cbi", "global_max_jump_cdf", "generator_residual",
    "generator_identity_residual", "LimitDistribution",
    "laplace_inhomogeneous", "NO_IMMIGRATION",
]
