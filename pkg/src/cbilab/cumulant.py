"""The cumulant semigroup v_t(lambda) and related deterministic functions.

v solves the backward equation  d/dt v_t(lambda) = -phi(v_t(lambda)),
v_0 = lambda.  Integration is vectorised: for horizons T_i the component
i solves dv/dtau = -T_i phi(v) on tau in [0, 1], so a single embedded RK
run handles whole grids of (t, lambda).

The log-derivative  d/dtau log v' = -T phi'(v)  is carried alongside, and
callers may attach extra running integrals  int_0^t g(v_s, v'_s) ds.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, NumericalError
from .mechanisms import BranchingMechanism
from .ode import SolverConfig, integrate
from .quadrature import integrate_s

LAM_SWITCH = 1e4
VBAR_W_MIN = 1e-6

DEFAULT_SOLVER = SolverConfig()


# closed forms ------------------------------------------------------------

def q_fn(b: float, alpha: float, t):
    """q^b_alpha(t) = (1 - e^{-alpha b t}) / b, with the limit alpha t at b = 0."""
    t = np.asarray(t, dtype=float)
    if b == 0:
        out = alpha * t
    else:
        out = -np.expm1(-alpha * b * t) / b
    return float(out) if out.ndim == 0 else out


def closed_form_v(c: float, alpha: float, b: float, t, lam):
    """v_t(lambda) for phi(z) = b z + c z^{1+alpha}."""
    t, lam = np.broadcast_arrays(np.asarray(t, float), np.asarray(lam, float))
    q = q_fn(b, alpha, t)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lam_a = lam ** alpha
        big = c * q * lam_a
        out = np.exp(-b * t) * lam / (1.0 + big) ** (1.0 / alpha)
        huge = np.isinf(lam) | (big > 1e300)
        out = np.where(huge, np.exp(-b * t) * (c * q) ** (-1.0 / alpha), out)
    out = np.where(lam == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def closed_form_vbar(c: float, alpha: float, b: float, t):
    """Extinction function c^{-1/alpha} e^{-bt} q^{-1/alpha}."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        out = c ** (-1.0 / alpha) * np.exp(-b * t) * q_fn(b, alpha, t) ** (-1.0 / alpha)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EntranceLaw:
    """v_t(lambda) = h lambda + int (1 - e^{-lambda u}) l_t(du).

    ``kind`` is "exponential" for l_t(du) = A exp(-u / theta) du, or
    "none" for l_t = 0.
    """

    h: float
    kind: str
    A: float = 0.0
    theta: float = 0.0

    @property
    def mass(self) -> float:
        return self.A * self.theta if self.kind == "exponential" else 0.0

    def density(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind != "exponential":
            return np.zeros_like(u)
        return self.A * np.exp(-u / self.theta)

    def laplace(self, lam):
        lam = np.asarray(lam, dtype=float)
        cont = self.A * self.theta ** 2 * lam / (1 + self.theta * lam) if self.kind == "exponential" else 0.0
        return self.h * lam + cont


def entrance_law_quadratic(c: float, b: float, t: float) -> EntranceLaw:
    if not (c > 0 and t > 0):
        raise DomainError("quadratic entrance law needs c > 0 and t > 0")
    theta = c * q_fn(b, 1.0, t)
    return EntranceLaw(0.0, "exponential", float(np.exp(-b * t) / theta ** 2), float(theta))


def entrance_law(mech: BranchingMechanism, t: float) -> EntranceLaw:
    """Canonical pair (h_t, l_t) in the two explicit cases."""
    if mech.c > 0 and mech.m.is_zero():
        return entrance_law_quadratic(mech.c, mech.b, t)
    if mech.c == 0 and mech.m.is_zero():
        return EntranceLaw(float(np.exp(-mech.b * t)), "none")
    raise DomainError("entrance law available only for quadratic or linear mechanisms")


# flow integration -------------------------------------------------------------

Extra = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class FlowResult:
    v: np.ndarray
    v_prime: np.ndarray
    integrals: list = field(default_factory=list)
    steps: int = 0


def _ginv_integral(mech, a, b_, g=None):
    """int_a^b g(z)/phi(z) dz over log-spaced nodes (0 < a < b)."""
    def f(y):
        z = np.exp(y)
        val = z / mech.phi(z)
        if g is not None:
            val = val * g(z)
        return val[:, None]
    return float(integrate_s(f, float(np.log(a)), float(np.log(b_)))[0])


def _preadvance(mech, lam, T, extras):
    """Move components with lambda > LAM_SWITCH down to LAM_SWITCH exactly.

    Uses int_{v}^{lambda} dz / phi(z) = t, v'_t = phi(v_t)/phi(lambda).
    Returns start values (v, logvp, integrals) and remaining horizons.
    """
    v0 = lam.copy()
    lvp = np.zeros_like(lam)
    ints = [np.zeros_like(lam) for _ in extras]
    T_rem = T.copy()
    for i in np.flatnonzero((lam > LAM_SWITCH) & (T > 0)):
        L = lam[i]
        phiL = mech.phi(L)
        tau1 = _ginv_integral(mech, LAM_SWITCH, L)
        if tau1 >= T[i]:
            def h(y):
                return _ginv_integral(mech, np.exp(y), L) - T[i]
            lo = np.log(LAM_SWITCH)
            end = float(optimize.brentq(h, lo, np.log(L), xtol=1e-15, rtol=1e-15)) if h(lo) > 0 else lo
            v1 = float(np.exp(end))
            T_rem[i] = 0.0
        else:
            v1 = LAM_SWITCH
            T_rem[i] = T[i] - tau1
        v0[i] = v1
        lvp[i] = np.log(mech.phi(v1)) - np.log(phiL)
        for j, g in enumerate(extras):
            ints[j][i] = _ginv_integral(mech, v1, L, lambda z, g=g: g(z, mech.phi(z) / phiL))
    return v0, lvp, ints, T_rem


def flow(mech: BranchingMechanism, lam, t, theta: float = 0.0,
         extras: Sequence[Extra] = (), cfg: SolverConfig = DEFAULT_SOLVER,
         preadvance: bool = True) -> FlowResult:
    """Solve v' = theta - phi(v), v(0) = lambda, for broadcast (lambda, t).

    Also returns v'_t = d v_t / d lambda and the integrals
    int_0^t g(v_s, v'_s) ds for every g in ``extras``.
    """
    lam_b, t_b = np.broadcast_arrays(np.asarray(lam, float), np.asarray(t, float))
    shape = lam_b.shape
    L = lam_b.ravel().copy()
    T = t_b.ravel().copy()
    if np.any(L < 0) or np.any(T < 0):
        raise DomainError("lambda and t must be non-negative")
    if theta < 0:
        raise DomainError("theta must be non-negative")
    n_ex = len(extras)
    if preadvance and theta == 0 and np.any(L > LAM_SWITCH) and mech.grey().holds:
        v0, lvp0, ints0, T_rem = _preadvance(mech, L, T, extras)
    else:
        v0, lvp0, ints0, T_rem = L, np.zeros_like(L), [np.zeros_like(L) for _ in extras], T

    y0 = np.vstack([v0, lvp0] + ints0)
    Tr = T_rem

    def rhs(y):
        v = np.maximum(y[0], 0.0)
        dv = Tr * (theta - mech.phi(v))
        dl = -Tr * mech.phi_prime(v)
        rows = [dv, dl]
        if n_ex:
            vp = np.exp(y[1])
            rows += [Tr * g(v, vp) for g in extras]
        return np.vstack(rows)

    if np.any(Tr > 0):
        y, stats = integrate(rhs, y0, 1.0, cfg)
        steps = stats.steps
    else:
        y, steps = y0, 0
    v = np.maximum(y[0], 0.0)
    if not np.all(np.isfinite(v)):
        raise NumericalError("cumulant integration produced non-finite values")
    res = FlowResult(v.reshape(shape), np.exp(y[1]).reshape(shape),
                     [y[2 + j].reshape(shape) for j in range(n_ex)], steps)
    if not shape:
        res.v = float(res.v)
        res.v_prime = float(res.v_prime)
        res.integrals = [float(a) for a in res.integrals]
    return res


def solve_v(mech: BranchingMechanism, lam, t, cfg: SolverConfig = DEFAULT_SOLVER):
    return flow(mech, lam, t, cfg=cfg).v


def v_prime(mech: BranchingMechanism, lam, t, cfg: SolverConfig = DEFAULT_SOLVER):
    return flow(mech, lam, t, cfg=cfg).v_prime


def solve_v_general(mech: BranchingMechanism, lam, t, theta: float,
                    cfg: SolverConfig = DEFAULT_SOLVER):
    """Solution of v' = theta - phi(v), v(0) = lambda (theta = 0 gives solve_v)."""
    return flow(mech, lam, t, theta=theta, cfg=cfg).v


def solve_u_r(mech: BranchingMechanism, r: float, t, cfg: SolverConfig = DEFAULT_SOLVER):
    """u_r(t): u' = m(r, inf) - phi_r(u), u(0) = 0."""
    return solve_v_general(mech.truncate(r), 0.0, t, mech.tail_mass(r), cfg)


def forward_residual(mech: BranchingMechanism, lam, t, cfg: SolverConfig = DEFAULT_SOLVER):
    """d/dt v + phi(lambda) d/dlambda v, which vanishes for the true flow."""
    res = flow(mech, lam, t, cfg=cfg)
    return -mech.phi(res.v) + mech.phi(np.asarray(lam, float)) * res.v_prime


# extinction function ------------------------------------------------------------

def tail_time(mech: BranchingMechanism, x: float) -> float:
    """int_x^inf dz / phi(z) for x > theta0 (finite under Grey's condition)."""
    t0 = mech.theta0()
    if not x > t0:
        return np.inf

    def f(y):
        w = np.exp(y)
        return (w / mech.phi(t0 + w))[:, None]

    return float(integrate_s(f, float(np.log(x - t0)), np.inf)[0])


def vbar(mech: BranchingMechanism, t):
    """bar v_t = lim_{lambda -> inf} v_t(lambda); infinite without Grey's condition."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.full(ts.shape, np.inf)
    if mech.grey().holds:
        t0 = mech.theta0()
        # phi(t0 + w) cancels for tiny w when t0 > 0; past w_min the flow takes over
        w_min = VBAR_W_MIN * max(1.0, t0)
        t_switch = tail_time(mech, t0 + w_min) if t0 > 0 else np.inf
        for i, ti in enumerate(ts):
            if ti <= 0:
                continue
            if ti > t_switch:
                out[i] = solve_v(mech, t0 + w_min, ti - t_switch)
                continue

            def h(y):
                return tail_time(mech, t0 + np.exp(y)) - ti

            lo, hi = -1.0, 1.0
            while h(hi) > 0:
                lo, hi = hi, hi + 4.0
            while h(lo) < 0:
                hi, lo = lo, lo - 4.0
                if lo < -700:
                    break
            y = optimize.brentq(h, lo, hi, xtol=1e-14, rtol=1e-15) if h(lo) >= 0 else lo
            out[i] = t0 + np.exp(y)
    return out if np.ndim(t) else float(out[0])


# tabulation -------------------------------------------------------------------

@dataclass
class CumulantSolution:
    t_grid: np.ndarray
    lam_grid: np.ndarray
    v: np.ndarray
    v_prime: np.ndarray
    mechanism: BranchingMechanism | None = None

    def __post_init__(self):
        self._interp = None

    def __call__(self, t, lam):
        """Monotone (PCHIP) interpolation between grid points."""
        if self._interp is None:
            method = "pchip" if min(len(self.t_grid), len(self.lam_grid)) >= 4 else "linear"
            self._interp = RegularGridInterpolator((self.t_grid, self.lam_grid), self.v,
                                                   method=method)
        t, lam = np.broadcast_arrays(np.asarray(t, float), np.asarray(lam, float))
        pts = np.stack([t.ravel(), lam.ravel()], axis=-1)
        return self._interp(pts).reshape(t.shape)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "lambda", "v", "v_prime"])
            for i, ti in enumerate(self.t_grid):
                for j, lj in enumerate(self.lam_grid):
                    w.writerow([repr(float(ti)), repr(float(lj)),
                                repr(float(self.v[i, j])), repr(float(self.v_prime[i, j]))])


def tabulate(mech: BranchingMechanism, t_grid, lam_grid,
             cfg: SolverConfig = DEFAULT_SOLVER) -> CumulantSolution:
    t_grid = np.asarray(t_grid, dtype=float)
    lam_grid = np.asarray(lam_grid, dtype=float)
    T, L = np.meshgrid(t_grid, lam_grid, indexing="ij")
    res = flow(mech, L, T, cfg=cfg)
    return CumulantSolution(t_grid, lam_grid, np.asarray(res.v), np.asarray(res.v_prime), mech)
