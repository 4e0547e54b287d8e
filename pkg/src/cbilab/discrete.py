"""Galton-Watson chains, with and without immigration, and their rescaling.

For a branching mechanism phi and an integer k the offspring pgf is

    g_k = (gamma_0 g_0 + gamma_1 g_1) / gamma_k,
    g_0(z) = z + phi_0(k(1 - z)) / (k gamma_0),
    gamma_0 = (1 + 2c) k + int u (1 - e^{-ku}) m(du),

with g_1 = 1 (b > 0) or z^2 (b < 0) and gamma_1 = |b|.  When m is a finite
sum of atoms g_0 is an explicit mixture

    (k / gamma_0) z + (2ck / gamma_0) (1 + z^2) / 2
        + sum_j (mu_j u_j (1 - e^{-a_j}) / gamma_0) R_{a_j}(z),   a_j = k u_j,

where R_a puts mass (e^{-a} - 1 + a) / (a (1 - e^{-a})) at 0 and is a
Poisson(a) law conditioned on {>= 2} otherwise.  That mixture is what the
simulator samples.

The immigration pgf is h_k(z) = exp(-psi(k(1 - z)) / gamma_k): a Poisson
number of immigrants from the linear part plus, for each atom of nu, a
Poisson number of clusters each of Poisson(k u_j) individuals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, PopulationOverflowError
from .measures import FiniteAtoms, ZeroMeasure
from .mechanisms import BranchingMechanism, ImmigrationMechanism
from .rng import PathStreams

OVERFLOW = 1e12


# offspring laws -------------------------------------------------------------------

@dataclass(frozen=True)
class Component:
    """One mixture component of an offspring law.

    kind: "stay" (1 child), "death" (0), "double" (2), "binary" (0 or 2
    with probability 1/2 each), "atom" (the law R_a above, parameter a),
    "table" (explicit probabilities in ``table``).
    """

    kind: str
    weight: float
    a: float = 0.0
    table: tuple = ()

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "stay":
            return z
        if self.kind == "death":
            return np.ones_like(z)
        if self.kind == "double":
            return z * z
        if self.kind == "binary":
            return 0.5 * (1 + z * z)
        if self.kind == "atom":
            a = self.a
            norm = a * -np.expm1(-a)
            # e^{-a(1-z)} - e^{-a}(1 + a z) collects the terms n >= 2
            high = np.exp(-a * (1 - z)) - np.exp(-a) * (1 + a * z)
            return ((np.expm1(-a) + a) + high) / norm
        if self.kind == "table":
            return np.polynomial.polynomial.polyval(z, np.asarray(self.table))
        raise DomainError(f"unknown component kind {self.kind}")

    def probs(self, nmax: int) -> np.ndarray:
        p = np.zeros(nmax + 1)
        if self.kind == "stay":
            p[1] = 1
        elif self.kind == "death":
            p[0] = 1
        elif self.kind == "double":
            p[2] = 1
        elif self.kind == "binary":
            p[0] = p[2] = 0.5
        elif self.kind == "atom":
            a = self.a
            norm = a * -np.expm1(-a)
            p[0] = (np.expm1(-a) + a) / norm
            n = np.arange(2, nmax + 1)
            p[2:] = np.exp(-a + n * np.log(a) - special.gammaln(n + 1)) / norm
        elif self.kind == "table":
            t = np.asarray(self.table)
            p[:min(len(t), nmax + 1)] = t[:nmax + 1]
        return p

    def mean(self) -> float:
        if self.kind == "stay":
            return 1.0
        if self.kind in ("death",):
            return 0.0
        if self.kind in ("double",):
            return 2.0
        if self.kind == "binary":
            return 1.0
        if self.kind == "atom":
            return 1.0
        t = np.asarray(self.table)
        return float(np.dot(np.arange(len(t)), t))


@dataclass(frozen=True)
class OffspringLaw:
    """A probability law on the non-negative integers, given as a mixture.

    ``pgf_fn`` overrides the mixture pgf when the law is only known
    through its generating function (sampler_kind "none").
    """

    components: tuple = ()
    sampler_kind: str = "explicit"
    pgf_fn: Callable | None = field(default=None, compare=False)

    def pgf(self, z):
        if self.pgf_fn is not None:
            return self.pgf_fn(np.asarray(z, dtype=float))
        z = np.asarray(z, dtype=float)
        return sum(c.weight * c.pgf(z) for c in self.components)

    def probs(self, nmax: int | None = None) -> np.ndarray:
        """Probability table, truncated where the tail drops below 1e-16."""
        if not self.components:
            raise DomainError("law known only through its pgf")
        if nmax is None:
            nmax = 2
            for c in self.components:
                if c.kind == "atom":
                    nmax = max(nmax, int(c.a + 12 * np.sqrt(c.a) + 40))
                if c.kind == "table":
                    nmax = max(nmax, len(c.table) - 1)
        return sum(c.weight * c.probs(nmax) for c in self.components)

    def mean(self) -> float:
        return float(sum(c.weight * c.mean() for c in self.components))

    # sampling ----------------------------------------------------------------
    def sample_total(self, n, ps: PathStreams, role: str, step: int, rows=None):
        """Total offspring of n[i] independent individuals for each row."""
        if self.sampler_kind == "none":
            raise DomainError("no sampler for this offspring law")
        n = np.asarray(n, dtype=np.int64)
        total = np.zeros_like(n)
        remaining = n.copy()
        w_left = 1.0
        comps = [c for c in self.components if c.weight > 0]
        for j, c in enumerate(comps):
            if j == len(comps) - 1:
                cnt = remaining
            else:
                pj = min(1.0, c.weight / w_left) if w_left > 0 else 0.0
                cnt = ps.binomial(remaining, pj, f"{role}:mix", step, slot=j, rows=rows)
            remaining = remaining - cnt
            w_left -= c.weight
            total += _component_total(c, cnt, ps, f"{role}:c{j}", step, rows)
        return total


def _component_total(c: Component, cnt, ps, role, step, rows):
    if c.kind == "stay":
        return cnt
    if c.kind == "death":
        return np.zeros_like(cnt)
    if c.kind == "double":
        return 2 * cnt
    if c.kind == "binary":
        return 2 * ps.binomial(cnt, 0.5, role, step, rows=rows)
    if c.kind == "atom":
        p0 = (np.expm1(-c.a) + c.a) / (c.a * -np.expm1(-c.a))
        zeros = ps.binomial(cnt, p0, role, step, slot=0, rows=rows)
        return _sum_poisson_ge2(c.a, cnt - zeros, ps, role, step, rows)
    if c.kind == "table":
        t = np.asarray(c.table, dtype=float)
        total = np.zeros_like(cnt)
        rem = cnt.copy()
        left = 1.0
        for v in range(len(t)):
            if t[v] <= 0:
                continue
            pv = min(1.0, t[v] / left) if left > 0 else 0.0
            take = rem if v == len(t) - 1 else ps.binomial(rem, pv, role, step, slot=v, rows=rows)
            total += v * take
            rem -= take
            left -= t[v]
        return total
    raise DomainError(c.kind)


def _sum_poisson_ge2(a, K, ps, role, step, rows):
    """Sum of K[i] iid Poisson(a) variables conditioned on being >= 2."""
    K = np.asarray(K, dtype=np.int64)
    out = np.zeros_like(K)
    if not np.any(K > 0):
        return out
    all_rows = np.arange(len(ps)) if rows is None else np.arange(len(ps))[rows]
    owner = np.repeat(np.arange(K.size), K)
    slot = np.arange(owner.size) - np.repeat(np.cumsum(K) - K, K)
    prow = all_rows[owner]
    if a < 10:
        u = ps.uniform(role + ":ge2", step, slot + 1, 0, prow)
        tail = special.gammainc(2.0, a)  # P{Poisson(a) >= 2}
        target = u * tail
        k = np.full(u.shape, 2, dtype=np.int64)
        pk = np.full(u.shape, np.exp(-a) * a * a / 2)
        F = pk.copy()
        todo = target > F
        while np.any(todo):
            i = np.flatnonzero(todo)
            k[i] += 1
            pk[i] *= a / k[i]
            F[i] += pk[i]
            todo[i] = (target[i] > F[i]) & (pk[i] > 0)
        draws = k
    else:
        draws = np.full(owner.size, -1, dtype=np.int64)
        pend = np.arange(owner.size)
        rnd = 0
        while pend.size:
            d = ps.poisson(np.full(pend.size, a), role + ":ge2", step,
                           slot=slot[pend] + 1 + (rnd << 32), rows=prow[pend])
            ok = d >= 2
            draws[pend[ok]] = d[ok]
            pend = pend[~ok]
            rnd += 1
    np.add.at(out, owner, draws)
    return out


# pgf calculus -------------------------------------------------------------------

def pgf_iterate(law, n: int, z):
    """g^{(n)}(z), the n-fold composition; ``law`` is an OffspringLaw or callable."""
    g = law.pgf if hasattr(law, "pgf") else law
    out = np.asarray(z, dtype=float)
    for _ in range(int(n)):
        out = g(out)
    return out


def extinction_fixed_point(law, tol: float = 1e-15, max_iter: int = 10_000_000) -> float:
    """Smallest fixed point of g on [0, 1], by monotone iteration from 0."""
    g = law.pgf if hasattr(law, "pgf") else law
    q = 0.0
    for _ in range(max_iter):
        nq = float(g(q))
        if abs(nq - q) <= tol:
            return nq
        q = nq
    return q


def explicit_table_law(probs: Sequence[float]) -> OffspringLaw:
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise DomainError("probabilities must be non-negative and sum to one")
    return OffspringLaw((Component("table", 1.0, table=tuple(p)),), "explicit")


def transition_row(law: OffspringLaw, i: int, nmax: int) -> np.ndarray:
    """Q(i, .) = i-fold convolution of the offspring table, truncated at nmax."""
    p = law.probs()
    row = np.zeros(nmax + 1)
    row[0] = 1.0
    for _ in range(i):
        row = np.convolve(row, p)[:nmax + 1]
    return row


# rescaled families -------------------------------------------------------------------

@dataclass(frozen=True)
class RescaledFamily:
    k: int
    gamma_k: float
    offspring: OffspringLaw
    immigration: OffspringLaw | None
    mech: BranchingMechanism
    imm: ImmigrationMechanism | None = None
    gamma0: float = 0.0

    def one_minus_g(self, y):
        """1 - g_k(1 - y), accurate for small y."""
        y = np.asarray(y, dtype=float)
        k, b = self.k, self.mech.b
        val = self.gamma0 * y - self.mech.phi0(k * y) / k
        if b < 0:
            val = val + abs(b) * (2 * y - y * y)
        return val / self.gamma_k

    def g(self, z):
        return self.offspring.pgf(z)


def _pgf_general(mech, k, gamma0, gamma):
    b = mech.b

    def g(z):
        z = np.asarray(z, dtype=float)
        g0 = z + mech.phi0(k * (1 - z)) / (k * gamma0)
        g1 = np.ones_like(z) if b > 0 else z * z
        return (gamma0 * g0 + abs(b) * g1) / gamma
    return g


def mechanism_to_offspring(mech: BranchingMechanism, k: int,
                           imm: ImmigrationMechanism | None = None) -> RescaledFamily:
    if k < 1:
        raise DomainError("k must be a positive integer")
    k = int(k)
    m = mech.m
    gamma0 = (1 + 2 * mech.c) * k + float(m.phi_part_d1(float(k)))
    gamma = gamma0 + abs(mech.b)
    if isinstance(m, (ZeroMeasure, FiniteAtoms)):
        comps = [Component("stay", k / gamma), Component("binary", 2 * mech.c * k / gamma)]
        if isinstance(m, FiniteAtoms):
            for u, mu in m.atoms:
                a = k * u
                comps.append(Component("atom", mu * u * -np.expm1(-a) / gamma, a=a))
        if mech.b > 0:
            comps.append(Component("death", mech.b / gamma))
        elif mech.b < 0:
            comps.append(Component("double", -mech.b / gamma))
        comps = [c for c in comps if c.weight > 0]
        kind = "poisson_mixture" if isinstance(m, FiniteAtoms) else "explicit"
        law = OffspringLaw(tuple(comps), kind)
    else:
        law = OffspringLaw((), "none", _pgf_general(mech, k, gamma0, gamma))
    immlaw = immigration_to_law(imm, k, gamma) if imm is not None else None
    return RescaledFamily(k, gamma, law, immlaw, mech, imm, gamma0)


@dataclass(frozen=True)
class ImmigrationLaw(OffspringLaw):
    """Poisson(beta k / gamma) plus, per atom (u_j, nu_j), Poisson(nu_j / gamma)
    clusters of Poisson(k u_j) individuals."""

    k: int = 1
    gamma: float = 1.0
    imm: ImmigrationMechanism | None = None

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        return np.exp(-self.imm.psi(self.k * (1 - z)) / self.gamma)

    def mean(self) -> float:
        return self.k * self.imm.psi_prime0() / self.gamma

    def sample_total(self, n, ps, role, step, rows=None):
        size = len(ps) if rows is None else np.arange(len(ps))[rows].size
        total = ps.poisson(np.full(size, self.imm.beta * self.k / self.gamma), role, step, slot=0, rows=rows)
        nu = self.imm.nu
        if isinstance(nu, FiniteAtoms):
            for j, (u, w) in enumerate(nu.atoms):
                clusters = ps.poisson(np.full(size, w / self.gamma), role, step, slot=2 * j + 1, rows=rows)
                total = total + ps.poisson(clusters * self.k * u, role, step, slot=2 * j + 2, rows=rows)
        return total


def immigration_to_law(imm: ImmigrationMechanism | None, k: int, gamma_k: float) -> ImmigrationLaw:
    if imm is None:
        imm = ImmigrationMechanism()
    if not isinstance(imm.nu, (ZeroMeasure, FiniteAtoms)):
        raise DomainError("immigration law supported for nu = Zero or FiniteAtoms")
    return ImmigrationLaw((), "poisson_mixture", None, int(k), float(gamma_k), imm)


def phi_k(fam: RescaledFamily, z):
    """k gamma_k [g_k(e^{-z/k}) - e^{-z/k}], evaluated without cancellation."""
    z = np.asarray(z, dtype=float)
    k, b = fam.k, fam.mech.b
    y = -np.expm1(-z / k)
    out = fam.mech.phi0(k * y) + k * b * y
    if b < 0:
        out = out + k * abs(b) * y * y
    return out


def psi_k(fam: RescaledFamily, z):
    """gamma_k [1 - h_k(e^{-z/k})]."""
    z = np.asarray(z, dtype=float)
    y = -np.expm1(-z / fam.k)
    return fam.gamma_k * -np.expm1(-fam.imm.psi(fam.k * y) / fam.gamma_k)


def vk_recursion(fam: RescaledFamily, t: float, lam):
    """v_k(t, lambda) = -k log g_k^{(floor(gamma_k t))}(e^{-lambda/k}).

    Iterates y = 1 - z while y <= 1/2 and z itself otherwise, so neither
    end loses precision.
    """
    lam = np.asarray(lam, dtype=float)
    n = int(np.floor(fam.gamma_k * t))
    if n == 0:
        return lam.copy() if lam.ndim else float(lam)
    k = fam.k
    y = -np.expm1(-np.atleast_1d(lam) / k)
    z = np.exp(-np.atleast_1d(lam) / k)
    g_general = _pgf_general(fam.mech, k, fam.gamma0, fam.gamma_k)
    for _ in range(n):
        use_y = y <= 0.5
        if np.all(use_y):
            y = fam.one_minus_g(y)
            z = 1.0 - y
            continue
        ny = np.empty_like(y)
        nz = np.empty_like(z)
        ny[use_y] = fam.one_minus_g(y[use_y])
        nz[use_y] = 1.0 - ny[use_y]
        nz[~use_y] = g_general(z[~use_y])
        ny[~use_y] = 1.0 - nz[~use_y]
        y, z = ny, nz
    with np.errstate(divide="ignore"):
        out = np.where(y <= 0.5, -k * np.log1p(-y), -k * np.log(z))
    out = np.where(np.atleast_1d(lam) == 0, 0.0, out)
    return out.reshape(lam.shape) if lam.ndim else float(out[0])


# simulation --------------------------------------------------------------------

@dataclass
class GWResult:
    x: np.ndarray          # rescaled terminal states
    extinct: np.ndarray    # population zero at the final generation
    generations: int


def simulate_gwi(fam: RescaledFamily, x0: float, t: float, seed: int, path_ids,
                 overflow: float = OVERFLOW) -> GWResult:
    """Simulate floor(gamma_k t) generations for each path id; returns Z/k."""
    if seed is None:
        raise DomainError("a seed is required")
    path_ids = np.asarray(path_ids)
    ps = PathStreams(seed, path_ids)
    k = fam.k
    z = np.full(path_ids.size, int(round(k * x0)), dtype=np.int64)
    n_gen = int(np.floor(fam.gamma_k * t))
    has_imm = fam.immigration is not None and not fam.imm.is_zero
    for gen in range(n_gen):
        active = np.flatnonzero(z > 0)
        if active.size:
            z[active] = fam.offspring.sample_total(z[active], ps, "gw", gen, rows=active)
        if has_imm:
            z = z + fam.immigration.sample_total(None, ps, "gwi", gen)
        if z.size and z.max() > overflow:
            raise PopulationOverflowError(f"population exceeded {overflow:g} at generation {gen}")
    return GWResult(z / k, z == 0, n_gen)
