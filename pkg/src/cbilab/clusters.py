"""Poisson-cluster constructions of CB and CBI marginals.

All samplers work at a fixed evaluation time ``t``: cluster seeds arrive at
times ``s`` from an inhomogeneous Poisson process, carry an initial mass,
and are evolved to ``t`` either in closed form (quadratic entrance law) or
with the Euler scheme of :mod:`cbilab.pathsim`.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .cumulant import entrance_law_quadratic, q_fn
from .errors import DomainError
from .measures import LevyMeasure
from .mechanisms import BranchingMechanism
from .pathsim import PathConfig, simulate_cbi
from .quadrature import gl_fixed
from .rng import PathStreams, mix_int

SEED_SHIFT = 20  # cluster member ids are sample_id << SEED_SHIFT | member index
PART_SPAN = 1 << (SEED_SHIFT - 2)  # member indices reserved per arrival stream


# intensities ------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    rate: float

    def __post_init__(self):
        if not self.rate >= 0:
            raise DomainError("rate must be non-negative")

    def density(self, s):
        return np.full(np.shape(s), float(self.rate))

    def integrated(self, s):
        return self.rate * np.asarray(s, dtype=float)

    def inverse(self, y):
        return np.asarray(y, dtype=float) / self.rate


@dataclass(frozen=True)
class ExpDecay:
    """z e^{-delta s}."""

    z: float
    delta: float

    def __post_init__(self):
        if not self.z >= 0:
            raise DomainError("scale must be non-negative")

    def density(self, s):
        return self.z * np.exp(-self.delta * np.asarray(s, dtype=float))

    def integrated(self, s):
        s = np.asarray(s, dtype=float)
        if self.delta == 0:
            return self.z * s
        return self.z * -np.expm1(-self.delta * s) / self.delta

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.delta == 0:
            return y / self.z
        return -np.log1p(-self.delta * y / self.z) / self.delta


@dataclass(frozen=True)
class ExpRamp:
    """beta delta^{-1} (1 - e^{-delta s}): seeds created by mass that
    immigrates at rate beta and decays at rate delta."""

    beta: float
    delta: float

    def __post_init__(self):
        if not (self.beta >= 0 and self.delta > 0):
            raise DomainError("ExpRamp needs beta >= 0 and delta > 0")

    def density(self, s):
        return self.beta * -np.expm1(-self.delta * np.asarray(s, dtype=float)) / self.delta

    def integrated(self, s):
        s = np.asarray(s, dtype=float)
        d = self.delta
        return self.beta / d * (s + np.expm1(-d * s) / d)

    def inverse(self, y):
        # w - 1 + e^{-w} = A with w = delta s, solved by the Lambert W function
        A = self.delta ** 2 * np.asarray(y, dtype=float) / self.beta
        w = A + 1 + special.lambertw(-np.exp(-(A + 1)), 0).real
        return w / self.delta


RateFunction = Constant | ExpDecay | ExpRamp


def rate_from_dict(d: dict) -> RateFunction:
    kinds = {"constant": Constant, "exp_decay": ExpDecay, "exp_ramp": ExpRamp}
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in kinds:
        raise DomainError(f"unknown rate kind {kind!r}")
    return kinds[kind](**d)


# sample containers --------------------------------------------------------------

@dataclass
class ClusterSample:
    arrival_times: np.ndarray
    seed_masses: np.ndarray
    contributions: np.ndarray
    total: float


@dataclass
class ClusterBatch:
    """Totals for a batch of samples plus the flattened cluster members."""

    sample_ids: np.ndarray
    deterministic: np.ndarray
    total: np.ndarray
    member_sample: np.ndarray
    arrival_times: np.ndarray
    seed_masses: np.ndarray
    contributions: np.ndarray
    diagnostics: dict

    def __len__(self):
        return self.total.size

    def sample(self, i: int) -> ClusterSample:
        sel = self.member_sample == self.sample_ids[i]
        return ClusterSample(self.arrival_times[sel], self.seed_masses[sel],
                             self.contributions[sel], float(self.total[i]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("sample_id,arrival_time,seed_mass,contribution\n")
            for row in zip(self.member_sample, self.arrival_times, self.seed_masses,
                           self.contributions):
                fh.write(f"{int(row[0])},{row[1]!r},{row[2]!r},{row[3]!r}\n")


def _empty_batch(ids, det):
    det = np.full(ids.size, float(det))
    e = np.zeros(0)
    return ClusterBatch(ids, det, det.copy(), np.zeros(0, np.int64), e, e, e, {})


def _member_seed(seed: int) -> int:
    return mix_int(int(seed) ^ zlib.crc32(b"cluster members")) >> 1


def _ids(n_samples, sample_ids):
    if sample_ids is not None:
        return np.asarray(sample_ids, dtype=np.int64)
    return np.arange(int(n_samples), dtype=np.int64)


def _arrivals(ps, rate: RateFunction, mass: float, t: float, measure, role):
    """Poisson arrivals on (0, t] with intensity rate(s) ds times ``measure``
    normalised; returns (row, member index, time, mass) arrays."""
    total = float(rate.integrated(t)) * mass
    n = len(ps)
    if total <= 0:
        empty = np.zeros(0)
        return np.zeros(0, np.int64), np.zeros(0, np.int64), empty, empty
    K = ps.poisson(total, role + ":count", 0)
    if K.size and K.max() >= PART_SPAN:
        raise DomainError("too many cluster members for one sample")
    rows, idx, times, masses = [], [], [], []
    for j in range(int(K.max()) if n else 0):
        r = np.flatnonzero(K > j)
        u = ps.uniform(role + ":time", 0, slot=j, rows=r)
        times.append(np.minimum(rate.inverse(u * rate.integrated(t)), t))
        masses.append(measure.sample_sizes(ps.uniform(role + ":mass", 0, slot=j, rows=r)))
        rows.append(r)
        idx.append(np.full(r.size, j))
    cat = lambda a, dt: np.concatenate(a) if a else np.zeros(0, dt)
    return cat(rows, np.int64), cat(idx, np.int64), cat(times, float), cat(masses, float)


def _evolve(mech, masses, times, member_ids, t, cfg, seed, workers):
    """CB evolution (no immigration) of each member from its arrival to t."""
    if masses.size == 0:
        return np.zeros(0), {}
    cfg_t = PathConfig(cfg.dt, t, cfg.jump_cutoff_eps, cfg.small_jump_mode)
    start = np.minimum(np.rint(times / cfg_t.step).astype(np.int64), cfg_t.n_steps)
    ens = simulate_cbi(mech, None, masses, cfg_t, _member_seed(seed), path_ids=member_ids,
                       workers=workers, start_step=start)
    return ens.terminal, ens.diagnostics


def _cluster_batch(mech, measure: LevyMeasure, parts, t, cfg, seed, ids, deterministic,
                   workers=1):
    """``parts`` is a list of (rate function, role); members from every part
    share ``measure`` as their seed-mass law."""
    mass = measure.mass()
    if not np.isfinite(mass):
        raise DomainError("seed measure has infinite mass; truncate it first")
    ps = PathStreams(seed, ids)
    rows, idx, times, masses = [], [], [], []
    offset = 0
    for rate, role in parts:
        r, j, s, u = _arrivals(ps, rate, mass, t, measure, role)
        rows.append(r)
        idx.append(j + offset)
        times.append(s)
        masses.append(u)
        offset += PART_SPAN
    rows, idx = np.concatenate(rows), np.concatenate(idx)
    times, masses = np.concatenate(times), np.concatenate(masses)
    member_ids = (ids[rows] << SEED_SHIFT) | idx
    contrib, diag = _evolve(mech, masses, times, member_ids, t, cfg, seed, workers)
    det = np.broadcast_to(np.asarray(deterministic, dtype=float), ids.shape).copy()
    total = det + np.bincount(rows, weights=contrib, minlength=ids.size)
    return ClusterBatch(ids, det, total, ids[rows], times, masses, contrib, dict(diag))


# samplers ---------------------------------------------------------------------------

def sample_quadratic_excursion_marginal(c: float, b: float, z: float, t: float, seed: int,
                                        n_samples: int | None = None,
                                        sample_ids=None) -> np.ndarray:
    """X_t^z as a Poisson(z l_t mass) sum of exponential cluster values."""
    if z < 0:
        raise DomainError("z must be non-negative")
    ids = _ids(n_samples, sample_ids)
    if z == 0:
        return np.zeros(ids.size)
    law = entrance_law_quadratic(c, b, t)
    ps = PathStreams(seed, ids)
    N = ps.poisson(z * law.mass, "excursion:count", 0)
    return law.theta * ps.gamma(N.astype(float), "excursion:values", 0)


def delta_of(mech: BranchingMechanism) -> float:
    """phi'(inf) = b + int u m(du) for c = 0."""
    return mech.phi_prime_inf()


def sample_delta_finite_cb(mech: BranchingMechanism, z: float, t: float, cfg: PathConfig,
                           seed: int, n_samples: int | None = None, sample_ids=None,
                           workers: int = 1) -> ClusterBatch:
    """z e^{-delta t} plus clusters seeded at rate z e^{-delta s} m(du) ds."""
    return sample_delta_finite_cbi(mech, 0.0, z, t, cfg, seed, n_samples, sample_ids, workers)


def sample_delta_finite_cbi(mech: BranchingMechanism, beta: float, z: float, t: float,
                            cfg: PathConfig, seed: int, n_samples: int | None = None,
                            sample_ids=None, workers: int = 1) -> ClusterBatch:
    """CBI with psi(lambda) = beta lambda for c = 0 and finite m.

    Deterministic part z e^{-delta t} + beta delta^{-1} (1 - e^{-delta t});
    seeds arrive at rate [z e^{-delta s} + beta delta^{-1}(1 - e^{-delta s})] m(du) ds.
    """
    if mech.c != 0:
        raise DomainError("the delta-finite construction needs c = 0")
    if z < 0 or beta < 0:
        raise DomainError("z and beta must be non-negative")
    delta = delta_of(mech)
    if not np.isfinite(delta):
        raise DomainError("phi'(inf) must be finite")
    ids = _ids(n_samples, sample_ids)
    det = z * np.exp(-delta * t)
    parts = []
    if mech.m.is_zero():
        det = det + beta * q_fn(delta, 1.0, t)
        return _empty_batch(ids, det)
    if z > 0:
        parts.append((ExpDecay(z, delta), "decay"))
    if beta > 0:
        if delta <= 0:
            raise DomainError("immigration part needs delta > 0")
        det = det + beta * q_fn(delta, 1.0, t)
        parts.append((ExpRamp(beta, delta), "ramp"))
    if not parts:
        return _empty_batch(ids, det)
    return _cluster_batch(mech, mech.m, parts, t, cfg, seed, ids, det, workers)


def sample_immigration_cluster(mech: BranchingMechanism, nu: LevyMeasure, rho: RateFunction,
                               t: float, cfg: PathConfig, seed: int,
                               n_samples: int | None = None, sample_ids=None,
                               workers: int = 1) -> ClusterBatch:
    """Y_t from immigrants arriving at rate rho(s) ds nu(du), each evolving as a CB."""
    if not np.isfinite(nu.first_moment()):
        raise DomainError("immigration measure needs a finite first moment")
    ids = _ids(n_samples, sample_ids)
    if nu.is_zero():
        return _empty_batch(ids, 0.0)
    return _cluster_batch(mech, nu, [(rho, "immigrant")], t, cfg, seed, ids, 0.0, workers)


@dataclass
class SuperpositionResult:
    samples: np.ndarray
    bias_bound: float       # beta y0 / c, dominates the neglected mean
    neglected_mean: float   # exact mean of the mass below the floor
    floor: float
    intensity: float        # expected number of members above the floor


def floor_bias_bound(c: float, beta: float, y0: float) -> float:
    """beta y0 / c.

    With theta = c q(s), d theta = c e^{-bs} ds, so the neglected mean
    beta int_0^t e^{-bs} g(y0 / theta_s) ds, g(r) = 1 - e^{-r}(1 + r), is at
    most beta / c int_0^inf g(y0 / theta) d theta = beta y0 / c for every b.
    """
    return beta * y0 / c


def neglected_mean(c: float, b: float, beta: float, t: float, y0: float) -> float:
    """beta int_0^t int_0^{y0} y l_s(dy) ds for the quadratic entrance law."""
    def f(s):
        th = c * q_fn(b, 1.0, s)
        r = y0 / th
        return np.exp(-b * s) * -(np.expm1(-r) + r * np.exp(-r))
    edges = np.concatenate([[0.0], t * np.geomspace(1e-8, 1.0, 40)])
    return float(beta * sum(gl_fixed(f, a, e, panels=1, order=20) for a, e in zip(edges[:-1], edges[1:])))


def sample_quadratic_cbi_superposition(c: float, b: float, beta: float, t: float, y0: float,
                                       seed: int, n_samples: int | None = None,
                                       sample_ids=None) -> SuperpositionResult:
    """Quadratic CBI from 0 with psi = beta lambda, built from the cluster
    members whose value at t exceeds ``y0``.

    Members form a Poisson measure with intensity beta l_s(dy) ds.  Above the
    floor, the arrival time is drawn by thinning in w = log s against the
    envelope beta max(1, bt / (e^{bt} - 1)) / c, and the value is
    y0 + Exponential(c q(s)) by memorylessness.
    """
    if not (c > 0 and t > 0 and y0 > 0 and beta >= 0):
        raise DomainError("need c > 0, t > 0, y0 > 0, beta >= 0")
    ids = _ids(n_samples, sample_ids)
    if beta == 0:
        return SuperpositionResult(np.zeros(ids.size), 0.0, 0.0, y0, 0.0)
    bias = floor_bias_bound(c, beta, y0)
    neglected = neglected_mean(c, b, beta, t, y0)
    bt = b * t
    env = beta * max(1.0, bt / np.expm1(bt) if bt != 0 else 1.0) / c
    # below s_min the factor exp(-y0 / theta_s) is under e^{-50}
    s_min = min(t, _s_for_theta(c, b, y0 / 50.0))
    w_lo, w_hi = np.log(s_min), np.log(t)
    ps = PathStreams(seed, ids)
    K = ps.poisson(env * (w_hi - w_lo), "super:proposals", 0)
    out = np.zeros(ids.size)
    accepted = 0
    for j in range(int(K.max()) if ids.size else 0):
        r = np.flatnonzero(K > j)
        w = w_lo + (w_hi - w_lo) * ps.uniform("super:time", 0, slot=j, rows=r)
        s = np.exp(w)
        th = c * q_fn(b, 1.0, s)
        f = beta * s * np.exp(-b * s) / th * np.exp(-y0 / th)
        keep = ps.uniform("super:accept", 0, slot=j, rows=r) * env <= f
        rk = r[keep]
        val = y0 + th[keep] * ps.exponential("super:value", 0, slot=j, rows=rk)
        out[rk] += val
        accepted += rk.size
    intensity = accepted / max(1, ids.size)
    return SuperpositionResult(out, bias, neglected, y0, intensity)


def _s_for_theta(c, b, theta):
    """Time s with c q(s) = theta."""
    x = theta / c
    if b == 0:
        return x
    arg = 1 - b * x
    if arg <= 0:
        return np.inf
    return -np.log(arg) / b
