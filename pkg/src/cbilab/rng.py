"""Counter-based random numbers keyed by (seed, path id, role, step, slot).

Every variate is a pure function of its key, so a path's draws do not
depend on which other paths share the batch, on chunking, or on the number
of worker processes.  Keys are hashed with the splitmix64 finaliser.

Samplers work by inversion where a fast inverse CDF exists (normal,
exponential, gamma) and by Hormann's transformed rejection (PTRS for
Poisson, BTRS for binomial) otherwise; rejection attempts use their own
counter values so the scheme stays stateless.
"""
from __future__ import annotations

import zlib

import numpy as np
from scipy import special

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO53 = 2.0 ** -53


def mix_int(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_U1, _U2 = np.uint64(_M1), np.uint64(_M2)


def mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> _S30)
    z *= _U1
    z ^= z >> _S27
    z *= _U2
    z ^= z >> _S31
    return z


def role_code(role: str) -> int:
    return zlib.crc32(role.encode())


def _to_unit(bits: np.ndarray) -> np.ndarray:
    """53 high bits mapped to the open interval (0, 1)."""
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


class PathStreams:
    """Random streams for a set of path ids under one seed.

    ``uniform(role, step, slot, sub, rows)`` returns one uniform per selected
    path; ``rows`` indexes into ``ids`` (all paths by default) and ``slot``
    may be an array aligned with ``rows``.
    """

    def __init__(self, seed: int, ids):
        if seed is None:
            raise ValueError("a seed is required")
        self.seed = int(seed)
        self.ids = np.asarray(ids, dtype=np.uint64).ravel()
        base = np.uint64(mix_int(self.seed * GOLDEN + 0x632BE59BD9B4E019))
        with np.errstate(over="ignore"):
            self.key = mix64(mix64(self.ids * np.uint64(GOLDEN) + base))

    def __len__(self):
        return self.ids.size

    def _counter(self, role: str, step: int, sub: int) -> int:
        z = mix_int(role_code(role) * GOLDEN + 1)
        z = mix_int(z + (int(step) + 1) * _M1)
        return mix_int(z + (int(sub) + 1) * _M2)

    def bits(self, role, step, slot=0, sub=0, rows=None):
        key = self.key if rows is None else self.key[rows]
        ctr = self._counter(role, step, sub)
        if np.ndim(slot) == 0:
            c = np.uint64(mix_int(ctr + (int(slot) + 1) * GOLDEN))
            return mix64(key ^ c)
        s = np.asarray(slot, dtype=np.uint64)
        with np.errstate(over="ignore"):
            c = mix64(np.uint64(ctr) + (s + np.uint64(1)) * np.uint64(GOLDEN))
        return mix64(key ^ c)

    def uniform(self, role, step, slot=0, sub=0, rows=None):
        return _to_unit(self.bits(role, step, slot, sub, rows))

    # continuous ------------------------------------------------------------
    def normal(self, role, step, slot=0, rows=None):
        return special.ndtri(self.uniform(role, step, slot, 0, rows))

    def exponential(self, role, step, slot=0, rows=None):
        return -np.log(self.uniform(role, step, slot, 0, rows))

    def gamma(self, shape, role, step, slot=0, rows=None):
        """Gamma(shape, 1) by inversion; shape 0 gives 0."""
        shape = np.asarray(shape, dtype=float)
        u = self.uniform(role, step, slot, 0, rows)
        shape = np.broadcast_to(shape, u.shape)
        out = np.zeros_like(u)
        pos = shape > 0
        out[pos] = special.gammaincinv(shape[pos], u[pos])
        return out

    def stable_positive(self, alpha, role, step, slot=0, rows=None):
        """Chambers-Mallows-Stuck draw of S_alpha(1, 1, 0), alpha in (1, 2).

        E exp(-lambda X) = exp(lambda^alpha / |cos(pi alpha / 2)|).
        """
        V = np.pi * (self.uniform(role, step, slot, 0, rows) - 0.5)
        W = -np.log(self.uniform(role, step, slot, 1, rows))
        tan_ = np.tan(np.pi * alpha / 2)
        B = np.arctan(tan_) / alpha
        S = (1 + tan_ ** 2) ** (1 / (2 * alpha))
        return (S * np.sin(alpha * (V + B)) / np.cos(V) ** (1 / alpha)
                * (np.cos(V - alpha * (V + B)) / W) ** ((1 - alpha) / alpha))

    # discrete ---------------------------------------------------------------
    def _rows(self, rows):
        return np.arange(len(self)) if rows is None else np.arange(len(self))[rows]

    def poisson(self, mu, role, step, slot=0, rows=None):
        mu = np.asarray(mu, dtype=float)
        n = len(self) if rows is None else np.arange(len(self))[rows].size
        if mu.ndim == 0:
            mu = np.full(n, float(mu))
        if mu.size and mu.max() < 10:
            # one uniform per row; rows with mu = 0 invert to 0
            return _poisson_inversion(mu, self.uniform(role, step, slot, 0, rows))
        rows_idx = self._rows(rows)
        slot_arr = np.broadcast_to(np.asarray(slot), (n,))
        out = np.zeros(n, dtype=np.int64)
        small = (mu > 0) & (mu < 10)
        if np.any(small):
            i = np.flatnonzero(small)
            out[i] = _poisson_inversion(mu[i], self.uniform(role, step, _sl(slot_arr, i), 0, rows_idx[i]))
        large = mu >= 10
        if np.any(large):
            i = np.flatnonzero(large)
            out[i] = self._ptrs(mu[i], role, step, _sl(slot_arr, i), rows_idx[i])
        return out

    def _ptrs(self, lam, role, step, slot, rows):
        slam = np.sqrt(lam)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        vr = 0.9277 - 3.6224 / (b - 2)
        out = np.full(lam.shape, -1, dtype=np.int64)
        pend = np.arange(lam.size)
        attempt = 0
        while pend.size:
            full = pend.size == lam.size
            sel = slice(None) if full else pend
            U = self.uniform(role, step, _sl(slot, sel), 2 * attempt, rows[sel]) - 0.5
            V = self.uniform(role, step, _sl(slot, sel), 2 * attempt + 1, rows[sel])
            us = 0.5 - np.abs(U)
            aa, bb = a[sel], b[sel]
            k = np.floor((2 * aa / us + bb) * U + lam[sel] + 0.43)
            acc = (us >= 0.07) & (V <= vr[sel])
            slow = np.flatnonzero(~acc & (k >= 0) & ~((us < 0.013) & (V > us)))
            if slow.size:
                g = pend[slow]
                ks, uss = k[slow], us[slow]
                invalpha = 1.1239 + 1.1328 / (b[g] - 3.4)
                lhs = np.log(V[slow]) + np.log(invalpha) - np.log(a[g] / (uss * uss) + b[g])
                rhs = -lam[g] + ks * np.log(lam[g]) - special.gammaln(ks + 1)
                acc[slow] = lhs <= rhs
            out[pend[acc]] = k[acc].astype(np.int64)
            pend = pend[~acc]
            attempt += 1
        return out

    def binomial(self, n, p, role, step, slot=0, rows=None):
        n = np.asarray(n)
        p = np.asarray(p, dtype=float)
        rows_idx = np.arange(len(self)) if rows is None else np.arange(len(self))[rows]
        m = rows_idx.size
        n = np.broadcast_to(n, (m,)).astype(np.int64)
        p = np.broadcast_to(p, (m,)).astype(float)
        slot_arr = np.broadcast_to(np.asarray(slot), (m,))
        flip = p > 0.5
        pp = np.where(flip, 1 - p, p)
        out = np.zeros(m, dtype=np.int64)
        active = (n > 0) & (pp > 0)
        small = active & (n * pp < 10)
        if np.any(small):
            i = np.flatnonzero(small)
            out[i] = _binomial_inversion(n[i], pp[i], self.uniform(role, step, _sl(slot_arr, i), 0, rows_idx[i]))
        large = active & ~small
        if np.any(large):
            i = np.flatnonzero(large)
            out[i] = self._btrs(n[i], pp[i], role, step, _sl(slot_arr, i), rows_idx[i])
        return np.where(flip, n - out, out)

    def _btrs(self, n, p, role, step, slot, rows):
        nf = n.astype(float)
        q = 1 - p
        spq = np.sqrt(nf * p * q)
        b = 1.15 + 2.53 * spq
        a = -0.0873 + 0.0248 * b + 0.01 * p
        c = nf * p + 0.5
        vr = 0.92 - 4.2 / b
        out = np.full(n.shape, -1, dtype=np.int64)
        pend = np.arange(n.size)
        attempt = 0
        while pend.size:
            full = pend.size == n.size
            sel = slice(None) if full else pend
            U = self.uniform(role, step, _sl(slot, sel), 2 * attempt, rows[sel]) - 0.5
            V = self.uniform(role, step, _sl(slot, sel), 2 * attempt + 1, rows[sel])
            us = 0.5 - np.abs(U)
            aa, bb = a[sel], b[sel]
            k = np.floor((2 * aa / us + bb) * U + c[sel])
            inside = (k >= 0) & (k <= nf[sel])
            acc = inside & (us >= 0.07) & (V <= vr[sel])
            slow = np.flatnonzero(inside & ~acc)
            if slow.size:
                g = pend[slow]
                ns, ps_, ks, uss = nf[g], p[g], k[slow], us[slow]
                spq_s = spq[g]
                alpha = (2.83 + 5.1 / b[g]) * spq_s
                m = np.floor((ns + 1) * ps_)
                lv = np.log(V[slow] * alpha / (a[g] / (uss * uss) + b[g]))
                bound = (special.gammaln(m + 1) + special.gammaln(ns - m + 1)
                         - special.gammaln(ks + 1) - special.gammaln(ns - ks + 1)
                         + (ks - m) * np.log(ps_ / q[g]))
                acc[slow] = lv <= bound
            out[pend[acc]] = k[acc].astype(np.int64)
            pend = pend[~acc]
            attempt += 1
        return out


def _sl(slot, idx):
    return slot if np.ndim(slot) == 0 else np.asarray(slot)[idx]


def _poisson_inversion(mu, u):
    k = np.zeros(mu.shape, dtype=np.int64)
    i = np.flatnonzero(u > np.exp(-mu))
    if i.size == 0:
        return k
    mu, u = mu[i], u[i]
    p = np.exp(-mu)
    F = p.copy()
    kk = np.zeros(i.size, dtype=np.int64)
    j = np.arange(i.size)
    it = 0
    while j.size and it < 200:
        kk[j] += 1
        p[j] *= mu[j] / kk[j]
        F[j] += p[j]
        j = j[u[j] > F[j]]
        it += 1
    k[i] = kk
    return k


def _binomial_inversion(n, p, u):
    q = 1 - p
    k = np.zeros(n.shape, dtype=np.int64)
    pk = np.exp(n * np.log1p(-p))
    F = pk.copy()
    r = p / q
    todo = u > F
    while np.any(todo):
        i = np.flatnonzero(todo)
        pk[i] *= (n[i] - k[i]) / (k[i] + 1) * r[i]
        k[i] += 1
        F[i] += pk[i]
        todo[i] = (u[i] > F[i]) & (k[i] < n[i])
    return k

