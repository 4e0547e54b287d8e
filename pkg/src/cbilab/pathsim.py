"""Monte Carlo simulation of CB and CBI stochastic equations.

The Euler scheme works on a whole batch of paths at once.  Per step of
length ``dt`` and left-endpoint state ``y``:

* diffusion ``sqrt(2 c y dt) N(0, 1)`` and drift ``-b y dt``;
* branching jumps by thinning: Poisson(``y m(eps, inf) dt``) jumps with sizes
  from the normalised restriction of ``m``, compensated by
  ``-y dt int_(eps, inf) u m(du)``; jumps below ``eps`` are neglected or
  replaced by a variance-matched Gaussian;
* immigration ``beta dt`` plus compound Poisson arrivals from ``nu``.

Measures of finite total mass are simulated without a cutoff.  Every draw
comes from :class:`cbilab.rng.PathStreams`, so a path depends only on
``(seed, path id)`` and never on batching or the number of workers.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .cumulant import q_fn
from .errors import DomainError, PopulationOverflowError
from .measures import FiniteAtoms, LevyMeasure
from .mechanisms import NO_IMMIGRATION, BranchingMechanism, ImmigrationMechanism
from .rng import PathStreams

OVERFLOW = 1e12
CHUNK = 25_000
CLAMP_WARN = 0.01
SMALL_JUMP_MODES = ("neglect", "gaussian")


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-3
    horizon: float = 1.0
    jump_cutoff_eps: float = 1e-3
    small_jump_mode: str = "neglect"
    record_jumps: bool = False
    record_every: int = 0  # keep states every n steps; 0 keeps the terminal only

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise DomainError("dt and horizon must be positive")
        if self.dt > self.horizon * (1 + 1e-12):
            raise DomainError("dt must not exceed the horizon")
        if not self.jump_cutoff_eps > 0:
            raise DomainError("jump cutoff must be positive")
        if self.small_jump_mode not in SMALL_JUMP_MODES:
            raise DomainError(f"small_jump_mode must be one of {SMALL_JUMP_MODES}")
        if self.record_every < 0:
            raise DomainError("record_every must be non-negative")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def step(self) -> float:
        """The step actually used: horizon / n_steps."""
        return self.horizon / self.n_steps


@dataclass
class SamplePath:
    times: np.ndarray
    states: np.ndarray
    jumps: list = field(default_factory=list)  # (time, size, origin)
    noise_id: tuple = (None, None)
    integral_cache: float | None = None


@dataclass
class CoupledPair:
    lower: SamplePath
    upper: SamplePath


@dataclass
class Ensemble:
    """Batch of simulated paths with per-path functionals."""

    seed: int
    path_ids: np.ndarray
    terminal: np.ndarray
    integral: np.ndarray
    max_jump: np.ndarray       # largest branching jump, 0 when none
    max_jump_imm: np.ndarray   # largest immigration arrival, 0 when none
    clamps: np.ndarray         # steps clamped at 0, per path
    n_steps: int
    dt: float
    times: np.ndarray | None = None
    states: np.ndarray | None = None
    jumps: np.ndarray | None = None  # structured: path, time, size, origin
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.terminal.size

    @property
    def clamp_rate(self) -> float:
        return float(self.clamps.sum()) / max(1, self.clamps.size * self.n_steps)

    def path(self, i: int) -> SamplePath:
        """The ``i``-th path; states are available only when recorded."""
        if self.states is None:
            times = np.array([0.0, self.n_steps * self.dt])
            states = np.array([np.nan, self.terminal[i]])
        else:
            times, states = self.times, self.states[i]
        jumps = []
        if self.jumps is not None:
            sel = self.jumps[self.jumps["path"] == self.path_ids[i]]
            jumps = [(float(r["time"]), float(r["size"]), ORIGINS[r["origin"]]) for r in sel]
        return SamplePath(times, states, jumps, (self.seed, int(self.path_ids[i])),
                          float(self.integral[i]))


ORIGINS = ("branching", "immigration")
JUMP_DTYPE = np.dtype([("path", np.int64), ("time", float), ("size", float), ("origin", np.int8)])


# jump specifications ----------------------------------------------------------

@dataclass(frozen=True)
class _Jumps:
    atom_sizes: np.ndarray
    atom_rates: np.ndarray
    measure: LevyMeasure | None   # continuous part, sampled above ``cut``
    cut: float
    rate: float                   # mass of the continuous part above cut
    mean: float                   # int_(cut, inf) u m(du), all parts
    small_mean: float             # int_(0, cut] u m(du)
    small_var: float              # int_(0, cut] u^2 m(du)

    @property
    def empty(self) -> bool:
        return self.atom_sizes.size == 0 and self.measure is None


def _jumps(m: LevyMeasure, eps: float, need_mean: bool = True) -> _Jumps:
    none = np.zeros(0)
    if m.is_zero():
        return _Jumps(none, none, None, 0.0, 0.0, 0.0, 0.0, 0.0)
    if isinstance(m, FiniteAtoms):
        keep = [(s, w) for s, w in m.atoms if w > 0]
        sizes = np.array([s for s, _ in keep])
        rates = np.array([w for _, w in keep])
        return _Jumps(sizes, rates, None, 0.0, 0.0, float(np.dot(sizes, rates)), 0.0, 0.0)
    total = m.mass()
    cut = 0.0 if np.isfinite(total) else float(eps)
    rate = total if cut == 0 else m.tail_mass(cut)
    mean = m.tail_first_moment(cut) if need_mean else 0.0
    small_mean = m.small_first_moment(cut) if cut > 0 else 0.0
    small_var = m.small_second_moment(cut) if cut > 0 else 0.0
    if need_mean and not np.isfinite(mean):
        raise DomainError("branching measure needs a finite first moment above the cutoff")
    return _Jumps(none, none, m, cut, float(rate), float(mean), float(small_mean), float(small_var))


@dataclass(frozen=True)
class _Model:
    b: float
    c: float
    branch: _Jumps
    beta: float
    imm: _Jumps
    alpha: float = 0.0   # stable driver index, 0 when absent
    q: float = 0.0
    gaussian_small: bool = False


def _model(mech, imm, cfg, alpha=0.0, q=0.0) -> _Model:
    eps = cfg.jump_cutoff_eps
    br = _jumps(mech.m, eps)
    im = _jumps(imm.nu, eps, need_mean=False)
    # small immigrant arrivals below the cutoff enter through their mean
    beta = imm.beta + im.small_mean
    return _Model(mech.b, mech.c, br, beta, im, alpha, q, cfg.small_jump_mode == "gaussian")


# the Euler engine -----------------------------------------------------------------

def _compound(ps, jp: _Jumps, intensity, role, step, rows, dt, record):
    """Total, maximum and (optionally) individual sizes of one step's jumps.

    ``intensity`` is the per-row multiplier of the jump rates (the state for
    branching jumps, 1 for immigration).
    """
    n = rows.size
    total = np.zeros(n)
    biggest = np.zeros(n)
    events = []
    for j, (s, w) in enumerate(zip(jp.atom_sizes, jp.atom_rates)):
        cnt = ps.poisson(intensity * (w * dt), role + ":atom", step, slot=j, rows=rows)
        hit = cnt > 0
        if np.any(hit):
            total += cnt * s
            biggest[hit] = np.maximum(biggest[hit], s)
            if record:
                i = np.flatnonzero(hit)
                events.append((np.repeat(i, cnt[i]), np.full(int(cnt[i].sum()), s)))
    if jp.measure is not None and jp.rate > 0:
        cnt = ps.poisson(intensity * (jp.rate * dt), role + ":count", step, rows=rows)
        for k in range(int(cnt.max()) if cnt.size else 0):
            i = np.flatnonzero(cnt > k)
            u = ps.uniform(role + ":size", step, slot=k, rows=rows[i])
            size = jp.measure.sample_sizes(u, lo=jp.cut)
            total[i] += size
            biggest[i] = np.maximum(biggest[i], size)
            if record:
                events.append((i, size))
    return total, biggest, events


def _euler_chunk(model: _Model, cfg: PathConfig, seed: int, ids: np.ndarray,
                 x0: np.ndarray, start: np.ndarray | None, prefix: str = ""):
    ps = PathStreams(seed, ids)
    n = ids.size
    n_steps, dt = cfg.n_steps, cfg.step
    y = np.array(np.broadcast_to(x0, (n,)), dtype=float)
    integral = np.zeros(n)
    mj_b = np.zeros(n)
    mj_i = np.zeros(n)
    clamps = np.zeros(n, dtype=np.int64)
    every = cfg.record_every
    states = None
    if every:
        states = np.empty((n, n_steps // every + 1))
        states[:, 0] = y
    jump_log = []
    br, im = model.branch, model.imm
    drift = model.b + br.mean
    has_imm = model.beta > 0 or not im.empty
    if model.alpha:
        a = model.alpha
        sigma = (dt * abs(np.cos(np.pi * a / 2)) / a) ** (1 / a)
    all_rows = np.arange(n)
    R = prefix
    for step in range(n_steps):
        rows = all_rows if start is None else np.flatnonzero(start <= step)
        if rows.size == 0:
            continue
        full = rows.size == n
        yl = y if full else y[rows]
        pos = yl > 0
        live = rows[pos] if not np.all(pos) else rows
        yp = yl[pos] if live is not rows else yl
        inc = np.zeros(rows.size)
        dl = np.zeros(live.size)
        if model.c > 0:
            dl += np.sqrt(2 * model.c * yp * dt) * ps.normal(R + "diffusion", step, rows=live)
        dl -= drift * yp * dt
        if not br.empty:
            jt, jm, ev = _compound(ps, br, yp, R + "branch", step, live, dt, cfg.record_jumps)
            dl += jt
            loc = np.flatnonzero(pos) if live is not rows else np.arange(rows.size)
            g = rows[loc]
            mj_b[g] = np.maximum(mj_b[g], jm)
            for i, s in ev:
                jump_log.append((ids[live[i]], step, s, 0))
            if model.gaussian_small and br.small_var > 0:
                dl += np.sqrt(yp * dt * br.small_var) * ps.normal(R + "small", step, rows=live)
        if model.alpha and model.q > 0:
            X = ps.stable_positive(model.alpha, R + "stable", step, rows=live)
            dl += (model.alpha * model.q * yp) ** (1 / model.alpha) * sigma * X
        if live is rows:
            inc += dl
        else:
            inc[pos] = dl
        if has_imm:
            inc += model.beta * dt
            if not im.empty:
                it, im_max, ev = _compound(ps, im, 1.0, R + "imm", step, rows, dt, cfg.record_jumps)
                inc += it
                mj_i[rows] = np.maximum(mj_i[rows], im_max)
                for i, s in ev:
                    jump_log.append((ids[rows[i]], step, s, 1))
        yn = yl + inc
        neg = yn < 0
        if np.any(neg):
            clamps[rows[neg]] += 1
            yn[neg] = 0.0
        integral[rows] += 0.5 * dt * (yl + yn)
        if full:
            y = yn
        else:
            y[rows] = yn
        if every and (step + 1) % every == 0:
            states[:, (step + 1) // every] = y
        if yn.size and yn.max() > OVERFLOW:
            raise PopulationOverflowError(f"state exceeded {OVERFLOW:g} at step {step}")
    jumps = None
    if cfg.record_jumps:
        parts = [np.zeros(0, JUMP_DTYPE)]
        for pid, step, s, origin in jump_log:
            rec = np.zeros(np.size(s), JUMP_DTYPE)
            rec["path"], rec["time"], rec["size"], rec["origin"] = pid, (step + 0.5) * dt, s, origin
            parts.append(rec)
        jumps = np.concatenate(parts)
    return dict(terminal=y, integral=integral, max_jump=mj_b, max_jump_imm=mj_i,
                clamps=clamps, states=states, jumps=jumps)


def _chunks(n: int, size: int):
    return [slice(i, min(n, i + size)) for i in range(0, n, size)]


def _run(model, cfg, seed, ids, x0, start=None, workers=1, prefix="") -> Ensemble:
    if seed is None:
        raise DomainError("a seed is required")
    ids = np.asarray(ids, dtype=np.int64).ravel()
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), ids.shape)
    if np.any(x0 < 0):
        raise DomainError("initial states must be non-negative")
    if start is not None:
        start = np.broadcast_to(np.asarray(start, dtype=np.int64), ids.shape)
    parts = _chunks(ids.size, CHUNK)
    args = [(ids[s], x0[s], None if start is None else start[s]) for s in parts]
    fn = partial(_euler_chunk, model, cfg, int(seed), prefix=prefix)
    if workers > 1 and len(parts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(fn, *zip(*args)))
    else:
        res = [fn(*a) for a in args]
    cat = {k: (np.concatenate([r[k] for r in res]) if res and res[0][k] is not None else None)
           for k in res[0]} if res else {}
    if not res:
        z = np.zeros(0)
        cat = dict(terminal=z, integral=z, max_jump=z, max_jump_imm=z,
                   clamps=np.zeros(0, np.int64), states=None, jumps=None)
    times = None
    if cfg.record_every:
        times = cfg.step * np.arange(0, cfg.n_steps + 1, cfg.record_every)
    ens = Ensemble(int(seed), ids, n_steps=cfg.n_steps, dt=cfg.step, times=times, **cat)
    rate = ens.clamp_rate
    ens.diagnostics["clamp_rate"] = rate
    if rate > CLAMP_WARN:
        msg = f"clamp rate {rate:.3%} exceeds {CLAMP_WARN:.0%} of steps"
        ens.diagnostics["warning"] = msg
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return ens


def _ids(n_paths=None, path_ids=None):
    if path_ids is not None:
        return np.asarray(path_ids, dtype=np.int64)
    if n_paths is None:
        raise DomainError("give n_paths or path_ids")
    return np.arange(int(n_paths), dtype=np.int64)


# public simulators ----------------------------------------------------------------

def simulate_cbi(mech: BranchingMechanism, imm: ImmigrationMechanism | None, x0,
                 cfg: PathConfig, seed: int, n_paths: int | None = None, path_ids=None,
                 workers: int = 1, start_step=None) -> Ensemble:
    """Euler scheme for the CBI equation; ``start_step`` delays individual paths."""
    imm = NO_IMMIGRATION if imm is None else imm
    model = _model(mech, imm, cfg)
    return _run(model, cfg, seed, _ids(n_paths, path_ids), x0, start_step, workers)


def simulate_path(mech: BranchingMechanism, imm: ImmigrationMechanism | None, x0: float,
                  cfg: PathConfig, noise_id: tuple) -> SamplePath:
    """One fully recorded path for ``noise_id = (seed, path index)``."""
    seed, idx = noise_id
    cfg1 = PathConfig(cfg.dt, cfg.horizon, cfg.jump_cutoff_eps, cfg.small_jump_mode,
                      True, 1)
    return simulate_cbi(mech, imm, x0, cfg1, seed, path_ids=[idx]).path(0)


def simulate_stable_cir(alpha: float, q: float, c: float, b: float,
                        imm: ImmigrationMechanism | None, x0, cfg: PathConfig, seed: int,
                        n_paths: int | None = None, path_ids=None,
                        workers: int = 1) -> Ensemble:
    """Euler scheme for dy = sqrt(2 c y) dB + (alpha q y)^{1/alpha} dz - b y dt + dI,
    z a spectrally positive stable driver with E e^{-lambda z_t} = e^{t lambda^alpha / alpha}.

    The matching branching mechanism is ``mechanisms.stable_driver(alpha, q, c, b)``.
    """
    if not 1 < alpha < 2:
        raise DomainError("driver index must lie in (1, 2)")
    if q < 0 or c < 0:
        raise DomainError("q and c must be non-negative")
    imm = NO_IMMIGRATION if imm is None else imm
    model = _model(BranchingMechanism(b, c), imm, cfg, alpha=alpha, q=q)
    return _run(model, cfg, seed, _ids(n_paths, path_ids), x0, None, workers)


def simulate_cir_exact(c: float, b: float, beta: float, x0, t: float, seed: int,
                       n_paths: int | None = None, path_ids=None) -> np.ndarray:
    """Exact transition of the quadratic CBI with psi(z) = beta z.

    Y = G + Gamma(N, c q), G ~ Gamma(beta / c, c q), N ~ Poisson(x0 e^{-bt} / (c q)).
    """
    if not c > 0:
        raise DomainError("c must be positive")
    if beta < 0 or np.any(np.asarray(x0) < 0):
        raise DomainError("beta and x0 must be non-negative")
    ids = _ids(n_paths, path_ids)
    if t == 0:
        return np.broadcast_to(np.asarray(x0, dtype=float), ids.shape).copy()
    scale = c * float(q_fn(b, 1.0, t))
    out = np.empty(ids.size)
    for s in _chunks(ids.size, 10 * CHUNK):
        ps = PathStreams(seed, ids[s])
        x = np.broadcast_to(np.asarray(x0, dtype=float), ids.shape)[s]
        N = ps.poisson(x * np.exp(-b * t) / scale, "cir:count", 0)
        y = ps.gamma(N.astype(float), "cir:jumps", 0)
        if beta > 0:
            y = y + ps.gamma(beta / c, "cir:immigration", 0)
        out[s] = scale * y
    return out


@dataclass
class CoupledEnsemble:
    lower: Ensemble
    upper_terminal: np.ndarray
    difference: Ensemble

    @property
    def upper_integral(self) -> np.ndarray:
        return self.lower.integral + self.difference.integral

    def pair(self, i: int) -> CoupledPair:
        lo = self.lower.path(i)
        d = self.difference.path(i)
        up = SamplePath(lo.times, lo.states + d.states, lo.jumps + d.jumps, lo.noise_id,
                        lo.integral_cache + d.integral_cache)
        return CoupledPair(lo, up)

    def violations(self) -> int:
        return int(np.sum(self.upper_terminal < self.lower.terminal))


def simulate_coupled_pair(mech: BranchingMechanism, imm: ImmigrationMechanism | None,
                          x0: float, y0: float, cfg: PathConfig, seed: int,
                          n_paths: int | None = None, path_ids=None,
                          workers: int = 1) -> CoupledEnsemble:
    """Shared-noise pair started at x0 <= y0.

    The white-noise and Poisson marks below the lower path drive both paths;
    marks between the two drive only the upper one.  That split makes the
    upper path the lower path plus an independent CB-process (no
    immigration) started at ``y0 - x0``, which is how it is simulated; the
    lower path is identical to ``simulate_cbi`` with the same noise id.
    """
    if x0 > y0:
        raise DomainError("need x0 <= y0")
    imm = NO_IMMIGRATION if imm is None else imm
    ids = _ids(n_paths, path_ids)
    lower = simulate_cbi(mech, imm, x0, cfg, seed, path_ids=ids, workers=workers)
    model = _model(mech, NO_IMMIGRATION, cfg)
    diff = _run(model, cfg, seed, ids, y0 - x0, None, workers, prefix="excess:")
    upper = lower.terminal + diff.terminal
    if np.any(upper < lower.terminal):
        raise AssertionError("coupling order violated")
    return CoupledEnsemble(lower, upper, diff)


def path_functionals(path: SamplePath, origin: str | None = None) -> dict:
    """Integral, largest recorded jump and terminal value of one path.

    ``origin`` restricts the maximum to ``"branching"`` or ``"immigration"``
    jumps.
    """
    if path.integral_cache is not None:
        integral = float(path.integral_cache)
    else:
        t, y = np.asarray(path.times), np.asarray(path.states)
        integral = float(np.sum(0.5 * np.diff(t) * (y[1:] + y[:-1])))
    sizes = [j[1] for j in path.jumps if origin is None or j[2] == origin]
    return {"integral": integral, "max_jump": float(max(sizes, default=0.0)),
            "terminal": float(np.asarray(path.states)[-1])}
