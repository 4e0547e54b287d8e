"""Monte Carlo versus analytic comparisons.

Every analytic column is taken from :mod:`cbilab.laws` or
:mod:`cbilab.cumulant`; this module only simulates, estimates and scores.
A report row passes when ``|empirical - analytic| <= z* se + slack`` where
``z*`` is the Bonferroni-adjusted version of the nominal threshold over the
gating rows of the report and ``slack`` is a declared deterministic bias
bound (zero for most rows).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special

from . import laws
from .errors import ConfigError, DomainError
from .laws import LawQuery
from .mechanisms import NO_IMMIGRATION, BranchingMechanism, ImmigrationMechanism, quadratic
from .pathsim import (PathConfig, simulate_cbi, simulate_cir_exact,
                      simulate_coupled_pair)

Z_NOMINAL = 3.0


def bonferroni_z(n_rows: int, z: float = Z_NOMINAL) -> float:
    """Two-sided threshold keeping the family-wise level of a single |Z| <= z test."""
    if n_rows <= 1:
        return float(z)
    alpha = 2 * special.ndtr(-z)
    return float(-special.ndtri(alpha / (2 * n_rows)))


# empirical Laplace transforms ------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalLaplace:
    lambda_grid: np.ndarray
    estimates: np.ndarray
    std_errs: np.ndarray
    n_samples: int


def empirical_laplace(samples, lambda_grid) -> EmpiricalLaplace:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DomainError("need at least two samples")
    if np.any(x < 0):
        raise DomainError("samples must be non-negative")
    lam = np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    est = np.empty(lam.size)
    se = np.empty(lam.size)
    for i, L in enumerate(lam):
        e = np.exp(-L * x)
        est[i] = e.mean()
        se[i] = e.std(ddof=1) / np.sqrt(x.size)
    return EmpiricalLaplace(lam, est, se, x.size)


def mean_and_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def proportion_and_se(flags) -> tuple[float, float]:
    f = np.asarray(flags, dtype=bool)
    p = float(f.mean())
    return p, float(np.sqrt(max(p * (1 - p), 0.0) / f.size))


# reports ------------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    quantity: str
    params: str
    analytic: float
    empirical: float
    std_err: float
    slack: float = 0.0
    gate: bool = True
    kind: str = "equal"    # "upper": empirical must not exceed analytic
    z_score: float = 0.0
    passed: bool = True


@dataclass
class ComparisonReport:
    name: str
    rows: list = field(default_factory=list)
    threshold: float = Z_NOMINAL
    attempts: int = 1
    notes: dict = field(default_factory=dict)

    def add(self, quantity, params, analytic, empirical, std_err, slack=0.0, gate=True,
            kind="equal"):
        if kind not in ("equal", "upper"):
            raise ValueError(f"unknown row kind {kind!r}")
        self.rows.append(ComparisonRow(str(quantity), str(params), float(analytic),
                                       float(empirical), float(std_err), float(slack), gate, kind))
        return self

    def extend(self, other: "ComparisonReport"):
        self.rows.extend(other.rows)
        self.notes.update(other.notes)
        return self

    @property
    def adjusted_threshold(self) -> float:
        return bonferroni_z(sum(r.gate and r.kind == "equal" for r in self.rows), self.threshold)

    def score(self) -> "ComparisonReport":
        zstar = self.adjusted_threshold
        for r in self.rows:
            diff = r.empirical - r.analytic
            if r.std_err > 0:
                r.z_score = diff / r.std_err
            else:
                r.z_score = 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
            room = zstar * r.std_err + r.slack + 1e-12 * abs(r.analytic)
            r.passed = bool(diff <= room if r.kind == "upper" else abs(diff) <= room)
        return self

    @property
    def passed(self) -> bool:
        self.score()
        return all(r.passed for r in self.rows if r.gate)

    @property
    def max_abs_z(self) -> float:
        self.score()
        zs = [abs(r.z_score) for r in self.rows if r.gate and r.kind == "equal"]
        return float(max(zs, default=0.0))

    def to_csv(self, path: str | Path | None = None) -> str:
        self.score()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "params", "analytic", "empirical", "std_err", "slack",
                    "z_score", "gate", "kind", "pass"])
        for r in self.rows:
            w.writerow([r.quantity, r.params, repr(r.analytic), repr(r.empirical),
                        repr(r.std_err), repr(r.slack), repr(r.z_score), int(r.gate),
                        r.kind, int(r.passed)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_text(self) -> str:
        self.score()
        head = (f"{self.name}: {'PASS' if self.passed else 'FAIL'} "
                f"(threshold {self.adjusted_threshold:.3f}, attempts {self.attempts})")
        lines = [head, f"{'quantity':<22}{'params':<28}{'analytic':>13}{'empirical':>13}"
                       f"{'std_err':>11}{'z':>8}  ok"]
        for r in self.rows:
            flag = ("yes" if r.passed else "NO") if r.gate else "info"
            lines.append(f"{r.quantity:<22}{r.params:<28}{r.analytic:>13.6g}{r.empirical:>13.6g}"
                         f"{r.std_err:>11.3g}{r.z_score:>8.2f}  {flag}")
        return "\n".join(lines)


def with_rerun(check: Callable[[int], ComparisonReport], seed: int) -> ComparisonReport:
    """Run ``check(seed)``; on failure rerun once with an independent seed.

    A second failure is final.  The returned report records the attempts.
    """
    rep = check(seed)
    if rep.passed:
        return rep
    first = rep.max_abs_z
    rep = check(seed + 1_000_003)
    rep.attempts = 2
    rep.notes["first_attempt_max_abs_z"] = first
    return rep


def laplace_rows(rep: ComparisonReport, samples, lam_grid, analytic, label="laplace",
                 params="", slack=None):
    emp = empirical_laplace(samples, lam_grid)
    analytic = np.broadcast_to(np.asarray(analytic, dtype=float), emp.lambda_grid.shape)
    slack = np.zeros(emp.lambda_grid.size) if slack is None else np.broadcast_to(slack, emp.lambda_grid.shape)
    for L, a, e, s, sl in zip(emp.lambda_grid, analytic, emp.estimates, emp.std_errs, slack):
        rep.add(label, f"{params}lambda={L:g}", a, e, s, sl)
    return rep


def compare_laplace(name: str, samples, lam_grid, analytic, mean_analytic=None,
                    params: str = "") -> ComparisonReport:
    rep = laplace_rows(ComparisonReport(name), samples, lam_grid, analytic, params=params)
    if mean_analytic is not None:
        m, se = mean_and_se(samples)
        rep.add("mean", params, mean_analytic, m, se)
    return rep.score()


# model checks -------------------------------------------------------------------------

def sde_laplace_check(mech: BranchingMechanism, imm: ImmigrationMechanism, x: float,
                      lam_grid, n_paths: int, cfg: PathConfig, seed: int,
                      workers: int = 1, mean: bool = True) -> ComparisonReport:
    """Euler terminal law vs laplace_P (and the mean vs mean_P)."""
    ens = simulate_cbi(mech, imm, x, cfg, seed, n_paths=n_paths, workers=workers)
    q = LawQuery(mech, imm, x, cfg.n_steps * cfg.step)
    rep = compare_laplace("sde", ens.terminal, lam_grid, laws.laplace_P(q, lam_grid),
                          laws.mean_P(q) if mean else None)
    rep.notes["clamp_rate"] = ens.clamp_rate
    return rep


def cir_exact_check(c, b, beta, x, t, lam_grid, n_paths, seed) -> ComparisonReport:
    y = simulate_cir_exact(c, b, beta, x, t, seed, n_paths=n_paths)
    q = LawQuery(quadratic(b, c), ImmigrationMechanism(beta), x, t)
    return compare_laplace("cir_exact", y, lam_grid, laws.laplace_P(q, lam_grid), laws.mean_P(q))


def joint_functional_check(mech, imm, x, lam_grid, theta, n_paths, cfg, seed,
                           workers=1) -> ComparisonReport:
    """E exp(-lambda Y_t - theta int_0^t Y ds) vs joint_laplace."""
    imm = NO_IMMIGRATION if imm is None else imm
    ens = simulate_cbi(mech, imm, x, cfg, seed, n_paths=n_paths, workers=workers)
    q = LawQuery(mech, imm, x, cfg.n_steps * cfg.step)
    rep = ComparisonReport("joint_functional")
    for L in np.atleast_1d(lam_grid):
        v = np.exp(-L * ens.terminal - theta * ens.integral)
        m, se = mean_and_se(v)
        rep.add("joint_laplace", f"lambda={L:g},theta={theta:g}",
                float(laws.joint_laplace(q, L, theta)), m, se)
    return rep.score()


def _check_cutoff(cfg, r_grid):
    if cfg.jump_cutoff_eps >= min(r_grid):
        raise ConfigError("jump_cutoff_eps must lie below every r in the grid")


def max_jump_check(mech, x, t, r_grid, n_paths, cfg: PathConfig, seed,
                   imm: ImmigrationMechanism | None = None, workers=1) -> ComparisonReport:
    """P{largest jump on (0, t] <= r}: branching jumps only for a CB process,
    branching and immigration jumps together for a CBI process."""
    _check_cutoff(cfg, r_grid)
    imm = NO_IMMIGRATION if imm is None else imm
    cfg_t = PathConfig(cfg.dt, t, cfg.jump_cutoff_eps, cfg.small_jump_mode)
    ens = simulate_cbi(mech, imm, x, cfg_t, seed, n_paths=n_paths, workers=workers)
    q = LawQuery(mech, imm, x, t)
    cbi = not imm.is_zero
    rep = ComparisonReport("max_jump_cbi" if cbi else "max_jump")
    biggest = np.maximum(ens.max_jump, ens.max_jump_imm) if cbi else ens.max_jump
    for r in r_grid:
        a = laws.max_jump_cdf_cbi(q, r) if cbi else laws.max_jump_cdf(q, r)
        p, se = proportion_and_se(biggest <= r)
        rep.add("P(max_jump<=r)", f"r={r:g}", a, p, se)
    return rep.score()


def global_max_jump_check(mech, x, r_grid, t_large, n_paths, cfg: PathConfig, seed,
                          workers=1) -> ComparisonReport:
    """P{no branching jump > r ever} vs exp(-x phi_r^{-1}(m(r, inf)))."""
    _check_cutoff(cfg, r_grid)
    if mech.phi_prime_inf() <= 0:
        raise DomainError("global maximum law needs phi'(inf) > 0")
    ext = laws.extinction_prob(LawQuery(mech, x=x, t=t_large))
    if ext < 1 - 1e-3:
        raise DomainError(f"t_large too small: extinction probability {ext:.4f} < 0.999")
    cfg_t = PathConfig(cfg.dt, t_large, cfg.jump_cutoff_eps, cfg.small_jump_mode)
    ens = simulate_cbi(mech, None, x, cfg_t, seed, n_paths=n_paths, workers=workers)
    rep = ComparisonReport("global_max_jump")
    for r in r_grid:
        p, se = proportion_and_se(ens.max_jump <= r)
        # paths alive at t_large may still jump; their probability is the slack
        rep.add("P(sup_jump<=r)", f"r={r:g}", laws.global_max_jump_cdf(mech, x, r), p, se,
                slack=1 - ext)
    return rep.score()


def coalescence_check(mech, imm, x, y, t_grid, tol, n_paths, cfg: PathConfig, seed,
                      tol_sweep=None, workers=1) -> ComparisonReport:
    """P{upper - lower <= tol at t} vs exp(-(y - x) vbar_t), plus the
    difference mean vs (y - x) e^{-bt}.  The slack is the analytic bound on
    P{0 < difference <= tol}; sweep rows are informational."""
    if x > y:
        raise DomainError("need x <= y")
    if not mech.grey().holds:
        raise DomainError("coalescence law needs Grey's condition")
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    horizon = float(t_grid.max())
    cfg_t = PathConfig(cfg.dt, horizon, cfg.jump_cutoff_eps, cfg.small_jump_mode,
                       record_every=1)
    ce = simulate_coupled_pair(mech, imm, x, y, cfg_t, seed, n_paths=n_paths, workers=workers)
    diff_states = ce.difference.states
    times = ce.difference.times
    rep = ComparisonReport("coalescence")
    rep.notes["ordering_violations"] = ce.violations()
    sweep = [] if tol_sweep is None else list(tol_sweep)
    for t in t_grid:
        k = int(np.argmin(np.abs(times - t)))
        d = diff_states[:, k]
        p, se = proportion_and_se(d <= tol)
        rep.add("P(coalesced)", f"t={t:g},tol={tol:g}", laws.coalescence_prob(mech, x, y, t),
                p, se, slack=laws.coalescence_tol_bias(mech, x, y, t, tol))
        for s in sweep:
            ps_, se_ = proportion_and_se(d <= s)
            rep.add("P(coalesced) sweep", f"t={t:g},tol={s:g}",
                    laws.coalescence_prob(mech, x, y, t), ps_, se_,
                    slack=laws.coalescence_tol_bias(mech, x, y, t, s), gate=False)
        m, se_m = mean_and_se(d)
        rep.add("E(upper-lower)", f"t={t:g}", laws.mean_Q(LawQuery(mech, x=y - x, t=t)), m, se_m)
    return rep.score()


def stationarity_check(mech, imm, x_grid, t_large, lam_grid, n_paths, cfg: PathConfig, seed,
                       r: float = 0.1, method: str = "euler", workers=1) -> ComparisonReport:
    """Law at t_large from several starts vs the stationary Laplace transform,
    plus rows checking the ergodicity bound dominates the observed gap."""
    if mech.b <= 0:
        raise DomainError("stationarity needs b > 0")
    lam_grid = np.atleast_1d(np.asarray(lam_grid, dtype=float))
    stat = laws.stationary_laplace(mech, imm, lam_grid)
    rep = ComparisonReport("stationarity")
    bound_rows = []
    for x in np.atleast_1d(x_grid):
        if method == "exact":
            if mech.c <= 0 or not mech.m.is_zero() or not imm.nu.is_zero():
                raise DomainError("exact method needs a CIR model")
            y = simulate_cir_exact(mech.c, mech.b, imm.beta, x, t_large, seed, n_paths=n_paths)
        else:
            cfg_t = PathConfig(cfg.dt, t_large, cfg.jump_cutoff_eps, cfg.small_jump_mode)
            y = simulate_cbi(mech, imm, x, cfg_t, seed, n_paths=n_paths, workers=workers).terminal
        emp = empirical_laplace(y, lam_grid)
        for L, a, e, s in zip(lam_grid, stat, emp.estimates, emp.std_errs):
            rep.add("stationary_laplace", f"x={x:g},lambda={L:g}", a, e, s)
        bound = laws.ergodicity_bound(mech, imm, float(x), r, t_large)
        gap = float(np.max(np.abs(emp.estimates - stat)))
        bound_rows.append((x, bound, gap))
    for x, bound, gap in bound_rows:
        rep.add("laplace_gap<=bound", f"x={x:g},r={r:g}", bound, gap, 0.0, kind="upper")
        rep.notes[f"gap_x={x:g}"] = gap
    return rep.score()


def difference_mean_check(mech, x, y, t, n_paths, cfg, seed, workers=1) -> ComparisonReport:
    cfg_t = PathConfig(cfg.dt, t, cfg.jump_cutoff_eps, cfg.small_jump_mode)
    ce = simulate_coupled_pair(mech, None, x, y, cfg_t, seed, n_paths=n_paths, workers=workers)
    m, se = mean_and_se(ce.upper_terminal - ce.lower.terminal)
    rep = ComparisonReport("difference_mean")
    rep.add("E(upper-lower)", f"t={t:g}", laws.mean_Q(LawQuery(mech, x=y - x, t=t)), m, se)
    return rep.score()
