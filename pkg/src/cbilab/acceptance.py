"""The acceptance suite: fourteen numbered criteria with fixed parameters.

Each criterion returns a :class:`CriterionResult`.  Statistical criteria go
through :func:`cbilab.stats.with_rerun`, so a failing Monte Carlo check is
repeated once with an independent seed and a second failure is final.
"""
from __future__ import annotations

import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clusters, discrete, laws, stats
from .cumulant import closed_form_v, closed_form_vbar, solve_v, v_prime, vbar
from .laws import LawQuery
from .measures import FiniteAtoms
from .mechanisms import (ImmigrationMechanism, quadratic, single_atom, stable,
                         stable_driver)
from .pathsim import PathConfig, simulate_cir_exact, simulate_stable_cir

BASE_SEED = 20_240_601
VERIFY_BUDGET = 900.0


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    runtime: float
    budget: float | None = None
    reports: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.budget:g}s" if self.budget else ""
        return f"criterion {self.number:2d} {status}  {self.title}: {self.detail} [{self.runtime:.1f}s{budget}]"


def _timed(number, title, budget, fn) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail, reports = fn()
    dt = time.perf_counter() - t0
    if budget is not None and dt >= budget:
        ok = False
        detail += f"; runtime {dt:.1f}s over budget"
    return CriterionResult(number, title, bool(ok), detail, dt, budget, reports)


_base = [BASE_SEED]


def _seed(n: int) -> int:
    return _base[0] + 1000 * n


def _reports_detail(reports) -> tuple[bool, str]:
    ok = all(r.passed for r in reports)
    parts = [f"{r.name} max|z|={r.max_abs_z:.2f} (z*={r.adjusted_threshold:.2f}, tries={r.attempts})"
             for r in reports]
    return ok, "; ".join(parts)


ATOM_MECH = single_atom(0.5, 0.5, 1.0, 1.0)


# deterministic criteria ------------------------------------------------------------------

def criterion_1() -> CriterionResult:
    def run():
        t = np.linspace(0, 5, 26)
        lam = np.linspace(0, 5, 26)
        T, L = np.meshgrid(t, lam, indexing="ij")
        worst = 0.0
        for alpha in (0.5, 1.0):
            for b in (-1.0, 0.0, 1.0):
                mech = quadratic(b, 1.0) if alpha == 1 else stable(1.0, alpha, b)
                err = np.abs(solve_v(mech, L, T) - closed_form_v(1.0, alpha, b, T, L))
                worst = max(worst, float(err.max()))
        return worst <= 1e-8, f"max abs error {worst:.2e} (tol 1e-8)", []
    return _timed(1, "closed-form cumulant", 5.0, run)


def criterion_2() -> CriterionResult:
    def run():
        rng = np.random.default_rng(_seed(2))
        r = rng.uniform(0, 2.5, 1000)
        t = rng.uniform(0, 2.5, 1000)
        lam = rng.uniform(0, 5, 1000)
        mech = ATOM_MECH
        lhs = solve_v(mech, lam, r + t)
        rhs = solve_v(mech, solve_v(mech, lam, t), r)
        err = float(np.max(np.abs(lhs - rhs)))
        return err <= 1e-7, f"max abs error {err:.2e} over 1000 triples (tol 1e-7)", []
    return _timed(2, "semigroup law", 10.0, run)


def criterion_3() -> CriterionResult:
    def run():
        t = np.linspace(0.1, 3.0, 20)
        lam = np.linspace(0.1, 5.0, 20)
        T, L = np.meshgrid(t, lam, indexing="ij")
        mech = ATOM_MECH
        h = 1e-4 * np.maximum(1.0, L)
        fd = (solve_v(mech, L + h, T) - solve_v(mech, L - h, T)) / (2 * h)
        vp = v_prime(mech, L, T)
        rel = float(np.max(np.abs(vp - fd) / np.abs(vp)))
        return rel <= 1e-4, f"max relative error {rel:.2e} on 20x20 grid (tol 1e-4)", []
    return _timed(3, "derivative identity", None, run)


def criterion_4(n_paths: int = 100_000) -> CriterionResult:
    def run():
        t = np.linspace(0.1, 5.0, 50)
        worst = 0.0
        for b in (0.0, 1.0):
            err = np.abs(vbar(quadratic(b, 1.0), t) - closed_form_vbar(1.0, 1.0, b, t))
            worst = max(worst, float(err.max()))
        mech = quadratic(0.0, 1.0)
        fam = discrete.mechanism_to_offspring(mech, 500)

        def check(seed):
            res = discrete.simulate_gwi(fam, 1.0, 1.0, seed, np.arange(n_paths))
            p, se = stats.proportion_and_se(res.extinct)
            rep = stats.ComparisonReport("gw_extinction")
            rep.add("P(extinct by t)", "k=500,x=1,t=1",
                    laws.extinction_prob(LawQuery(mech, x=1.0, t=1.0)), p, se)
            return rep.score()
        rep = stats.with_rerun(check, _seed(4))
        ok_mc, mc = _reports_detail([rep])
        ok = worst <= 1e-8 and ok_mc
        return ok, f"vbar max error {worst:.2e} (tol 1e-8); {mc}", [rep]
    return _timed(4, "extinction function", None, run)


def criterion_5() -> CriterionResult:
    def run():
        cases = [
            (quadratic(0.5, 1.0), ImmigrationMechanism(1.0)),
            (ATOM_MECH, ImmigrationMechanism(0.5, FiniteAtoms(((0.5, 1.0),)))),
        ]
        grid = (0.5, 1.0, 2.0)
        worst = 0.0
        for mech, imm in cases:
            for x in grid:
                for t in grid:
                    for lam in grid:
                        worst = max(worst, laws.generator_residual(LawQuery(mech, imm, x, t), lam))
        return worst <= 1e-6, f"max residual {worst:.2e} over 54 points (tol 1e-6)", []
    return _timed(5, "generator identity", 30.0, run)


def criterion_6() -> CriterionResult:
    def run():
        mech = quadratic(0.0, 1.0)
        lam = np.array([0.5, 1.0, 2.0])
        exact = solve_v(mech, lam, 1.0)
        errs = []
        for k in (10, 100, 1000, 10_000):
            fam = discrete.mechanism_to_offspring(mech, k)
            errs.append(float(np.max(np.abs(discrete.vk_recursion(fam, 1.0, lam) - exact))))
        dec = all(a > b for a, b in zip(errs, errs[1:]))
        ok = dec and errs[-1] <= 5e-3
        return ok, "errors " + ", ".join(f"{e:.2e}" for e in errs) + " (strictly decreasing, final <= 5e-3)", []
    return _timed(6, "rescaling convergence", 10.0, run)


# Monte Carlo criteria ---------------------------------------------------------------------

LAM6 = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])


def criterion_7(n_paths: int = 1_000_000) -> CriterionResult:
    def run():
        lam = np.geomspace(0.05, 20.0, 12)
        rep = stats.with_rerun(
            lambda s: stats.compare_laplace(
                "cir_exact", simulate_cir_exact(1.0, 1.0, 1.0, 1.0, 1.0, s, n_paths=n_paths), lam,
                laws.laplace_P(LawQuery(quadratic(1.0, 1.0), ImmigrationMechanism(1.0), 1.0, 1.0), lam)),
            _seed(7))
        ok, d = _reports_detail([rep])
        return ok, d, [rep]
    return _timed(7, "exact CIR sampler", 30.0, run)


EULER_MECH = single_atom(0.5, 0.5, 0.5, 1.0)
EULER_IMM = ImmigrationMechanism(1.0, FiniteAtoms(((0.5, 1.0),)))


def criterion_8(n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    def run():
        cfg = PathConfig(dt=1e-3, horizon=1.0)
        rep = stats.with_rerun(
            lambda s: stats.sde_laplace_check(EULER_MECH, EULER_IMM, 1.0, LAM6, n_paths, cfg, s,
                                              workers=workers), _seed(8))
        ok, d = _reports_detail([rep])
        return ok, d, [rep]
    return _timed(8, "Euler SDE simulator", 300.0, run)


def criterion_9(n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    alpha, q, c, b, beta = 1.5, 1.0, 0.0, 1.0, 0.5
    imm = ImmigrationMechanism(beta)
    mech = stable_driver(alpha, q, c, b)

    def check(seed):
        cfg = PathConfig(dt=1e-3, horizon=1.0)
        ens = simulate_stable_cir(alpha, q, c, b, imm, 1.0, cfg, seed, n_paths=n_paths,
                                  workers=workers)
        lq = LawQuery(mech, imm, 1.0, 1.0)
        return stats.compare_laplace("stable_cir", ens.terminal, LAM6, laws.laplace_P(lq, LAM6),
                                     laws.mean_P(lq))

    def run():
        rep = stats.with_rerun(check, _seed(9))
        ok, d = _reports_detail([rep])
        return ok, d, [rep]
    return _timed(9, "stable-driven CIR", 300.0, run)


def criterion_10(n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    cfg = PathConfig(dt=1e-3, horizon=1.0)

    def excursion(seed):
        mech = quadratic(0.0, 1.0)
        y = clusters.sample_quadratic_excursion_marginal(1.0, 0.0, 2.0, 1.0, seed, n_samples=10 * n_paths)
        rep = stats.compare_laplace("excursion_marginal", y, LAM6,
                                    laws.laplace_Q(LawQuery(mech, x=2.0, t=1.0), LAM6))
        p, se = stats.proportion_and_se(y == 0)
        rep.add("P(X=0)", "z=2,t=1", laws.extinction_prob(LawQuery(mech, x=2.0, t=1.0)), p, se)
        return rep.score()

    def delta_cb(seed):
        mech = single_atom(0.0, 0.0, 1.0, 1.0)
        batch = clusters.sample_delta_finite_cb(mech, 1.0, 1.0, cfg, seed, n_samples=n_paths,
                                                workers=workers)
        return stats.compare_laplace("delta_finite_cb", batch.total, LAM6,
                                     laws.laplace_Q(LawQuery(mech, x=1.0, t=1.0), LAM6))

    def composite(seed):
        mech = single_atom(0.5, 0.0, 1.0, 1.0)
        imm = ImmigrationMechanism(1.0)
        batch = clusters.sample_delta_finite_cbi(mech, 1.0, 1.0, 1.0, cfg, seed,
                                                 n_samples=n_paths, workers=workers)
        return stats.compare_laplace("delta_finite_cbi", batch.total, LAM6,
                                     laws.laplace_P(LawQuery(mech, imm, 1.0, 1.0), LAM6))

    def run():
        reps = [stats.with_rerun(f, _seed(10) + i) for i, f in enumerate((excursion, delta_cb, composite))]
        ok, d = _reports_detail(reps)
        return ok, d, reps
    return _timed(10, "cluster reconstructions", None, run)


JUMP_MECH = single_atom(0.0, 1.0, 1.0, 1.0)
JUMP_IMM = ImmigrationMechanism(0.5, FiniteAtoms(((0.3, 0.5), (0.6, 0.5))))
R_GRID = (0.25, 0.5, 0.75, 1.25)


def criterion_11(n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    cfg = PathConfig(dt=1e-3, horizon=1.0)

    def run():
        cb = stats.with_rerun(lambda s: stats.max_jump_check(JUMP_MECH, 1.0, 1.0, R_GRID, n_paths,
                                                             cfg, s, workers=workers), _seed(11))
        cbi = stats.with_rerun(lambda s: stats.max_jump_check(JUMP_MECH, 1.0, 1.0, R_GRID, n_paths,
                                                              cfg, s, imm=JUMP_IMM, workers=workers),
                               _seed(11) + 1)
        ok, d = _reports_detail([cb, cbi])
        return ok, d, [cb, cbi]
    return _timed(11, "jump maxima", None, run)


def criterion_12(n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    cfg = PathConfig(dt=1e-3, horizon=1.0)
    cir = quadratic(4.0, 1.0)
    cir_imm = ImmigrationMechanism(2.0)
    t_large = 2.0

    def run():
        coal = stats.with_rerun(
            lambda s: stats.coalescence_check(quadratic(0.0, 1.0), None, 1.0, 2.0, (0.5, 1.0), 1e-4,
                                              n_paths, cfg, s, tol_sweep=(0.0, 1e-3, 1e-2),
                                              workers=workers), _seed(12))
        diff = stats.with_rerun(
            lambda s: stats.difference_mean_check(ATOM_MECH, 1.0, 2.0, 1.0, n_paths, cfg, s,
                                                  workers=workers), _seed(12) + 1)
        stat = stats.with_rerun(
            lambda s: stats.stationarity_check(cir, cir_imm, (0.0, 3.0), t_large, LAM6, n_paths, cfg, s,
                                               workers=workers), _seed(12) + 2)
        ok, d = _reports_detail([coal, diff, stat])
        ok = ok and np.exp(-cir.b * t_large) < 1e-3 and coal.notes.get("ordering_violations", 1) == 0
        return ok, d + f"; e^(-b t_large)={np.exp(-cir.b * t_large):.1e}", [coal, diff, stat]
    return _timed(12, "coupling and ergodicity", None, run)


def criterion_13(n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    cfg = PathConfig(dt=1e-3, horizon=1.0)

    def run():
        rep = stats.with_rerun(
            lambda s: stats.joint_functional_check(quadratic(0.0, 1.0), None, 1.0,
                                                   (0.0, 0.5, 1.0, 2.0), 1.0, n_paths, cfg, s,
                                                   workers=workers), _seed(13))
        ok, d = _reports_detail([rep])
        return ok, d, [rep]
    return _timed(13, "joint functional", None, run)


def _tests_dir() -> Path | None:
    here = Path(__file__).resolve()
    for parent in here.parents:
        cand = parent / "tests"
        if (cand / "test_properties.py").exists():
            return cand
    return None


def criterion_14(elapsed: float = 0.0) -> CriterionResult:
    """Runs the property test modules and checks the whole-suite wall time."""
    def run():
        tests = _tests_dir()
        if tests is None:
            return False, "property test modules not found", []
        files = sorted(str(p) for p in tests.glob("test_properties*.py"))
        proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
                              capture_output=True, text=True)
        summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
        return proc.returncode == 0, f"{len(files)} property modules: {summary}", []
    res = _timed(14, "property suites", None, run)
    total = elapsed + res.runtime
    res.detail += f"; verify wall time {total:.0f}s (budget {VERIFY_BUDGET:.0f}s)"
    if total > VERIFY_BUDGET:
        res.passed = False
    return res


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 15)}
MONTE_CARLO = {4, 7, 8, 9, 10, 11, 12, 13}


def run_all(workers: int = 1, only=None, echo=print, seed: int = BASE_SEED) -> list[CriterionResult]:
    _base[0] = int(seed)
    results = []
    elapsed = 0.0
    for i in range(1, 15):
        if only is not None and i not in only:
            continue
        if i == 14:
            res = criterion_14(elapsed)
        elif i in MONTE_CARLO and i != 4 and i != 7:
            res = CRITERIA[i](workers=workers)
        else:
            res = CRITERIA[i]()
        elapsed += res.runtime
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
