"""Command-line experiment harness.

    cbilab <experiment> [--config FILE] [--output-dir DIR] [--seed N] [--workers N]

Experiments: cumulant, laws, discrete, simulate, clusters, jumps, ergodicity,
verify.  Every run writes CSV artifacts plus ``manifest.json`` to the output
directory (``--output-dir``, else ``$CBILAB_OUTPUT_DIR``, else ``./cbilab-out``).
Command-line values take precedence over the configuration file.

Exit codes: 0 success, 1 failed comparison or verification, 2 usage error,
3 configuration error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, acceptance, clusters, cumulant, discrete, laws, pathsim, stats
from .errors import CBILabError, ConfigError, DomainError, NumericalError, PopulationOverflowError
from .laws import LawQuery
from .mechanisms import (BranchingMechanism, ImmigrationMechanism, load_config,
                         mechanisms_from_dict, stable_driver)

EXPERIMENTS = ("cumulant", "laws", "discrete", "simulate", "clusters", "jumps", "ergodicity",
               "verify")
ENV_OUTPUT = "CBILAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "cbilab-out"
TOP_KEYS = {"seed", "workers", "output_dir", "branching", "immigration", "x0", "grids", "path",
            "discrete", "simulate", "clusters", "jumps", "ergodicity", "verify"}
DEFAULT_VERIFY_CONFIG = {"seed": acceptance.BASE_SEED}


@dataclass
class ExperimentSpec:
    name: str
    config: dict
    seed: int
    output_dir: Path
    workers: int = 1
    mech: BranchingMechanism | None = None
    imm: ImmigrationMechanism | None = None
    artifacts: list = field(default_factory=list)


# configuration ------------------------------------------------------------------------------

def _section(cfg: dict, key: str) -> dict:
    sec = cfg.get(key, {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"field '{key}' must be a mapping")
    return sec


def _grid(cfg: dict, key: str, default):
    grids = _section(cfg, "grids")
    val = grids.get(key, default)
    if isinstance(val, dict):
        try:
            kind = val.get("kind", "linspace")
            fn = {"linspace": np.linspace, "geomspace": np.geomspace}[kind]
            return fn(float(val["start"]), float(val["stop"]), int(val["num"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"field 'grids.{key}': {exc}") from exc
    try:
        return np.asarray(val, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'grids.{key}' must be a list of numbers") from exc


def _path_config(cfg: dict, horizon: float | None = None) -> pathsim.PathConfig:
    p = dict(_section(cfg, "path"))
    p.pop("n_paths", None)
    if horizon is not None:
        p["horizon"] = horizon
    try:
        return pathsim.PathConfig(**p)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"field 'path': {exc}") from exc


def _n_paths(cfg: dict, default: int = 10_000) -> int:
    return int(_section(cfg, "path").get("n_paths", default))


def build_spec(name: str, config_path: str | None, output_dir: str | None, seed: int | None,
               workers: int | None) -> ExperimentSpec:
    if config_path is not None:
        cfg = load_config(config_path)
    elif name == "verify":
        cfg = dict(DEFAULT_VERIFY_CONFIG)
    else:
        raise ConfigError(f"experiment '{name}' needs --config")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration field(s) {sorted(unknown)}")
    if seed is not None:
        cfg["seed"] = seed
    if "seed" not in cfg or cfg["seed"] is None:
        raise ConfigError("missing required field 'seed'")
    try:
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("field 'seed' must be an integer") from exc
    if workers is not None:
        cfg["workers"] = workers
    n_workers = int(cfg.get("workers", 1))
    if n_workers < 1:
        raise ConfigError("field 'workers' must be at least 1")
    out = output_dir or cfg.get("output_dir") or os.environ.get(ENV_OUTPUT) or DEFAULT_OUTPUT
    mech = imm = None
    if name != "verify":
        try:
            mech, imm = mechanisms_from_dict(cfg)
        except DomainError as exc:
            raise ConfigError(f"field 'branching'/'immigration': {exc}") from exc
    return ExperimentSpec(name, cfg, cfg["seed"], Path(out), n_workers, mech, imm)


# artifacts -------------------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(spec: ExperimentSpec, name: str, header, rows) -> Path:
    path = spec.output_dir / name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    spec.artifacts.append(name)
    return path


def write_report(spec: ExperimentSpec, rep: stats.ComparisonReport, stem: str) -> None:
    rep.to_csv(spec.output_dir / f"{stem}.csv")
    (spec.output_dir / f"{stem}.txt").write_text(rep.to_text() + "\n")
    spec.artifacts += [f"{stem}.csv", f"{stem}.txt"]


def write_manifest(spec: ExperimentSpec, wall: float, status: int, extra: dict | None = None):
    manifest = {
        "experiment": spec.name,
        "seed": spec.seed,
        "workers": spec.workers,
        "config": spec.config,
        "versions": {"cbilab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__},
        "artifacts": spec.artifacts,
        "exit_status": status,
        "wall_time_s": round(wall, 3),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        manifest.update(extra)
    (spec.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_fmt) + "\n")


# experiments ------------------------------------------------------------------------------------

def run_cumulant(spec: ExperimentSpec) -> int:
    cfg = spec.config
    t = _grid(cfg, "t", np.linspace(0.0, 5.0, 11))
    lam = _grid(cfg, "lambda", np.linspace(0.0, 5.0, 11))
    sol = cumulant.tabulate(spec.mech, t, lam)
    sol.to_csv(spec.output_dir / "cumulant.csv")
    spec.artifacts.append("cumulant.csv")
    if spec.mech.grey().holds:
        tp = t[t > 0]
        write_csv(spec, "vbar.csv", ("t", "vbar"), zip(tp, np.atleast_1d(cumulant.vbar(spec.mech, tp))))
    return 0


def run_laws(spec: ExperimentSpec) -> int:
    cfg = spec.config
    x = float(cfg.get("x0", 1.0))
    t = _grid(cfg, "t", [0.5, 1.0, 2.0])
    lam = _grid(cfg, "lambda", np.linspace(0.0, 5.0, 11))
    rows, summary = [], []
    for ti in t:
        q = LawQuery(spec.mech, spec.imm, x, float(ti))
        P = laws.laplace_P(q, lam)
        Q = laws.laplace_Q(q, lam)
        rows += [(ti, L, p, qq) for L, p, qq in zip(lam, P, Q)]
        ext = laws.extinction_prob(q) if spec.mech.grey().holds and ti > 0 else float("nan")
        summary.append((ti, laws.mean_Q(q), laws.mean_P(q), ext))
    write_csv(spec, "laws.csv", ("t", "lambda", "laplace_P", "laplace_Q"), rows)
    write_csv(spec, "moments.csv", ("t", "mean_Q", "mean_P", "extinction_prob"), summary)
    if spec.mech.b > 0:
        write_csv(spec, "stationary.csv", ("lambda", "stationary_laplace"),
                  zip(lam, laws.stationary_laplace(spec.mech, spec.imm, lam)))
    return 0


def run_discrete(spec: ExperimentSpec) -> int:
    cfg = spec.config
    d = _section(cfg, "discrete")
    ks = [int(k) for k in d.get("k", [10, 100, 1000])]
    t = float(d.get("t", 1.0))
    lam = _grid(cfg, "lambda", [0.5, 1.0, 2.0])
    exact = cumulant.solve_v(spec.mech, lam, t)
    rows = []
    for k in ks:
        fam = discrete.mechanism_to_offspring(spec.mech, k)
        vk = discrete.vk_recursion(fam, t, lam)
        rows += [(k, t, L, a, e, abs(a - e)) for L, a, e in zip(lam, vk, exact)]
    write_csv(spec, "vk.csv", ("k", "t", "lambda", "v_k", "v", "abs_err"), rows)
    n = int(d.get("n_paths", 0))
    status = 0
    if n > 0:
        x = float(cfg.get("x0", 1.0))
        k = int(d.get("sim_k", ks[-1]))
        fam = discrete.mechanism_to_offspring(spec.mech, k, spec.imm if not spec.imm.is_zero else None)
        res = discrete.simulate_gwi(fam, x, t, spec.seed, np.arange(n))
        rep = stats.ComparisonReport("gw")
        lq = LawQuery(spec.mech, spec.imm, x, t)
        if spec.imm.is_zero and spec.mech.grey().holds:
            p, se = stats.proportion_and_se(res.extinct)
            rep.add("P(extinct by t)", f"k={k}", laws.extinction_prob(lq), p, se)
        stats.laplace_rows(rep, res.x, lam, laws.laplace_P(lq, lam), params=f"k={k},")
        write_report(spec, rep, "gw_report")
        status = 0 if rep.passed else 1
    return status


def _simulate_model(spec: ExperimentSpec, cfg_path: pathsim.PathConfig, n: int):
    sim = _section(spec.config, "simulate")
    model = sim.get("model", "cbi")
    x = float(spec.config.get("x0", 1.0))
    mech, imm = spec.mech, spec.imm
    if model == "cbi":
        ens = pathsim.simulate_cbi(mech, imm, x, cfg_path, spec.seed, n_paths=n, workers=spec.workers)
        return ens, ens.terminal, mech
    if model == "stable":
        alpha, q = float(sim["alpha"]), float(sim["q"])
        ens = pathsim.simulate_stable_cir(alpha, q, mech.c, mech.b, imm, x, cfg_path, spec.seed,
                                          n_paths=n, workers=spec.workers)
        return ens, ens.terminal, stable_driver(alpha, q, mech.c, mech.b)
    if model == "cir_exact":
        y = pathsim.simulate_cir_exact(mech.c, mech.b, imm.beta, x, cfg_path.horizon, spec.seed,
                                       n_paths=n)
        return None, y, mech
    raise ConfigError(f"field 'simulate.model': unknown model {model!r}")


def run_simulate(spec: ExperimentSpec) -> int:
    cfg = spec.config
    cfg_path = _path_config(cfg)
    n = _n_paths(cfg)
    lam = _grid(cfg, "lambda", [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    ens, y, mech = _simulate_model(spec, cfg_path, n)
    x = float(cfg.get("x0", 1.0))
    q = LawQuery(mech, spec.imm, x, cfg_path.horizon)
    rep = stats.compare_laplace("simulate", y, lam, laws.laplace_P(q, lam), laws.mean_P(q))
    emp = stats.empirical_laplace(y, lam)
    an = laws.laplace_P(q, lam)
    write_csv(spec, "summary.csv", ("lambda", "empirical_laplace", "std_err", "analytic", "z_score"),
              [(L, e, s, a, (e - a) / s if s > 0 else 0.0)
               for L, e, s, a in zip(lam, emp.estimates, emp.std_errs, an)])
    write_report(spec, rep, "report")
    dump = int(_section(cfg, "simulate").get("dump_paths", 0))
    if dump and ens is not None:
        ids = np.arange(min(dump, n))
        rec = pathsim.PathConfig(cfg_path.dt, cfg_path.horizon, cfg_path.jump_cutoff_eps,
                                 cfg_path.small_jump_mode, True, cfg_path.record_every or 1)
        model = _section(cfg, "simulate").get("model", "cbi")
        if model == "cbi":
            small = pathsim.simulate_cbi(spec.mech, spec.imm, x, rec, spec.seed, path_ids=ids)
            write_csv(spec, "paths.csv", ("path_id", "t", "y"),
                      ((pid, t, yv) for i, pid in enumerate(small.path_ids)
                       for t, yv in zip(small.times, small.states[i])))
            j = small.jumps
            write_csv(spec, "jumps.csv", ("path_id", "t", "size", "origin"),
                      ((r["path"], r["time"], r["size"], pathsim.ORIGINS[r["origin"]]) for r in j))
    return 0 if rep.passed else 1


def run_clusters(spec: ExperimentSpec) -> int:
    cfg = spec.config
    c = _section(cfg, "clusters")
    kind = c.get("kind", "delta")
    t = float(c.get("t", 1.0))
    n = int(c.get("n_samples", 10_000))
    x = float(cfg.get("x0", 1.0))
    lam = _grid(cfg, "lambda", [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    cfg_path = _path_config(cfg, horizon=t)
    mech, imm = spec.mech, spec.imm
    batch = None
    slack = None
    if kind == "excursion":
        y = clusters.sample_quadratic_excursion_marginal(mech.c, mech.b, x, t, spec.seed, n_samples=n)
        analytic = laws.laplace_Q(LawQuery(mech, x=x, t=t), lam)
    elif kind == "delta":
        batch = clusters.sample_delta_finite_cbi(mech, imm.beta, x, t, cfg_path, spec.seed,
                                                 n_samples=n, workers=spec.workers)
        y = batch.total
        analytic = laws.laplace_P(LawQuery(mech, imm, x, t), lam)
    elif kind == "immigration":
        rho = clusters.rate_from_dict(c.get("rate", {"kind": "constant", "rate": 1.0}))
        batch = clusters.sample_immigration_cluster(mech, imm.nu, rho, t, cfg_path, spec.seed,
                                                    n_samples=n, workers=spec.workers)
        y = batch.total
        analytic = laws.laplace_inhomogeneous(mech, ImmigrationMechanism(0.0, imm.nu), rho.density, t, lam)
    elif kind == "superposition":
        y0 = float(c.get("floor", 1e-3))
        res = clusters.sample_quadratic_cbi_superposition(mech.c, mech.b, imm.beta, t, y0, spec.seed,
                                                          n_samples=n)
        y = res.samples
        analytic = laws.laplace_P(LawQuery(mech, ImmigrationMechanism(imm.beta), 0.0, t), lam)
        slack = lam * res.bias_bound
    else:
        raise ConfigError(f"field 'clusters.kind': unknown kind {kind!r}")
    rep = stats.laplace_rows(stats.ComparisonReport(f"clusters_{kind}"), y, lam, analytic, slack=slack)
    write_report(spec, rep, "report")
    if batch is not None:
        batch.to_csv(spec.output_dir / "clusters.csv")
        spec.artifacts.append("clusters.csv")
    return 0 if rep.passed else 1


def run_jumps(spec: ExperimentSpec) -> int:
    cfg = spec.config
    j = _section(cfg, "jumps")
    r_grid = [float(r) for r in _grid(cfg, "r", [0.25, 0.5, 0.75, 1.25])]
    t = float(j.get("t", 1.0))
    x = float(cfg.get("x0", 1.0))
    cfg_path = _path_config(cfg)
    n = _n_paths(cfg)
    rep = stats.max_jump_check(spec.mech, x, t, r_grid, n, cfg_path, spec.seed,
                               imm=None if spec.imm.is_zero else spec.imm, workers=spec.workers)
    write_report(spec, rep, "max_jump")
    ok = rep.passed
    if "t_large" in j:
        g = stats.global_max_jump_check(spec.mech, x, r_grid, float(j["t_large"]), n, cfg_path,
                                        spec.seed, workers=spec.workers)
        write_report(spec, g, "global_max_jump")
        ok = ok and g.passed
    return 0 if ok else 1


def run_ergodicity(spec: ExperimentSpec) -> int:
    cfg = spec.config
    e = _section(cfg, "ergodicity")
    cfg_path = _path_config(cfg)
    n = _n_paths(cfg)
    ok = True
    if "coalescence" in e:
        c = e["coalescence"]
        rep = stats.coalescence_check(spec.mech, spec.imm, float(c["x"]), float(c["y"]),
                                      c.get("t", [1.0]), float(c.get("tol", 1e-4)), n, cfg_path,
                                      spec.seed, tol_sweep=c.get("tol_sweep"), workers=spec.workers)
        write_report(spec, rep, "coalescence")
        ok = ok and rep.passed
    if "stationarity" in e:
        s = e["stationarity"]
        lam = _grid(cfg, "lambda", [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
        rep = stats.stationarity_check(spec.mech, spec.imm, s.get("x", [0.0]), float(s["t_large"]),
                                       lam, n, cfg_path, spec.seed, r=float(s.get("r", 0.1)),
                                       method=s.get("method", "euler"), workers=spec.workers)
        write_report(spec, rep, "stationarity")
        ok = ok and rep.passed
    if not ({"coalescence", "stationarity"} & set(e)):
        raise ConfigError("field 'ergodicity' needs 'coalescence' and/or 'stationarity'")
    return 0 if ok else 1


def run_verify(spec: ExperimentSpec) -> int:
    v = _section(spec.config, "verify")
    only = set(v["only"]) if "only" in v else None
    results = acceptance.run_all(workers=spec.workers, only=only, seed=spec.seed,
                                 echo=lambda line: print(line, flush=True))
    write_csv(spec, "acceptance.csv", ("criterion", "title", "pass", "runtime_s", "detail"),
              [(r.number, r.title, int(r.passed), round(r.runtime, 1), r.detail) for r in results])
    for r in results:
        for rep in r.reports:
            write_report(spec, rep, f"criterion_{r.number:02d}_{rep.name}")
    spec.config["_acceptance"] = [r.line() for r in results]
    return 0 if all(r.passed for r in results) else 1


RUNNERS = {
    "cumulant": run_cumulant, "laws": run_laws, "discrete": run_discrete,
    "simulate": run_simulate, "clusters": run_clusters, "jumps": run_jumps,
    "ergodicity": run_ergodicity, "verify": run_verify,
}


def run(spec: ExperimentSpec) -> int:
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status = RUNNERS[spec.name](spec)
    rows = spec.config.pop("_acceptance", None)
    write_manifest(spec, time.perf_counter() - t0, status,
                   {"acceptance": rows} if rows is not None else None)
    return status


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbilab", description="CB/CBI process experiments")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("-c", "--config", help="YAML or JSON configuration file")
    p.add_argument("-o", "--output-dir", help=f"output directory (default ${ENV_OUTPUT} or ./{DEFAULT_OUTPUT})")
    p.add_argument("-s", "--seed", type=int, help="override the configured seed")
    p.add_argument("-w", "--workers", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = build_spec(args.experiment, args.config, args.output_dir, args.seed, args.workers)
        return run(spec)
    except ConfigError as exc:
        print(f"cbilab: configuration error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, PopulationOverflowError) as exc:
        print(f"cbilab: numerical failure in {_origin(exc)}: {exc}", file=sys.stderr)
        return 4
    except CBILabError as exc:
        print(f"cbilab: {type(exc).__name__} in {_origin(exc)}: {exc}", file=sys.stderr)
        return 4


def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    mod = "cbilab"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("cbilab."):
            mod = name
        tb = tb.tb_next
    return mod


if __name__ == "__main__":
    sys.exit(main())
