"""Embedded Dormand-Prince 5(4) integrator with PI step-size control.

Vectorised over independent components: the state is an array of shape
``(n_eq, K)`` and the error norm is the maximum over every entry, so all
components share one step sequence.  Callers with different horizons
rescale time to [0, 1] (see ``cumulant``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-11
    atol: float = 1e-13
    max_steps: int = 200_000
    h_init: float = 1e-3
    h_min: float = 1e-15
    safety: float = 0.9


@dataclass
class ODEStats:
    steps: int = 0
    rejected: int = 0
    evaluations: int = 0


def integrate(f, y0: np.ndarray, t1: float = 1.0, cfg: SolverConfig = SolverConfig(),
              norm_rows=None):
    """Integrate autonomous ``y' = f(y)`` from 0 to ``t1``.

    ``norm_rows`` selects the state rows used for step-size control (all by
    default).  Returns ``(y(t1), stats)``.
    """
    y = np.array(y0, dtype=float)
    rows = slice(None) if norm_rows is None else norm_rows
    stats = ODEStats()
    t = 0.0
    h = min(cfg.h_init, t1)
    k1 = f(y)
    stats.evaluations += 1
    err_prev = 1.0
    k = [None] * 7
    while t < t1:
        if stats.steps + stats.rejected >= cfg.max_steps:
            raise NumericalError("step budget exhausted", residual=err_prev,
                                 diagnostics={"t": t, "h": h, "steps": stats.steps})
        last = t + h >= t1
        if last:
            h = t1 - t
        k[0] = k1
        for i in range(1, 7):
            yi = y + h * sum(a * kj for a, kj in zip(_A[i], k[:i]) if a != 0.0)
            k[i] = f(yi)
        stats.evaluations += 6
        y_new = yi  # stage 7 is evaluated at the 5th order solution (FSAL)
        err_vec = h * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y[rows]), np.abs(y_new[rows]))
        ratio = np.abs(err_vec[rows]) / scale
        err = float(np.max(ratio)) if ratio.size else 0.0
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0:
            t = t1 if last else t + h
            y = y_new
            k1 = k[6]
            stats.steps += 1
            fac = cfg.safety * max(err, 1e-10) ** (-0.7 / 5) * err_prev ** (0.4 / 5)
            fac = min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            h = h * fac
        else:
            stats.rejected += 1
            fac = max(0.1, cfg.safety * err ** (-1 / 5))
            h = h * fac
            if h < cfg.h_min:
                raise NumericalError("step size underflow", residual=err,
                                     diagnostics={"t": t, "h": h})
    return y, stats
