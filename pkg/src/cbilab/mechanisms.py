"""Branching and immigration mechanisms.

A branching mechanism is

    phi(z) = b z + c z^2 + int (e^{-zu} - 1 + zu) m(du),

with c >= 0 and int (u ^ u^2) m(du) < inf.  An immigration mechanism is

    psi(z) = beta z + int (1 - e^{-zu}) nu(du),

with beta >= 0 and int (1 ^ u) nu(du) < inf.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import optimize

from .errors import ConfigError, DomainError
from .measures import (INF, Density, FiniteAtoms, LevyMeasure, StableDensity,
                       ZeroMeasure, measure_from_dict)


def _arr(z):
    return np.asarray(z, dtype=float)


def _out(z, val):
    return float(val) if np.ndim(z) == 0 else val


@dataclass(frozen=True)
class GreyResult:
    holds: bool
    witness: float | None = None


@dataclass(frozen=True)
class BranchingMechanism:
    b: float
    c: float = 0.0
    m: LevyMeasure = field(default_factory=ZeroMeasure)

    def __post_init__(self):
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "c", float(self.c))
        if not np.isfinite(self.b):
            raise DomainError("b must be finite")
        if not (self.c >= 0 and np.isfinite(self.c)):
            raise DomainError("c must be finite and non-negative")
        if not isinstance(self.m, LevyMeasure):
            raise DomainError("m must be a LevyMeasure")
        if not np.isfinite(self.m.int_u_wedge_u2()):
            raise DomainError("branching measure needs int (u ^ u^2) m(du) < inf")

    # evaluation --------------------------------------------------------
    def phi(self, z):
        zz = _arr(z)
        return _out(z, self.b * zz + self.c * zz * zz + self.m.phi_part(zz))

    def phi0(self, z):
        """phi(z) - b z."""
        zz = _arr(z)
        return _out(z, self.c * zz * zz + self.m.phi_part(zz))

    def phi_prime(self, z):
        zz = _arr(z)
        return _out(z, self.b + 2 * self.c * zz + self.m.phi_part_d1(zz))

    def phi_second(self, z):
        zz = _arr(z)
        return _out(z, 2 * self.c + self.m.phi_part_d2(zz))

    def phi_prime_inf(self) -> float:
        if self.c > 0:
            return INF
        return self.b + self.m.first_moment()

    # structure ---------------------------------------------------------
    @property
    def is_degenerate(self) -> bool:
        """phi identically zero."""
        return self.b == 0 and self.c == 0 and self.m.is_zero()

    def theta0(self) -> float:
        """inf{z > 0 : phi(z) >= 0}."""
        if self.b >= 0:
            return 0.0
        if self.phi_prime_inf() <= 0:
            return INF
        hi = 1.0
        while self.phi(hi) < 0:
            hi *= 2.0
            if hi > 1e300:
                return INF
        lo = hi / 2 if hi > 1 else 0.0
        return float(optimize.brentq(self.phi, max(lo, 1e-300), hi, xtol=1e-15, rtol=1e-15))

    def grey(self) -> GreyResult:
        if self._grey_growth():
            t0 = self.theta0()
            return GreyResult(True, float(t0 + 1.0))
        return GreyResult(False, None)

    def _grey_growth(self) -> bool:
        # phi grows super-linearly iff it has a quadratic part or an untruncated
        # stable part; finite first moment means linear growth, so 1/phi is not
        # integrable at infinity.
        if self.c > 0:
            return True
        m = self.m
        if isinstance(m, StableDensity):
            return m.lo == 0 and m.scale > 0
        if isinstance(m, Density):
            if np.isfinite(m.first_moment()):
                return False
            z = np.array([1e6, 1e8])
            slope = np.diff(np.log(self.phi(z))) / np.diff(np.log(z))
            return bool(slope[0] > 1.01)
        return False

    def phi_inverse(self, theta):
        """inf{z >= 0 : phi(z) > theta}, vectorised over theta >= 0."""
        th = np.atleast_1d(_arr(theta))
        if np.any(th < 0):
            raise DomainError("phi_inverse needs theta >= 0")
        t0 = self.theta0()
        out = np.empty_like(th)
        pinf = self.phi_prime_inf()
        for i, v in enumerate(th):
            if not np.isfinite(t0) or pinf <= 0:
                out[i] = INF
                continue
            if v == 0 and (self.b > 0 or (self.b == 0 and not self.is_degenerate)):
                out[i] = t0
                continue
            if self.is_degenerate:
                out[i] = INF
                continue
            lo = t0
            hi = max(2 * t0, 1.0)
            while self.phi(hi) <= v:
                lo, hi = hi, 2 * hi
                if hi > 1e300:
                    out[i] = INF
                    break
            else:
                f = lambda z: self.phi(z) - v
                out[i] = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=1e-15) if f(lo) < 0 else lo
        return out if np.ndim(theta) else float(out[0])

    def truncate(self, r: float) -> "BranchingMechanism":
        """phi_r: b_r = b + int_(r, inf) u m(du), measure restricted to (0, r]."""
        if not r > 0:
            raise DomainError("truncation level must be positive")
        tail = self.m.tail_first_moment(r)
        if not np.isfinite(tail):
            raise DomainError("truncation needs int_(r, inf) u m(du) < inf")
        return BranchingMechanism(self.b + tail, self.c, self.m.restrict(0.0, r))

    def tail_mass(self, r: float) -> float:
        return self.m.tail_mass(r)

    def to_dict(self) -> dict:
        return {"b": self.b, "c": self.c, "m": self.m.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchingMechanism":
        if not isinstance(d, dict) or "b" not in d:
            raise ConfigError("branching mechanism needs at least 'b'")
        unknown = set(d) - {"b", "c", "m"}
        if unknown:
            raise ConfigError(f"unknown branching keys {sorted(unknown)}")
        return cls(float(d["b"]), float(d.get("c", 0.0)), measure_from_dict(d.get("m")))


@dataclass(frozen=True)
class ImmigrationMechanism:
    beta: float = 0.0
    nu: LevyMeasure = field(default_factory=ZeroMeasure)
    require_first_moment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", float(self.beta))
        if not (self.beta >= 0 and np.isfinite(self.beta)):
            raise DomainError("beta must be finite and non-negative")
        if not np.isfinite(self.nu.int_1_wedge_u()):
            raise DomainError("immigration measure needs int (1 ^ u) nu(du) < inf")
        if self.require_first_moment and not np.isfinite(self.nu.first_moment()):
            raise DomainError("immigration measure needs a finite first moment")

    def psi(self, z):
        zz = _arr(z)
        return _out(z, self.beta * zz + self.nu.psi_part(zz))

    def psi_prime(self, z):
        zz = _arr(z)
        return _out(z, self.beta + self.nu.psi_part_d1(zz))

    def psi_prime0(self) -> float:
        return self.beta + self.nu.first_moment()

    @property
    def is_zero(self) -> bool:
        return self.beta == 0 and self.nu.is_zero()

    def truncate(self, r: float) -> "ImmigrationMechanism":
        return ImmigrationMechanism(self.beta, self.nu.restrict(0.0, r))

    def tail_mass(self, r: float) -> float:
        return self.nu.tail_mass(r)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "nu": self.nu.to_dict()}

    @classmethod
    def from_dict(cls, d: dict | None) -> "ImmigrationMechanism":
        if d is None:
            return cls()
        unknown = set(d) - {"beta", "nu"}
        if unknown:
            raise ConfigError(f"unknown immigration keys {sorted(unknown)}")
        return cls(float(d.get("beta", 0.0)), measure_from_dict(d.get("nu")))


NO_IMMIGRATION = ImmigrationMechanism()


# functional aliases ---------------------------------------------------

def phi_eval(mech: BranchingMechanism, z):
    return mech.phi(z)


def phi_prime(mech: BranchingMechanism, z):
    return mech.phi_prime(z)


def phi_prime_inf(mech: BranchingMechanism) -> float:
    return mech.phi_prime_inf()


def psi_eval(imm: ImmigrationMechanism, z):
    return imm.psi(z)


def psi_prime0(imm: ImmigrationMechanism) -> float:
    return imm.psi_prime0()


def grey_check(mech: BranchingMechanism) -> GreyResult:
    return mech.grey()


def theta0(mech: BranchingMechanism) -> float:
    return mech.theta0()


def phi_inverse(mech: BranchingMechanism, theta):
    return mech.phi_inverse(theta)


def truncate_branching(mech: BranchingMechanism, r: float) -> BranchingMechanism:
    return mech.truncate(r)


def truncate_immigration(imm: ImmigrationMechanism, r: float):
    return imm.truncate(r), imm.tail_mass(r)


def tail_mass(measure: LevyMeasure, r: float) -> float:
    return measure.tail_mass(r)


# common constructors ---------------------------------------------------

def quadratic(b: float, c: float) -> BranchingMechanism:
    return BranchingMechanism(b, c)


def stable(c: float, alpha: float, b: float = 0.0) -> BranchingMechanism:
    """phi(z) = b z + c z^{1+alpha}."""
    return BranchingMechanism(b, 0.0, StableDensity(alpha, c))


def stable_driver(alpha: float, q: float, c: float = 0.0, b: float = 0.0) -> BranchingMechanism:
    """Mechanism b z + c z^2 + q z^alpha, alpha in (1, 2), of the stable-driven equation."""
    if not 1 < alpha < 2:
        raise DomainError("driver index must lie in (1, 2)")
    if q < 0:
        raise DomainError("q must be non-negative")
    m = StableDensity(alpha - 1.0, q) if q > 0 else ZeroMeasure()
    return BranchingMechanism(b, c, m)


def single_atom(b: float, c: float, size: float, mass: float) -> BranchingMechanism:
    return BranchingMechanism(b, c, FiniteAtoms(((size, mass),)))


# serialisation -------------------------------------------------------------

def mechanisms_to_dict(mech: BranchingMechanism, imm: ImmigrationMechanism | None = None) -> dict:
    d = {"branching": mech.to_dict()}
    if imm is not None:
        d["immigration"] = imm.to_dict()
    return d


def mechanisms_from_dict(d: dict):
    if not isinstance(d, dict) or "branching" not in d:
        raise ConfigError("configuration needs a 'branching' section")
    mech = BranchingMechanism.from_dict(d["branching"])
    imm = ImmigrationMechanism.from_dict(d.get("immigration"))
    return mech, imm


def dump_config(d: dict, path: str | Path) -> None:
    path = Path(path)
    text = json.dumps(d, indent=2) if path.suffix == ".json" else yaml.safe_dump(d, sort_keys=False)
    path.write_text(text)


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        d = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse configuration {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"configuration {path} must be a mapping")
    return d
