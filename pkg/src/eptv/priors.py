"""Gradient potentials and the moments of their 1-D tilted densities.

Three even potentials on an image gradient ``u``:

* ``L1TV(lam)``: ``exp(-lam |u|)``
* ``MoG2(omega, s1_sq, s2_sq)``: ``omega N(u;0,s1_sq) + (1-omega) N(u;0,s2_sq)``
* ``BG(omega, s_sq)``: ``omega N(u;0,s_sq) + (1-omega) delta(u)``

:func:`tilted_moments` returns mean, variance and ``E|u|`` of the
normalised product ``N(u; m_d, c_d) * phi(u)``. The arithmetic lives in a
compiled kernel when available (``BACKEND == "compiled"``) and in NumPy
otherwise; set ``EPTV_PURE_PYTHON=1`` to force the NumPy path.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py

if os.environ.get("EPTV_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _kernels_py

BACKEND = "python" if kernels is _kernels_py else "compiled"


@dataclass(frozen=True)
class L1TV:
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")

    name = "l1tv"

    def params(self) -> dict:
        return {"lambda": self.lam}


@dataclass(frozen=True)
class MoG2:
    """Two-Gaussian mixture; ``omega`` weights the wide component ``s1_sq``."""

    omega: float
    s1_sq: float
    s2_sq: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.omega, self.s1_sq, self.s2_sq))):
            raise ValueError("MoG2 hyperparameters must be finite")
        # omega == 1 is accepted: it is the pure-Gaussian limit used in tests
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if not self.s1_sq > self.s2_sq > 0:
            raise ValueError("MoG2 requires s1_sq > s2_sq > 0")

    name = "mog2"

    def params(self) -> dict:
        return {"omega": self.omega, "s1_sq": self.s1_sq, "s2_sq": self.s2_sq}

    @classmethod
    def from_formula(cls, omega: float, var_a: float, var_b: float) -> "MoG2":
        """``omega N(0, var_a) + (1 - omega) N(0, var_b)`` in either variance order.

        Published tuples such as ``(0.20, 11, 3400)`` list the weight of the
        first variance, which need not be the wider one.
        """
        if var_a > var_b:
            return cls(omega, var_a, var_b)
        return cls(1.0 - omega, var_b, var_a)


@dataclass(frozen=True)
class BG:
    omega: float
    s_sq: float

    def __post_init__(self):
        if not (math.isfinite(self.omega) and math.isfinite(self.s_sq)):
            raise ValueError("BG hyperparameters must be finite")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if not self.s_sq > 0:
            raise ValueError("s_sq must be positive")

    name = "bg"

    def params(self) -> dict:
        return {"omega": self.omega, "s_sq": self.s_sq}


PriorSpec = L1TV | MoG2 | BG


@dataclass(frozen=True)
class TiltedMoments:
    mean: np.ndarray | float
    variance: np.ndarray | float
    abs_mean: np.ndarray | float


def tilted_moments(prior: PriorSpec, m_d, c_d) -> TiltedMoments:
    """Moments of ``N(u; m_d, c_d) phi(u; theta)``; scalars or arrays."""
    scalar = np.ndim(m_d) == 0 and np.ndim(c_d) == 0
    m, c = np.broadcast_arrays(np.asarray(m_d, dtype=float), np.asarray(c_d, dtype=float))
    if np.any(~(c > 0)):
        raise ValueError("cavity variance c_d must be strictly positive")
    m = np.ascontiguousarray(m).reshape(-1)
    c = np.ascontiguousarray(c).reshape(-1)
    if isinstance(prior, L1TV):
        out = kernels.l1tv_moments(m, c, float(prior.lam))
    elif isinstance(prior, MoG2):
        out = kernels.mog2_moments(m, c, float(prior.omega), float(prior.s1_sq), float(prior.s2_sq))
    elif isinstance(prior, BG):
        out = kernels.bg_moments(m, c, float(prior.omega), float(prior.s_sq))
    else:
        raise TypeError(f"unknown prior {prior!r}")
    mean, var, absm = out
    if scalar:
        return TiltedMoments(float(mean[0]), float(var[0]), float(absm[0]))
    shape = np.broadcast_shapes(np.shape(m_d), np.shape(c_d))
    return TiltedMoments(mean.reshape(shape), var.reshape(shape), absm.reshape(shape))


def _log_normal0(u, var):
    return -0.5 * np.log(2 * np.pi * var) - 0.5 * u * u / var


def log_potential(prior: PriorSpec, u):
    """``log phi(u; theta)``; for BG only the continuous part is returned."""
    u = np.asarray(u, dtype=float)
    if isinstance(prior, L1TV):
        out = -prior.lam * np.abs(u)
    elif isinstance(prior, MoG2):
        a = np.log(prior.omega) + _log_normal0(u, prior.s1_sq)
        if prior.omega == 1.0:
            out = a
        else:
            out = np.logaddexp(a, np.log1p(-prior.omega) + _log_normal0(u, prior.s2_sq))
    elif isinstance(prior, BG):
        out = np.log(prior.omega) + _log_normal0(u, prior.s_sq)
    else:
        raise TypeError(f"unknown prior {prior!r}")
    return float(out) if out.ndim == 0 else out


def prior_from_name(name: str, **kw) -> PriorSpec:
    name = name.lower()
    if name == "l1tv":
        return L1TV(kw["lam"])
    if name == "mog2":
        return MoG2.from_formula(kw["omega"], kw["s1_sq"], kw["s2_sq"])
    if name == "bg":
        return BG(kw["omega"], kw["s_sq"])
    raise ValueError(f"unknown prior {name!r}")
