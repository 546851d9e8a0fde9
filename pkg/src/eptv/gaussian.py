"""Diagonal Gaussian algebra in natural parameters.

Sites are stored as (precision, shift) pairs, where ``shift = precision * mean``.
Products, ratios and damping are then plain coordinate-wise additions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_VARIANCE_CAP = 1e8


def _as_vec(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float))


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite values in {name}")


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance, in moment form."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vec(self.mean))
        object.__setattr__(self, "variance", _as_vec(self.variance))
        if self.mean.shape != self.variance.shape:
            raise ValueError("mean and variance must have the same length")

    def __len__(self) -> int:
        return self.mean.size

    def to_natural(self) -> "NaturalSite":
        prec = 1.0 / self.variance
        return NaturalSite(prec, prec * self.mean)


@dataclass(frozen=True)
class NaturalSite:
    """Unnormalised Gaussian factor in natural parameters.

    The precision may be zero or negative (an improper site) but never
    NaN or infinite.
    """

    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "precision", _as_vec(self.precision))
        object.__setattr__(self, "shift", _as_vec(self.shift))
        if self.precision.shape != self.shift.shape:
            raise ValueError("precision and shift must have the same length")
        _check_finite("NaturalSite", self.precision, self.shift)

    def __len__(self) -> int:
        return self.precision.size

    @classmethod
    def flat(cls, n: int) -> "NaturalSite":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_moments(cls, mean, variance) -> "NaturalSite":
        return DiagGaussian(mean, variance).to_natural()

    def to_moments(self) -> DiagGaussian:
        """Moment form; requires strictly positive precision."""
        if np.any(self.precision <= 0):
            raise ValueError("site has non-positive precision; no moment form")
        return DiagGaussian(self.shift / self.precision, 1.0 / self.precision)


def _check_lengths(a, b) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")


def multiply(a: NaturalSite, b: NaturalSite) -> NaturalSite:
    _check_lengths(a, b)
    return NaturalSite(a.precision + b.precision, a.shift + b.shift)


def product(sites) -> NaturalSite:
    """Product of an iterable of sites (at least one)."""
    sites = list(sites)
    prec = np.zeros_like(sites[0].precision)
    shift = np.zeros_like(sites[0].shift)
    for s in sites:
        _check_lengths(sites[0], s)
        prec = prec + s.precision
        shift = shift + s.shift
    return NaturalSite(prec, shift)


def cavity(global_q: DiagGaussian, site: NaturalSite):
    """Divide ``site`` out of ``global_q``.

    Returns ``(cavity, invalid)`` where ``invalid`` flags coordinates whose
    cavity precision is not strictly positive. Those coordinates carry NaN
    in the returned moments and must be skipped by the caller.
    """
    _check_lengths(global_q, site)
    prec = 1.0 / global_q.variance - site.precision
    shift = global_q.mean / global_q.variance - site.shift
    invalid = ~(prec > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(invalid, np.nan, 1.0 / prec)
        mean = np.where(invalid, np.nan, shift / prec)
    return DiagGaussian(mean, var), invalid


def damp(old: NaturalSite, proposed: NaturalSite, eta: float) -> NaturalSite:
    """Convex blend ``eta * proposed + (1 - eta) * old``."""
    _check_lengths(old, proposed)
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if eta == 1.0:
        return proposed
    return NaturalSite(
        eta * proposed.precision + (1.0 - eta) * old.precision,
        eta * proposed.shift + (1.0 - eta) * old.shift,
    )


def repair_variances(site: NaturalSite, cap_variance: float = DEFAULT_VARIANCE_CAP) -> NaturalSite:
    """Replace non-positive precisions by ``1 / cap_variance``.

    Where the old precision was nonzero the site mean is kept; a flat
    coordinate gets a zero shift.
    """
    if cap_variance <= 0:
        raise ValueError("cap_variance must be positive")
    bad = site.precision <= 0
    if not bad.any():
        return site
    floor = 1.0 / cap_variance
    prec = site.precision.copy()
    shift = site.shift.copy()
    nonzero = bad & (prec != 0)
    with np.errstate(over="ignore"):
        mean = shift[nonzero] / prec[nonzero]
    # a near-zero precision can imply a mean beyond float range: treat it as flat
    shift[nonzero] = np.where(np.isfinite(mean), mean * floor, 0.0)
    shift[bad & ~nonzero] = 0.0
    prec[bad] = floor
    return NaturalSite(prec, shift)


def site_from_tilted(tilted_mean, tilted_var, cav: DiagGaussian,
                     cap_variance: float = DEFAULT_VARIANCE_CAP):
    """Site that moves ``cav`` onto the tilted moments.

    Coordinates where the implied site variance is negative get variance
    ``cap_variance``; their shift is then computed from the capped variance
    so that the tilted mean is still reproduced as closely as possible.
    Returns ``(site, n_repaired)``.
    """
    tilted_mean = _as_vec(tilted_mean)
    tilted_var = _as_vec(tilted_var)
    _check_finite("tilted moments", tilted_mean, tilted_var)
    cav_prec = 1.0 / cav.variance
    prec = 1.0 / tilted_var - cav_prec
    shift = tilted_mean / tilted_var - cav_prec * cav.mean
    bad = prec <= 0
    n_bad = int(bad.sum())
    if n_bad:
        floor = 1.0 / cap_variance
        prec[bad] = floor
        shift[bad] = floor * tilted_mean[bad] + cav_prec[bad] * (tilted_mean[bad] - cav.mean[bad])
    return NaturalSite(prec, shift), n_bad
