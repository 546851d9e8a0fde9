"""Update of the gradient sites ``q_{x,k}`` and the marginals ``Q(u_k)``, k = 1..4.

For every edge ``(i, j)`` of ``V_k`` the 1-D tilted density of the gradient
``u = x_i - x_j`` is ``N(u; m_i - m_j, c_i + c_j) phi(u)``. Its moments are
projected back onto the two pixels; since no pixel appears twice in a set,
the edges are independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .edges import EdgePartition
from .gaussian import DEFAULT_VARIANCE_CAP, DiagGaussian, NaturalSite, damp, repair_variances, site_from_tilted
from .priors import PriorSpec, tilted_moments


@dataclass(frozen=True)
class GradientMarginals:
    """Moments of the tilted gradients of one edge set (NaN where skipped)."""

    mean: np.ndarray
    variance: np.ndarray
    abs_mean: np.ndarray

    def __len__(self) -> int:
        return self.mean.size

    def filled_from(self, previous: "GradientMarginals | None") -> "GradientMarginals":
        """Replace skipped (NaN) edges by the values in ``previous``."""
        miss = np.isnan(self.mean)
        if previous is None or not miss.any():
            return self
        pick = lambda new, old: np.where(miss, old, new)
        return GradientMarginals(pick(self.mean, previous.mean), pick(self.variance, previous.variance),
                                 pick(self.abs_mean, previous.abs_mean))


def edge_tilted_moments(prior: PriorSpec, partition: EdgePartition, k: int,
                        cavity: DiagGaussian, skip=None) -> GradientMarginals:
    """Tilted gradient moments for every edge of ``V_k``.

    ``skip`` is an optional per-pixel flag (invalid cavity); edges touching
    a flagged pixel get NaN moments.
    """
    i, j = partition.edges(k)
    m_d = cavity.mean[i] - cavity.mean[j]
    c_d = cavity.variance[i] + cavity.variance[j]
    ok = np.ones(i.size, dtype=bool) if skip is None else ~(skip[i] | skip[j])
    mean = np.full(i.size, np.nan)
    var = np.full(i.size, np.nan)
    absm = np.full(i.size, np.nan)
    if ok.any():
        tm = tilted_moments(prior, m_d[ok], c_d[ok])
        mean[ok], var[ok], absm[ok] = tm.mean, tm.variance, tm.abs_mean
    return GradientMarginals(mean, var, absm)


def project_to_pixels(cavity: DiagGaussian, partition: EdgePartition, k: int, gm: GradientMarginals):
    """Pixel marginals of the bivariate tilted densities of ``V_k``.

    Returns ``(mean, variance, touched)`` over all pixels; untouched and
    skipped pixels keep their cavity moments and are not ``touched``.
    The variance uses ``c_i c_j / c_d + S (c_i / c_d)^2``, which equals the
    textbook ``c_i + (S - c_d) c_i^2 / c_d^2`` without its cancellation.
    """
    i, j = partition.edges(k)
    if len(gm) != i.size:
        raise ValueError("gradient marginals do not match the edge set")
    ok = ~np.isnan(gm.mean)
    i, j = i[ok], j[ok]
    m_bar, s_bar = gm.mean[ok], gm.variance[ok]
    c_i, c_j = cavity.variance[i], cavity.variance[j]
    m_i, m_j = cavity.mean[i], cavity.mean[j]
    c_d = c_i + c_j
    gain = (m_bar - (m_i - m_j)) / c_d
    mean = cavity.mean.copy()
    var = cavity.variance.copy()
    mean[i] = m_i + gain * c_i
    mean[j] = m_j - gain * c_j
    base = c_i * c_j / c_d
    var[i] = base + s_bar * (c_i / c_d) ** 2
    var[j] = base + s_bar * (c_j / c_d) ** 2
    touched = np.zeros(cavity.mean.size, dtype=bool)
    touched[i] = True
    touched[j] = True
    return mean, var, touched


def update_prior_site(cavity: DiagGaussian, old_site: NaturalSite, proj_mean, proj_var, touched,
                      eta: float, cap_variance: float = DEFAULT_VARIANCE_CAP, skip=None):
    """New ``q_{x,k}`` from projected pixel moments.

    On touched pixels the proposal is tilted minus cavity; untouched pixels
    get a flat proposal, and skipped pixels keep their old site exactly.
    Returns ``(site, n_repaired)``.
    """
    n = len(old_site)
    prec = np.zeros(n)
    shift = np.zeros(n)
    idx = np.flatnonzero(touched)
    sub = DiagGaussian(cavity.mean[idx], cavity.variance[idx])
    proposed, n_bad = site_from_tilted(proj_mean[idx], proj_var[idx], sub, cap_variance)
    prec[idx] = proposed.precision
    shift[idx] = proposed.shift
    new = repair_variances(damp(old_site, NaturalSite(prec, shift), eta), cap_variance)
    if skip is not None and skip.any():
        prec, shift = new.precision.copy(), new.shift.copy()
        prec[skip] = old_site.precision[skip]
        shift[skip] = old_site.shift[skip]
        new = NaturalSite(prec, shift)
    return new, n_bad


def skipped_pixels(partition: EdgePartition, k: int, gm: GradientMarginals) -> np.ndarray:
    """Per-pixel flag for both endpoints of every skipped edge of ``V_k``."""
    i, j = partition.edges(k)
    bad = np.isnan(gm.mean)
    out = np.zeros(partition.n_pixels, dtype=bool)
    out[i[bad]] = True
    out[j[bad]] = True
    return out
