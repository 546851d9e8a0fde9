"""EP for image restoration with a gradient (TV-type) prior.

One iteration refits the likelihood site, then the four gradient sites in a
seeded random order. The global approximation is the product of the five
diagonal Gaussian sites.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .edges import EdgePartition, build_partition
from .gaussian import DEFAULT_VARIANCE_CAP, DiagGaussian, NaturalSite, cavity, product
from .likelihood import VarianceStrategy, check_strategy, select_strategy, tilted_moments, update_likelihood_site
from .operators import ForwardOp
from .prior_sites import (GradientMarginals, edge_tilted_moments, project_to_pixels, skipped_pixels,
                          update_prior_site)
from .priors import PriorSpec

ORDER_STREAM = 0


class EPDivergenceError(FloatingPointError):
    def __init__(self, message: str, iteration: int, diagnostics: list):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class EPConfig:
    """Run settings.

    ``mean_change_tol=None`` runs exactly ``max_iterations`` sweeps.
    ``strategy`` is a variance strategy instance, a name understood by
    :func:`select_strategy`, or ``None`` for the default for the operator.
    ``damp_likelihood=False`` replaces the likelihood site undamped; the
    gradient sites are always damped with ``eta``.
    """

    eta: float = 0.9
    damp_likelihood: bool = True
    max_iterations: int = 20
    mean_change_tol: float | None = 1e-4
    variance_cap: float = DEFAULT_VARIANCE_CAP
    cg_tol: float = 1e-6
    cg_max_iter: int = 500
    strategy: VarianceStrategy | str | None = None
    rbmc_samples: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.mean_change_tol is not None and not self.mean_change_tol > 0:
            raise ValueError("mean_change_tol must be positive or None")
        if not self.variance_cap > 0:
            raise ValueError("variance_cap must be positive")

    def resolve_strategy(self, op: ForwardOp) -> VarianceStrategy:
        if self.strategy is None or isinstance(self.strategy, str):
            return select_strategy(op, self.strategy, num_samples=self.rbmc_samples,
                                   cg_tol=self.cg_tol, cg_max_iter=self.cg_max_iter, seed=self.seed)
        check_strategy(op, self.strategy)
        return self.strategy


@dataclass
class SiteSet:
    """The likelihood site, four gradient sites and the stored ``Q(u_k)`` moments."""

    likelihood: NaturalSite
    gradient: list
    marginals: list = field(default_factory=lambda: [None] * 4)

    def all_sites(self):
        return [self.likelihood, *self.gradient]

    def copy(self) -> "SiteSet":
        return SiteSet(self.likelihood, list(self.gradient), list(self.marginals))


@dataclass
class EPResult:
    posterior_mean: np.ndarray
    posterior_variance: np.ndarray
    gradient_marginals: list
    iterations_run: int
    diagnostics: list
    sites: SiteSet
    converged: bool
    dims: tuple

    @property
    def mean_image(self) -> np.ndarray:
        return self.posterior_mean.reshape(self.dims)

    @property
    def variance_image(self) -> np.ndarray:
        return self.posterior_variance.reshape(self.dims)


def global_approx(sites) -> DiagGaussian:
    """Product of sites in moment form; every coordinate needs positive total precision."""
    if isinstance(sites, SiteSet):
        sites = sites.all_sites()
    total = product(sites)
    if np.any(total.precision <= 0):
        raise ValueError("global approximation has non-positive precision")
    return total.to_moments()


def initial_sites(y, op: ForwardOp, xi: float, cap_variance: float = DEFAULT_VARIANCE_CAP) -> SiteSet:
    """Data-driven likelihood site and nearly flat zero-mean gradient sites.

    For square operators the likelihood site is ``N(y, xi I)``. With fewer
    observations than pixels ``y`` is not an image, so the site is
    ``N(H^T y, cap I)`` and the first likelihood update brings in the data.
    """
    n = op.n_pixels
    y = np.asarray(y, dtype=float).ravel()
    if op.output_len == n:
        lik = NaturalSite.from_moments(y, np.full(n, xi))
    else:
        lik = NaturalSite.from_moments(op.adjoint(y), np.full(n, cap_variance))
    flat = NaturalSite(np.full(n, 1.0 / cap_variance), np.zeros(n))
    return SiteSet(lik, [flat] * 4)


def _order(seed: int, iteration: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ORDER_STREAM, iteration)))
    return rng.permutation(4) + 1


def run_ep(y, op: ForwardOp, xi: float, prior: PriorSpec, config: EPConfig = EPConfig(),
           sites: SiteSet | None = None, start_iteration: int = 0, callback=None,
           partition: EdgePartition | None = None) -> EPResult:
    """Run EP sweeps until the mean stabilises or ``max_iterations`` is reached.

    Parameters
    ----------
    y : array
        Observations, length ``op.output_len`` (images are flattened).
    sites : SiteSet, optional
        Warm start; the default is :func:`initial_sites`.
    start_iteration : int
        Global index of the first sweep. Seeds for the edge-set order and
        the Monte Carlo variances are keyed on it, so warm-started runs
        continue the random streams instead of repeating them.
    callback : callable, optional
        Called with each per-iteration diagnostic record.
    """
    if not xi > 0:
        raise ValueError("noise variance xi must be positive")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != op.output_len:
        raise ValueError(f"expected {op.output_len} observations, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations contain NaN or infinity")
    strategy = config.resolve_strategy(op)
    partition = partition or build_partition(*op.dims)
    cap = config.variance_cap
    sites = initial_sites(y, op, xi, cap) if sites is None else sites.copy()
    q = global_approx(sites)
    diagnostics = []
    converged = False
    it = start_iteration
    for sweep in range(config.max_iterations):
        it = start_iteration + sweep
        t0 = time.perf_counter()
        prev_mean = q.mean
        n_repaired = 0

        cav, invalid = cavity(q, sites.likelihood)
        if invalid.any():
            raise EPDivergenceError("likelihood cavity has non-positive precision", it, diagnostics)
        lm = tilted_moments(op, y, xi, cav, strategy, cg_tol=config.cg_tol, cg_max_iter=config.cg_max_iter,
                            x0=q.mean, stream=it)
        sites.likelihood, nb = update_likelihood_site(lm.mean, lm.variance, cav, sites.likelihood,
                                                      config.eta if config.damp_likelihood else 1.0, cap)
        n_repaired += nb
        q = _checked_global(sites, it, diagnostics)

        n_skipped = 0
        order = _order(config.seed, it)
        for k in order:
            cav, invalid = cavity(q, sites.gradient[k - 1])
            gm = edge_tilted_moments(prior, partition, k, cav, skip=invalid if invalid.any() else None)
            skip = skipped_pixels(partition, k, gm)
            n_skipped += int(np.isnan(gm.mean).sum())
            pm, pv, touched = project_to_pixels(cav, partition, k, gm)
            sites.gradient[k - 1], nb = update_prior_site(cav, sites.gradient[k - 1], pm, pv, touched,
                                                          config.eta, cap, skip=skip)
            n_repaired += nb
            sites.marginals[k - 1] = gm.filled_from(sites.marginals[k - 1])
            q = _checked_global(sites, it, diagnostics)

        span = float(np.ptp(q.mean)) or 1.0
        change = float(np.max(np.abs(q.mean - prev_mean))) / span
        record = {"iteration": it + 1, "mean_change": change, "n_repaired": n_repaired,
                  "n_skipped_edges": n_skipped, "cg_iterations": lm.cg_iterations,
                  "order": [int(k) for k in order], "seconds": time.perf_counter() - t0}
        diagnostics.append(record)
        if callback is not None:
            callback(record)
        if config.mean_change_tol is not None and change < config.mean_change_tol:
            converged = True
            break
    return EPResult(q.mean, q.variance, list(sites.marginals), len(diagnostics), diagnostics,
                    sites, converged, tuple(op.dims))


def _checked_global(sites: SiteSet, it: int, diagnostics: list) -> DiagGaussian:
    try:
        q = global_approx(sites)
    except ValueError as exc:
        raise EPDivergenceError(str(exc), it, diagnostics) from exc
    if not (np.all(np.isfinite(q.mean)) and np.all(np.isfinite(q.variance))):
        raise EPDivergenceError("non-finite global moments", it, diagnostics)
    return q


