"""EP-EM: maximum marginal likelihood estimate of the l1-TV weight ``lambda``.

Each EM iteration runs a few EP sweeps at the current ``lambda`` (warm
started from the previous sites) and then sets ``lambda = N / a0``, where
``a0`` approximates the posterior expectation of ``sum |x_i - x_j|``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels_py import folded_mean
from .edges import EdgePartition, build_partition
from .engine import EPConfig, EPResult, run_ep
from .gaussian import DiagGaussian
from .operators import ForwardOp
from .priors import L1TV

A0_OPTIONS = ("x", "u", "tilted")


class DegenerateGradientError(ValueError):
    pass


@dataclass(frozen=True)
class EMConfig:
    """EM settings.

    ``lambda_init=None`` picks ``1 / mean|gradient|`` of the observed image
    (or of ``H^T y`` when there are fewer observations than pixels).
    ``stabilization_tol=None`` always runs ``max_em_iterations``.
    ``warmup_ep_loops`` EP sweeps at ``lambda_init`` precede the first
    update; ``None`` means none when ``H`` is square and otherwise
    ``EPConfig.max_iterations`` (stopping early on the EP tolerance). With
    fewer observations than pixels EP starts from flat sites, and
    ``N / a0`` from the first few sweeps is roughly ``lambda / 2``, so
    without a warm-up the fast variant drives ``lambda`` towards zero.
    """

    lambda_init: float | None = None
    max_em_iterations: int = 20
    ep_loops_per_em: int = 1
    a0_option: str = "tilted"
    stabilization_tol: float | None = None
    warmup_ep_loops: int | None = None

    def __post_init__(self):
        if self.lambda_init is not None and not self.lambda_init > 0:
            raise ValueError("lambda_init must be positive")
        if self.a0_option not in A0_OPTIONS:
            raise ValueError(f"a0_option must be one of {A0_OPTIONS}")
        if self.max_em_iterations < 1 or self.ep_loops_per_em < 1:
            raise ValueError("iteration counts must be at least 1")
        if self.warmup_ep_loops is not None and self.warmup_ep_loops < 0:
            raise ValueError("warmup_ep_loops must be >= 0")


def a0_option_x(global_q: DiagGaussian, partition: EdgePartition) -> float:
    """``E_Q(x) sum |x_i - x_j|`` under the diagonal global approximation."""
    total = 0.0
    for k in range(1, 5):
        i, j = partition.edges(k)
        total += float(np.sum(folded_mean(global_q.mean[i] - global_q.mean[j],
                                          global_q.variance[i] + global_q.variance[j])))
    return total


def a0_option_u(gradient_marginals) -> float:
    """``E_Q(u) ||u||_1`` from the Gaussian gradient marginals."""
    return float(sum(np.sum(folded_mean(gm.mean, gm.variance)) for gm in gradient_marginals))


def a0_option_tilted(gradient_marginals) -> float:
    """Sum of ``E|u|`` under the tilted gradient densities."""
    return float(sum(np.sum(gm.abs_mean) for gm in gradient_marginals))


def initial_lambda(y, op: ForwardOp) -> float:
    img = np.asarray(y, dtype=float).ravel()
    if op.output_len != op.n_pixels:
        img = op.adjoint(img)
    grads = np.abs(build_partition(*op.dims).all_gradients(img))
    scale = float(np.mean(grads))
    if not scale > 0:
        raise DegenerateGradientError("observed image is constant; cannot pick an initial lambda")
    return 1.0 / scale


def estimate_a0(result: EPResult, partition: EdgePartition, option: str) -> float:
    if option == "x":
        return a0_option_x(DiagGaussian(result.posterior_mean, result.posterior_variance), partition)
    if option == "u":
        return a0_option_u(result.gradient_marginals)
    return a0_option_tilted(result.gradient_marginals)


def run_ep_em(y, op: ForwardOp, xi: float, config: EMConfig = EMConfig(),
              ep_config: EPConfig = EPConfig(), callback=None):
    """Alternate EP sweeps and ``lambda = N / a0`` updates.

    Returns ``(result, lambda_trace)``; ``lambda_trace[0]`` is the initial
    value and ``result`` is the EP state at the last ``lambda`` used, so
    the final trace entry is the estimate for the next (unrun) sweep.
    ``callback`` receives one record per EM iteration.
    """
    partition = build_partition(*op.dims)
    lam = config.lambda_init if config.lambda_init is not None else initial_lambda(y, op)
    trace = [lam]
    ep_cfg = replace(ep_config, max_iterations=config.ep_loops_per_em,
                     mean_change_tol=None if config.ep_loops_per_em == 1 else ep_config.mean_change_tol)
    sites = None
    start = 0
    result = None
    n = op.n_pixels
    warmup = config.warmup_ep_loops
    if warmup is None:
        warmup = 0 if op.output_len == n else ep_config.max_iterations
    if warmup > 0:
        result = run_ep(y, op, xi, L1TV(lam), replace(ep_config, max_iterations=warmup),
                        partition=partition)
        sites = result.sites
        start = result.iterations_run
    for t in range(config.max_em_iterations):
        result = run_ep(y, op, xi, L1TV(lam), ep_cfg, sites=sites, start_iteration=start,
                        partition=partition)
        sites = result.sites
        start += result.iterations_run
        a0 = estimate_a0(result, partition, config.a0_option)
        if not (np.isfinite(a0) and a0 > 0):
            raise DegenerateGradientError(f"degenerate gradient statistics (a0 = {a0})")
        new_lam = n / a0
        rel = abs(new_lam - lam) / lam
        trace.append(new_lam)
        if callback is not None:
            callback({"em_iteration": t + 1, "lambda": new_lam, "a0": a0, "relative_change": rel,
                      "ep_iterations": result.iterations_run})
        lam = new_lam
        if config.stabilization_tol is not None and rel < config.stabilization_tol:
            break
    return result, trace
