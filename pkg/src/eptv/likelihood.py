"""Update of the likelihood site ``q_{x,0}``.

The tilted density ``P_0(x) = N(y; Hx, xi I) Q^{\\0}(x)`` is Gaussian with
precision ``Q = H^T H / xi + diag(tau)``, ``tau = 1 / cavity variance``.
Its mean comes from a linear solve and its marginal variances from one of
three strategies:

* ``ExactDiagonal`` when ``H^T H`` is diagonal;
* ``Woodbury`` when ``H`` has few rows, through an ``M x M`` factorisation;
* ``RBMC``, a Rao-Blackwellised Monte Carlo estimate from exact
  perturbation samples, for everything else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import linalg
from scipy.linalg import blas, lapack

from .gaussian import DEFAULT_VARIANCE_CAP, DiagGaussian, NaturalSite, damp, repair_variances, site_from_tilted
from .operators import Conv2D, ForwardOp, GaussianIID, HadamardSubsampled

# substream tag for RBMC noise; the engine uses other tags for its own draws
RBMC_STREAM = 1


class CGConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"CG did not converge in {iterations} iterations "
                         f"(relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class StrategyError(ValueError):
    """Variance strategy incompatible with the forward operator."""


@dataclass(frozen=True)
class ExactDiagonal:
    name = "exact"


@dataclass(frozen=True)
class Woodbury:
    name = "woodbury"


@dataclass(frozen=True)
class RBMC:
    num_samples: int = 64
    cg_tol: float = 1e-6
    cg_max_iter: int = 500
    seed: int = 0

    name = "rbmc"

    def __post_init__(self):
        if self.num_samples < 2:
            raise ValueError("RBMC needs at least two samples")
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")


VarianceStrategy = ExactDiagonal | Woodbury | RBMC


def select_strategy(op: ForwardOp, override: str | None = None, **rbmc) -> VarianceStrategy:
    """Default strategy for ``op``, or the named ``override`` after a compatibility check."""
    n, m = op.n_pixels, op.output_len
    if override is None:
        if op.gram_diagonal() is not None:
            strategy = ExactDiagonal()
        elif isinstance(op, (GaussianIID, HadamardSubsampled)) and 2 * m <= n:
            strategy = Woodbury()
        else:
            strategy = RBMC(**rbmc)
    else:
        strategy = {"exact": ExactDiagonal, "woodbury": Woodbury}.get(override)
        if override == "rbmc":
            strategy = RBMC(**rbmc)
        elif strategy is None:
            raise StrategyError(f"unknown variance strategy {override!r}")
        else:
            strategy = strategy()
    check_strategy(op, strategy)
    return strategy


def check_strategy(op: ForwardOp, strategy: VarianceStrategy) -> None:
    if isinstance(strategy, ExactDiagonal) and op.gram_diagonal() is None:
        raise StrategyError(f"exact diagonal strategy needs a diagonal H^T H, got {op!r}")
    if isinstance(strategy, Woodbury):
        if not isinstance(op, (GaussianIID, HadamardSubsampled)):
            raise StrategyError(f"Woodbury strategy needs a dense or Hadamard sensing operator, got {op!r}")
        if op.output_len >= op.n_pixels:
            raise StrategyError("Woodbury strategy needs fewer observations than pixels")


# ---------------------------------------------------------------------------
# conjugate gradients

def _precision_op(op: ForwardOp, xi: float, tau: np.ndarray):
    def apply(x):
        return op.normal(x) / xi + tau * x
    return apply


def _preconditioner(op: ForwardOp, xi: float, tau: np.ndarray):
    if isinstance(op, Conv2D):
        # circulant approximation with the cavity precision replaced by its mean
        spectrum = op.transfer_sq / xi + float(np.mean(tau))
        dims = op.dims

        def apply(r):
            lead = r.shape[:-1]
            img = r.reshape(lead + dims)
            out = sfft.irfft2(sfft.rfft2(img) / spectrum, s=dims)
            return out.reshape(r.shape)
        return apply
    inv_diag = 1.0 / (op.normal_diagonal() / xi + tau)
    return lambda r: inv_diag * r


def pcg(apply_a, b, x0=None, precond=None, tol: float = 1e-6, max_iter: int = 500, callback=None):
    """Preconditioned CG on one system or a batch of systems (rows of ``b``).

    Each row stops updating once its relative residual falls below ``tol``,
    so a row's answer does not depend on which other rows share the batch.
    ``callback``, if given, sees the iterate after every step.
    Returns ``(x, iterations)``; raises :class:`CGConvergenceError` on failure.
    """
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    b2 = b[None, :] if single else b
    x = np.zeros_like(b2) if x0 is None else np.array(np.broadcast_to(x0, b2.shape), dtype=float)
    precond = precond or (lambda r: r)
    bnorm = np.linalg.norm(b2, axis=1)
    bnorm[bnorm == 0] = 1.0
    r = b2 - apply_a(x)
    z = precond(r)
    p = z.copy()
    rz = np.einsum("ij,ij->i", r, z)
    active = np.linalg.norm(r, axis=1) / bnorm > tol
    it = 0
    while active.any():
        if it >= max_iter:
            res = float(np.max(np.linalg.norm(r, axis=1) / bnorm))
            raise CGConvergenceError(res, it)
        idx = np.flatnonzero(active)
        pa = p[idx]
        ap = apply_a(pa)
        alpha = rz[idx] / np.einsum("ij,ij->i", pa, ap)
        x[idx] += alpha[:, None] * pa
        r[idx] -= alpha[:, None] * ap
        ra = r[idx]
        za = precond(ra)
        rz_new = np.einsum("ij,ij->i", ra, za)
        p[idx] = za + (rz_new / rz[idx])[:, None] * pa
        rz[idx] = rz_new
        active[idx] = np.linalg.norm(ra, axis=1) / bnorm[idx] > tol
        it += 1
        if callback is not None:
            callback(x[0] if single else x)
    return (x[0] if single else x), it


# ---------------------------------------------------------------------------
# Woodbury factorisations

class _WoodburyFactor:
    """``K = xi I + H diag(v) H^T`` factorised once per likelihood update."""

    def __init__(self, op, xi: float, var: np.ndarray, block: int = 2048):
        self.op = op
        self.var = var
        m = op.output_len
        if isinstance(op, HadamardSubsampled):
            spec = op.full_transform(var) / np.sqrt(op.n_pixels)
            k = spec[op.xor_index]
            k[np.diag_indices(m)] += xi
        else:
            hm = op.matrix
            k = np.zeros((m, m), order="F")
            for start in range(0, op.n_pixels, block):
                sl = slice(start, start + block)
                hs = hm[:, sl] * np.sqrt(var[sl])
                # K += hs hs^T; only the lower triangle is written
                k = blas.dsyrk(1.0, hs.T, beta=1.0, c=k, trans=1, lower=1, overwrite_c=1)
            k[np.diag_indices(m)] += xi
        chol, info = lapack.dpotrf(k, lower=1, clean=1, overwrite_a=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"Woodbury factorisation failed (info={info})")
        self.chol = chol

    def solve(self, r):
        return linalg.cho_solve((self.chol, True), r)

    def gram_quadratic_diag(self, block: int = 2048) -> np.ndarray:
        """``diag(H^T K^{-1} H)``."""
        op = self.op
        if isinstance(op, HadamardSubsampled):
            kinv, info = lapack.dpotri(self.chol, lower=1)
            if info != 0:
                raise np.linalg.LinAlgError(f"Woodbury inverse failed (info={info})")
            kinv = np.tril(kinv) + np.tril(kinv, -1).T
            # sum K^{-1}_{ab} over pairs with the same row_a XOR row_b
            g = np.bincount(op.xor_index.ravel(), weights=kinv.ravel(), minlength=op.n_pixels)
            return op.full_adjoint(g) / np.sqrt(op.n_pixels)
        hm = op.matrix
        out = np.empty(op.n_pixels)
        for start in range(0, op.n_pixels, block):
            sl = slice(start, start + block)
            b = linalg.solve_triangular(self.chol, hm[:, sl], lower=True, check_finite=False)
            out[sl] = np.einsum("ij,ij->j", b, b)
        return out


# ---------------------------------------------------------------------------

@dataclass
class LikelihoodMoments:
    mean: np.ndarray
    variance: np.ndarray
    cg_iterations: int = 0


def tilted_mean(op: ForwardOp, y, xi: float, cavity: DiagGaussian, cg_tol: float = 1e-6,
                cg_max_iter: int = 500, x0=None):
    """``E_{P_0}[x]`` by preconditioned CG, warm-started at ``x0``.

    Returns ``(mean, iterations)``.
    """
    _check_inputs(op, xi, cavity)
    y = np.asarray(y, dtype=float)
    tau = 1.0 / cavity.variance
    b = op.adjoint(y) / xi + tau * cavity.mean
    return pcg(_precision_op(op, xi, tau), b, x0=x0, precond=_preconditioner(op, xi, tau),
               tol=cg_tol, max_iter=cg_max_iter)


def _check_inputs(op, xi, cavity):
    if not xi > 0:
        raise ValueError("noise variance xi must be positive")
    if len(cavity) != op.n_pixels:
        raise ValueError("cavity length does not match the operator")
    if not np.all(cavity.variance > 0):
        raise ValueError("cavity variances must be positive")


def rbmc_variances(op: ForwardOp, xi: float, cavity: DiagGaussian, strategy: RBMC,
                   stream: int = 0) -> tuple[np.ndarray, int]:
    """Rao-Blackwellised Monte Carlo estimate of ``diag(Q^{-1})``.

    Each sample ``z = Q^{-1} (H^T e1 / sqrt(xi) + sqrt(tau) e2)`` is an
    exact draw from ``N(0, Q^{-1})``. Instead of the sample variance of
    ``z`` we average the variance of ``E[x_i | x_{-i}]``, which is
    ``((Qz)_i - Q_ii z_i) / Q_ii`` for a zero-mean draw, and add the exact
    conditional variance ``1 / Q_ii``.

    Sample ``s`` uses the seed substream ``(seed, RBMC_STREAM, stream, s)``.
    """
    tau = 1.0 / cavity.variance
    n, m = op.n_pixels, op.output_len
    eta = np.empty((strategy.num_samples, n))
    for s in range(strategy.num_samples):
        rng = np.random.default_rng(np.random.SeedSequence(strategy.seed, spawn_key=(RBMC_STREAM, stream, s)))
        e1 = rng.standard_normal(m)
        e2 = rng.standard_normal(n)
        eta[s] = op.adjoint(e1) / np.sqrt(xi) + np.sqrt(tau) * e2
    apply_q = _precision_op(op, xi, tau)
    z, iters = pcg(apply_q, eta, precond=_preconditioner(op, xi, tau),
                   tol=strategy.cg_tol, max_iter=strategy.cg_max_iter)
    q_diag = op.normal_diagonal() / xi + tau
    off = (apply_q(z) - q_diag * z) / q_diag
    return 1.0 / q_diag + np.mean(off * off, axis=0), iters


def tilted_variances(op: ForwardOp, xi: float, cavity: DiagGaussian, strategy: VarianceStrategy,
                     stream: int = 0) -> np.ndarray:
    """Marginal variances of ``P_0``; ``stream`` selects the RBMC substream."""
    return tilted_moments(op, None, xi, cavity, strategy, stream=stream, need_mean=False).variance


def tilted_moments(op: ForwardOp, y, xi: float, cavity: DiagGaussian, strategy: VarianceStrategy,
                   cg_tol: float = 1e-6, cg_max_iter: int = 500, x0=None, stream: int = 0,
                   need_mean: bool = True) -> LikelihoodMoments:
    """Mean and marginal variances of ``P_0`` with the given strategy.

    The Woodbury strategy also yields the mean exactly
    (``mu + v H^T K^{-1} (y - H mu)``); the other strategies use CG.
    """
    _check_inputs(op, xi, cavity)
    check_strategy(op, strategy)
    var_c = cavity.variance
    if isinstance(strategy, ExactDiagonal):
        prec = op.gram_diagonal() / xi + 1.0 / var_c
        variance = 1.0 / prec
        mean = None
        if need_mean:
            mean = variance * (op.adjoint(np.asarray(y, dtype=float)) / xi + cavity.mean / var_c)
        return LikelihoodMoments(mean, variance, 0)
    if isinstance(strategy, Woodbury):
        fac = _WoodburyFactor(op, xi, var_c)
        variance = var_c - var_c * var_c * fac.gram_quadratic_diag()
        mean = None
        if need_mean:
            resid = np.asarray(y, dtype=float) - op.apply(cavity.mean)
            mean = cavity.mean + var_c * op.adjoint(fac.solve(resid))
        return LikelihoodMoments(mean, variance, 0)
    variance, iters = rbmc_variances(op, xi, cavity, strategy, stream=stream)
    mean = None
    if need_mean:
        mean, it_mean = tilted_mean(op, y, xi, cavity, cg_tol, cg_max_iter, x0=x0)
        iters += it_mean
    return LikelihoodMoments(mean, variance, iters)


def update_likelihood_site(tilted_mean, tilted_vars, cavity: DiagGaussian, old_site: NaturalSite,
                           eta: float, cap_variance: float = DEFAULT_VARIANCE_CAP):
    """New ``q_{x,0}``: tilted minus cavity, negative variances capped, then damped.

    Returns ``(site, n_repaired)``.
    """
    proposed, n_bad = site_from_tilted(tilted_mean, tilted_vars, cavity, cap_variance)
    return repair_variances(damp(old_site, proposed, eta), cap_variance), n_bad
