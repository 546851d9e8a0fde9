"""Brute-force reference computations.

Nothing here calls the production arithmetic: tilted moments come from
adaptive quadrature, small posteriors from tensor grids, and likelihood
moments from dense linear algebra on explicitly built matrices. Agreement
with the fast paths is therefore evidence rather than a tautology.
"""
from __future__ import annotations

import math
import warnings
from datetime import datetime, timezone

import numpy as np
from scipy import integrate

from .priors import BG, L1TV, MoG2, TiltedMoments

_OFFSETS = (-60.0, -25.0, -10.0, -4.0, -1.5, 0.0, 1.5, 4.0, 10.0, 25.0, 60.0)


def _log_norm(u, mean, var):
    return -0.5 * math.log(2 * math.pi * var) - 0.5 * (u - mean) ** 2 / var


def _continuous_part(prior, m, c):
    """Log-density terms of the continuous tilted part, anchor points and any atom at 0.

    The continuous density is ``sum_k exp(term_k(u))``; the terms are kept
    separate so that the integrand is a plain sum of exponentials.
    """
    s = math.sqrt(c)
    anchors = [(m, s)]
    log_atom = None
    log_cav = -0.5 * math.log(2 * math.pi * c)
    if isinstance(prior, L1TV):
        lam = prior.lam

        def term(u):
            return log_cav - 0.5 * (u - m) ** 2 / c - lam * abs(u)

        terms = [term]
        anchors += [(m - lam * c, s), (m + lam * c, s)]
        if lam > 0:
            anchors.append((0.0, min(s, 1.0 / lam)))
    elif isinstance(prior, (MoG2, BG)):
        if isinstance(prior, MoG2):
            comps = [(prior.omega, prior.s1_sq)]
            if prior.omega < 1.0:
                comps.append((1.0 - prior.omega, prior.s2_sq))
        else:
            comps = [(prior.omega, prior.s_sq)]
            if prior.omega < 1.0:
                log_atom = math.log1p(-prior.omega) + _log_norm(0.0, m, c)
        terms = []
        anchors = []
        for w, v in comps:
            # cavity times component: a quadratic in u around the product mean
            k = math.log(w) - 0.5 * math.log(2 * math.pi * v) + log_cav
            ctr, pvar = m * v / (c + v), c * v / (c + v)
            k -= 0.5 * m * m / (c + v)
            terms.append(lambda u, k=k, ctr=ctr, pvar=pvar: k - 0.5 * (u - ctr) ** 2 / pvar)
            anchors.append((ctr, math.sqrt(pvar)))
    else:
        raise TypeError(f"unknown prior {prior!r}")
    return terms, anchors, log_atom


def quad_tilted_moments(prior, m_d: float, c_d: float, epsrel: float = 1e-13) -> TiltedMoments:
    """Tilted moments by piecewise adaptive quadrature.

    The real line is cut at 0 and at a ladder of points around every
    component centre; the mean is integrated first and the variance is then
    integrated as a central moment.
    """
    m, c = float(m_d), float(c_d)
    terms, anchors, log_atom = _continuous_part(prior, m, c)
    pts = {0.0}
    for ctr, sc in anchors:
        pts.update(ctr + sc * o for o in _OFFSETS)
    pts = sorted(pts)
    shift = max(t(p) for p in pts for t in terms)
    if log_atom is not None:
        shift = max(shift, log_atom)
    exp = math.exp
    if len(terms) == 1:
        (t0,) = terms

        def f(u):
            return exp(t0(u) - shift)
    else:
        t0, t1 = terms

        def f(u):
            return exp(t0(u) - shift) + exp(t1(u) - shift)

    # Each mixture term is unimodal about one of the anchors, so on an interval
    # free of anchors it is bounded by its endpoint values: such intervals can
    # be dropped when the endpoint density is negligible.
    centres = [ctr for ctr, _ in anchors] + [0.0]
    fpts = [f(p) for p in pts]
    edges = [(-math.inf, pts[0], fpts[0])]
    edges += [(a, b, fa + fb) for a, b, fa, fb in zip(pts[:-1], pts[1:], fpts[:-1], fpts[1:])]
    edges.append((pts[-1], math.inf, fpts[-1]))
    intervals = [(a, b) for a, b, fe in edges
                 if fe > 1e-40 or any(a < ctr < b for ctr in centres)]

    def integrals(g):
        out = []
        with warnings.catch_warnings():
            # the requested tolerance sits near round-off on purpose
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            for a, b in intervals:
                out.append(integrate.quad(g, a, b, epsabs=0.0, epsrel=epsrel, limit=200)[0])
        return out

    atom = math.exp(log_atom - shift) if log_atom is not None else 0.0
    z = math.fsum(integrals(f)) + atom
    # 0 is a cut point, so |u| f integrates as -u f or u f interval by interval
    first = integrals(lambda u: u * f(u))
    mean = math.fsum(first) / z
    abs_mean = math.fsum(v if a >= 0 else -v for (a, _), v in zip(intervals, first)) / z
    var = (math.fsum(integrals(lambda u: (u - mean) ** 2 * f(u))) + atom * mean * mean) / z
    return TiltedMoments(mean, var, abs_mean)


# ---------------------------------------------------------------------------
# exact posteriors for images with at most four pixels

def _edge_potential_matrix(prior, grid: np.ndarray) -> np.ndarray:
    """``phi(t_a - t_b)`` on a uniform grid; a Dirac becomes ``1/h`` on the diagonal."""
    d = grid[:, None] - grid[None, :]
    h = grid[1] - grid[0]
    if isinstance(prior, L1TV):
        return np.exp(-prior.lam * np.abs(d))
    if isinstance(prior, MoG2):
        out = prior.omega * np.exp(-0.5 * d * d / prior.s1_sq) / math.sqrt(2 * math.pi * prior.s1_sq)
        if prior.omega < 1.0:
            out += (1 - prior.omega) * np.exp(-0.5 * d * d / prior.s2_sq) / math.sqrt(2 * math.pi * prior.s2_sq)
        return out
    if isinstance(prior, BG):
        out = prior.omega * np.exp(-0.5 * d * d / prior.s_sq) / math.sqrt(2 * math.pi * prior.s_sq)
        out += (1 - prior.omega) * np.eye(grid.size) / h
        return out
    raise TypeError(f"unknown prior {prior!r}")


def _image_edges(height: int, width: int):
    edges = []
    for r in range(height):
        for q in range(width):
            p = r * width + q
            if q + 1 < width:
                edges.append((p, p + 1))
            if r + 1 < height:
                edges.append((p, p + width))
    return edges


def grid_mmse(y, H, xi: float, prior, dims, n_grid: int = 400, half_width: float = 6.0,
              center=None, spread=None):
    """Exact posterior marginal means and variances on a tensor grid.

    Parameters
    ----------
    y : array_like
        Observations.
    H : array_like or None
        Dense forward matrix; ``None`` means identity (denoising).
    xi : float
        Noise variance.
    prior : PriorSpec
    dims : tuple
        ``(height, width)`` with at most four pixels.
    n_grid : int
        Points per axis (>= 200).
    half_width : float
        Grid half-width in units of ``spread`` around ``center``.
    center, spread : optional
        Coarse mode estimate (per pixel) and posterior scale. Default to the
        least-squares estimate and ``sqrt(xi / diag(H^T H))``.

    Returns
    -------
    means, variances : ndarray
    """
    height, width = dims
    n = height * width
    if n > 4:
        raise ValueError("grid oracle is limited to four pixels")
    if n_grid < 200:
        raise ValueError("use at least 200 grid points per axis")
    y = np.asarray(y, dtype=float).ravel()
    Hm = np.eye(n) if H is None else np.asarray(H, dtype=float).reshape(-1, n)
    if center is None:
        center = np.linalg.lstsq(Hm, y, rcond=None)[0]
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if spread is None:
        spread = float(np.max(np.sqrt(xi / np.sum(Hm * Hm, axis=0))))
    lo = center.min() - half_width * spread
    hi = center.max() + half_width * spread
    grid = np.linspace(lo, hi, n_grid)
    phi = _edge_potential_matrix(prior, grid)
    edges = _image_edges(height, width)

    if H is None:
        # the likelihood factorises over pixels, so each marginal is a grid sum
        # contracted along the edge graph instead of a table of G**n points
        unary = [np.exp(-0.5 * (grid - y[i]) ** 2 / xi) for i in range(n)]
        marginals = _contract(unary, phi, edges, n)
    else:
        marginals = _brute_force(grid, y, Hm, xi, phi, edges, n)
    means = np.empty(n)
    variances = np.empty(n)
    for i, marg in enumerate(marginals):
        marg = marg / marg.sum()
        means[i] = np.dot(marg, grid)
        variances[i] = np.dot(marg, (grid - means[i]) ** 2)
    return means, variances


def _contract(unary, phi, edges, n):
    letters = "abcd"[:n]
    subs = list(letters) + [letters[i] + letters[j] for i, j in edges]
    operands = list(unary) + [phi] * len(edges)
    return [np.einsum(",".join(subs) + "->" + letters[i], *operands, optimize="optimal")
            for i in range(n)]


def _brute_force(grid, y, Hm, xi, phi, edges, n, chunk=2_000_000):
    g = grid.size
    shape = (g,) * n
    total = g ** n
    logp = np.empty(total)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        coords = np.stack(np.unravel_index(idx, shape), axis=1)
        r = grid[coords] @ Hm.T - y
        block = -0.5 * np.sum(r * r, axis=1) / xi
        for i, j in edges:
            block += np.log(phi[coords[:, i], coords[:, j]])
        logp[start:start + idx.size] = block
    joint = np.exp(logp - logp.max()).reshape(shape)
    return [joint.sum(axis=tuple(a for a in range(n) if a != i)) for i in range(n)]


# ---------------------------------------------------------------------------
# dense references for the likelihood tilted moments

def dense_matrix(op) -> np.ndarray:
    """Explicit matrix of a forward operator, built from its definition."""
    from .operators import Conv2D, GaussianIID, HadamardSubsampled, Identity

    height, width = op.dims
    n = height * width
    if isinstance(op, Identity):
        return np.eye(n)
    if isinstance(op, Conv2D):
        k = op.kernel
        kh, kw = k.shape
        ch, cw = kh // 2, kw // 2
        mat = np.zeros((n, n))
        for r in range(height):
            for q in range(width):
                for a in range(kh):
                    for b in range(kw):
                        p = ((r - a + ch) % height) * width + (q - b + cw) % width
                        mat[r * width + q, p] += k[a, b]
        return mat
    if isinstance(op, GaussianIID):
        rows = [np.random.default_rng(np.random.SeedSequence(op.seed, spawn_key=(m,))).standard_normal(n)
                for m in range(op.output_len)]
        return np.array(rows) / math.sqrt(op.output_len)
    if isinstance(op, HadamardSubsampled):
        full = np.kron(paley_matrix(height), paley_matrix(width))
        return full[op.selected_rows]
    raise TypeError(f"no dense construction for {type(op).__name__}")


def paley_matrix(n: int) -> np.ndarray:
    """Orthonormal Paley-ordered Walsh matrix from Rademacher products."""
    p = int(round(math.log2(n)))
    if 2 ** p != n:
        raise ValueError("size must be a power of two")
    w = np.empty((n, n))
    for k in range(n):
        for t in range(n):
            e = sum(((k >> i) & 1) * ((t >> (p - 1 - i)) & 1) for i in range(p))
            w[k, t] = -1.0 if e % 2 else 1.0
    return w / math.sqrt(n)


def dense_posterior(H, y, xi, cavity_mean, cavity_var):
    """Mean and covariance of ``N(y; Hx, xi I) N(x; mu, diag(v))``."""
    H = np.asarray(H, dtype=float)
    prec = H.T @ H / xi + np.diag(1.0 / np.asarray(cavity_var))
    cov = np.linalg.inv(prec)
    rhs = H.T @ np.asarray(y) / xi + np.asarray(cavity_mean) / np.asarray(cavity_var)
    return np.linalg.solve(prec, rhs), cov


def dense_reference_solve(op, y, xi, cavity):
    return dense_posterior(dense_matrix(op), y, xi, cavity.mean, cavity.variance)[0]


def dense_reference_diag(op, xi, cavity):
    H = dense_matrix(op)
    return np.diag(dense_posterior(H, np.zeros(H.shape[0]), xi, cavity.mean, cavity.variance)[1]).copy()


# ---------------------------------------------------------------------------

def export_fixture(path, header: dict, columns: list[str], rows) -> None:
    """Write reference values as whitespace-separated text with a provenance header."""
    with open(path, "w") as fh:
        fh.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
        for key, val in header.items():
            fh.write(f"# {key}: {val}\n")
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def load_fixture(path):
    header, rows = {}, []
    with open(path) as fh:
        lines = fh.read().splitlines()
    comment = [ln[2:] for ln in lines if ln.startswith("# ")]
    for ln in comment[:-1]:
        if ": " in ln:
            k, v = ln.split(": ", 1)
            header[k] = v
    columns = comment[-1].split()
    for ln in lines:
        if ln and not ln.startswith("#"):
            rows.append(ln.split())
    return header, columns, rows
