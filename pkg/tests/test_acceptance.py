"""Acceptance criteria A1-A10.

Each test records its outcome with the ``acceptance`` fixture and then
asserts on it; the pytest terminal summary prints one PASS/FAIL line per
criterion. The reproduction runs are marked ``slow`` (deselect them with
``-m "not slow"``).

Regression fixtures (A2, A7) are written by the first run and compared
against afterwards; delete the file to re-freeze.
"""
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from eptv import (BG, L1TV, Conv2D, EMConfig, EPConfig, GaussianIID, Identity, MoG2,
                  build_hadamard, compute_metrics, run_ep, run_ep_em)
from eptv.oracles import export_fixture, grid_mmse, load_fixture, quad_tilted_moments
from eptv.priors import tilted_moments

from conftest import needs_skimage

FIXTURES = Path(__file__).parent / "fixtures"

TABLE_PRIORS = {
    "l1tv": L1TV(0.0320),
    "mog2": MoG2.from_formula(0.20, 11, 3400),
    "bg": BG(0.85, 2800),
}


def _frozen(path, header, columns, rows, key_cols):
    """Freeze ``rows`` on the first run; afterwards return the stored rows keyed by ``key_cols``."""
    if not path.exists():
        path.parent.mkdir(exist_ok=True)
        export_fixture(path, header, columns, rows)
    _, cols, stored = load_fixture(path)
    assert cols == columns, f"{path.name}: column mismatch, delete it to re-freeze"
    return {tuple(r[:key_cols]): [float(v) for v in r[key_cols:]] for r in stored}


# ---------------------------------------------------------------------------
# A1 tilted moments against quadrature

A1_M = np.sinh(np.linspace(-4.6, 4.6, 20)) * 0.5  # about +-50, dense near 0
A1_C = np.geomspace(1e-4, 1e4, 25)
A1_THETAS = {
    "l1tv": [L1TV(lam) for lam in np.geomspace(1e-3, 10, 10)],
    "mog2": [MoG2(w, s1, s2) for w, s1, s2 in zip(np.linspace(0.05, 0.95, 10),
                                                  np.geomspace(10, 5000, 10),
                                                  np.geomspace(0.01, 20, 10))],
    "bg": [BG(w, s) for w, s in zip(np.linspace(0.05, 0.95, 10), np.geomspace(0.1, 5000, 10))],
}


def test_a1_tilted_moments(acceptance):
    mm, cc = (a.ravel() for a in np.meshgrid(A1_M, A1_C, indexing="ij"))
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for thetas in A1_THETAS.values():
        for prior in thetas:
            got = tilted_moments(prior, mm, cc)
            for i in range(mm.size):
                ref = quad_tilted_moments(prior, mm[i], cc[i])
                count += 1
                for field in ("mean", "variance", "abs_mean"):
                    r = getattr(ref, field)
                    err = abs(getattr(got, field)[i] - r) / max(1e-8 * abs(r), 1e-12)
                    worst = max(worst, err)
    seconds = time.perf_counter() - t0
    ok = worst <= 1.0 and seconds < 60
    acceptance("A1", ok, f"{count} points, worst error {worst:.2g} x tolerance, {seconds:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# A2 EP against the exact grid oracle

A2_TRUTH = {(1, 2): np.array([100.0, 140.0]), (2, 2): np.array([100.0, 140.0, 90.0, 150.0])}
A2_XIS = (1.0, 10.0, 100.0, 400.0, 1000.0)


def test_a2_exact_oracle(acceptance):
    t0 = time.perf_counter()
    rows = []
    for dims, x in A2_TRUTH.items():
        for name, prior in TABLE_PRIORS.items():
            for k, xi in enumerate(A2_XIS):
                y = x + np.sqrt(xi) * np.random.default_rng(k).standard_normal(x.size)
                res = run_ep(y, Identity(dims), xi, prior, EPConfig(max_iterations=200, mean_change_tol=1e-10))
                mean, var = grid_mmse(y, None, xi, prior, dims)
                err = np.linalg.norm(res.posterior_mean - mean) / np.linalg.norm(mean)
                sd = np.sqrt(res.posterior_variance / var)
                rows.append((f"{dims[0]}x{dims[1]}", name, repr(xi), float(err), float(sd.min()), float(sd.max())))
    seconds = time.perf_counter() - t0
    frozen = _frozen(FIXTURES / "a2_ep_vs_grid.txt",
                     {"instances": "1x2 and 2x2 denoising, seeds 0-4", "ep": "200 sweeps, tol 1e-10",
                      "grid": "400 points per axis"},
                     ["dims", "prior", "xi", "mean_rel_l2", "sd_ratio_min", "sd_ratio_max"], rows, 3)
    worst_mean = max(r[3] for r in rows)
    sd_lo, sd_hi = min(r[4] for r in rows), max(r[5] for r in rows)
    within = worst_mean <= 0.10 and sd_lo >= 0.5 and sd_hi <= 2.0
    drift = max(abs(v - w) / (1e-8 + 1e-4 * abs(w))
                for r in rows for v, w in zip(r[3:], frozen[tuple(r[:3])]))
    ok = within and drift <= 1.0 and seconds < 300
    acceptance("A2", ok, f"{len(rows)} instances, mean error <= {worst_mean:.3g}, sd ratio in "
                         f"[{sd_lo:.3f}, {sd_hi:.3f}], fixture drift {drift:.2g}, {seconds:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# A3-A5, A9 on Cameraman


def _cameraman_problem(xi, size=256, seed=1):
    from eptv.datasets import cameraman, observe

    x = cameraman(size)
    op = Identity(x.shape)
    return x, op, observe(x, op, xi, seed=seed)


A3_TARGETS = {"l1tv": 31.05, "mog2": 33.09, "bg": 32.81}


@pytest.mark.slow
@needs_skimage
@pytest.mark.parametrize("name", list(A3_TARGETS))
def test_a3_table_denoising(acceptance, name):
    x, op, y = _cameraman_problem(100.0)
    t0 = time.perf_counter()
    res = run_ep(y, op, 100.0, TABLE_PRIORS[name])
    seconds = time.perf_counter() - t0
    psnr = compute_metrics(x, res.posterior_mean).psnr
    ok = abs(psnr - A3_TARGETS[name]) <= 0.5 and seconds < 60
    acceptance("A3", ok, f"{name} {psnr:.2f} dB (target {A3_TARGETS[name]:.2f}), {seconds:.0f} s")
    assert ok


@pytest.mark.slow
@needs_skimage
def test_a4_ep_em(acceptance):
    x, op, y = _cameraman_problem(100.0)
    res, trace = run_ep_em(y, op, 100.0, EMConfig(max_em_iterations=20, ep_loops_per_em=1))
    lam = trace[-1]
    change = abs(trace[-1] - trace[-2]) / trace[-2]
    psnr = compute_metrics(x, res.posterior_mean).psnr
    parts = {"lambda": 0.025 <= lam <= 0.050, "psnr": abs(psnr - 30.77) <= 0.5, "stable": change < 1e-3}
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    acceptance("A4", ok, f"lambda {lam:.4f} (0.025-0.050), PSNR {psnr:.2f} dB (30.77 +- 0.5), "
                         f"last change {change:.1e}" + (f" [failed: {', '.join(failed)}]" if failed else ""))
    assert ok


@pytest.mark.slow
@needs_skimage
def test_a5_option_ordering(acceptance):
    x, op, y = _cameraman_problem(900.0)
    mse = {}
    for option in ("x", "u", "tilted"):
        res, _ = run_ep_em(y, op, 900.0, EMConfig(a0_option=option))
        mse[option] = compute_metrics(x, res.posterior_mean).mse
    ok = mse["tilted"] <= mse["x"] and mse["tilted"] <= mse["u"]
    acceptance("A5", ok, "MSE " + ", ".join(f"{k} {v:.1f}" for k, v in mse.items()))
    assert ok


@pytest.mark.slow
@needs_skimage
def test_a9_runtime(acceptance):
    x, op, y = _cameraman_problem(100.0, size=512)
    times = {}
    for name, prior in TABLE_PRIORS.items():
        t0 = time.perf_counter()
        run_ep(y, op, 100.0, prior)
        times[name] = time.perf_counter() - t0
    # same number of sweeps for plain EP and the fast EP-EM variant
    t0 = time.perf_counter()
    run_ep(y, op, 100.0, L1TV(0.032), EPConfig(max_iterations=20, mean_change_tol=None))
    t_ep = time.perf_counter() - t0
    t0 = time.perf_counter()
    run_ep_em(y, op, 100.0, EMConfig(lambda_init=0.032, max_em_iterations=20, ep_loops_per_em=1))
    t_em = time.perf_counter() - t0
    ok = max(times.values()) <= 60 and t_em <= 1.5 * t_ep
    acceptance("A9", ok, ", ".join(f"{k} {v:.1f} s" for k, v in times.items())
               + f"; 20 sweeps EP {t_ep:.1f} s vs EP-EM {t_em:.1f} s ({t_em / t_ep:.2f}x)")
    assert ok


# ---------------------------------------------------------------------------
# A6 likelihood-site strategies against dense oracles


def test_a6_likelihood_strategies(acceptance):
    from eptv.gaussian import DiagGaussian
    from eptv.likelihood import RBMC, Woodbury, tilted_mean, tilted_variances
    from eptv.operators import uniform_kernel
    from eptv.oracles import dense_reference_diag, dense_reference_solve

    rng = np.random.default_rng(7)
    cavity = DiagGaussian(rng.normal(0, 3, 64), np.exp(rng.normal(0, 1, 64)))
    # Woodbury: M = 32 Gaussian rows on 64 pixels
    op = GaussianIID((8, 8), 32, seed=3)
    ref = dense_reference_diag(op, 0.1, cavity)
    wood_err = float(np.max(np.abs(tilted_variances(op, 0.1, cavity, Woodbury()) - ref) / ref))
    # RBMC on an 8x8 circulant blur, 512 samples
    conv = Conv2D(uniform_kernel(3), (8, 8))
    ref = dense_reference_diag(conv, 0.5, cavity)
    est = tilted_variances(conv, 0.5, cavity, RBMC(num_samples=512, cg_tol=1e-10))
    frac = float(np.mean(np.abs(est - ref) / ref <= 0.05))
    # CG mean
    y = conv.apply(rng.normal(0, 1, 64)) + rng.normal(0, 0.7, 64)
    mean, _ = tilted_mean(conv, y, 0.5, cavity, cg_tol=1e-12)
    cg_err = float(np.max(np.abs(mean - dense_reference_solve(conv, y, 0.5, cavity))))
    ok = wood_err <= 1e-10 and frac >= 0.95 and cg_err <= 1e-8
    acceptance("A6", ok, f"Woodbury rel {wood_err:.1e}, RBMC within 5% on {100 * frac:.0f}%, CG {cg_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# A7 compressive sensing on Shepp-Logan


@pytest.mark.slow
@needs_skimage
@pytest.mark.parametrize("matrix", ["gaussian", "hadamard"])
def test_a7_compressive_sensing(acceptance, matrix):
    from eptv.datasets import observe, shepp_logan

    x = shepp_logan(128) / 255.0  # xi = 1e-4 refers to unit intensity
    m = int(round(0.3 * x.size))
    op = build_hadamard(x.shape, m, seed=0) if matrix == "hadamard" else GaussianIID(x.shape, m, seed=0)
    y = observe(x, op, 1e-4, seed=1)
    mse_bp = np.mean((op.adjoint(y) - x.ravel()) ** 2)
    res, trace = run_ep_em(y, op, 1e-4)
    ratio = float(np.mean((res.posterior_mean - x.ravel()) ** 2) / mse_bp)
    frozen = _frozen(FIXTURES / f"a7_cs_{matrix}.txt",
                     {"instance": "Shepp-Logan 128x128 on [0, 1], M/N 0.3, xi 1e-4, operator seed 0, noise seed 1",
                      "run": "default EMConfig and EPConfig"},
                     ["matrix", "mse_ratio", "lambda"], [(matrix, ratio, float(trace[-1]))], 1)
    ref_ratio, ref_lam = frozen[(matrix,)]
    same = abs(ratio - ref_ratio) <= 1e-6 * ref_ratio and abs(trace[-1] - ref_lam) <= 1e-6 * ref_lam
    ok = ratio <= 0.1 and same
    acceptance("A7", ok, f"{matrix} MSE/backprojection {ratio:.3f} (<= 0.1), lambda {trace[-1]:.3g}"
                         + ("" if same else f", differs from frozen {ref_ratio:.4g}"))
    assert ok


# ---------------------------------------------------------------------------
# A8 deconvolution


A8_GRID = np.geomspace(1e-3, 0.3, 10)


@pytest.mark.slow
@needs_skimage
@pytest.mark.parametrize("crop", ["camera", "astronaut", "chelsea"])
def test_a8_deconvolution(acceptance, crop):
    from eptv.datasets import deconv_crop, noise_variance_for_bsnr, observe
    from eptv.operators import uniform_kernel

    x = deconv_crop(crop)
    op = Conv2D(uniform_kernel(9), x.shape)
    notes, ok = [], True
    for bsnr in (15, 25, 35):
        xi = noise_variance_for_bsnr(op.apply(x.ravel()), bsnr)
        y = observe(x, op, xi, seed=1)
        res, trace = run_ep_em(y, op, xi)
        lam = trace[-2]  # the weight the returned restoration used
        psnr = compute_metrics(x, res.posterior_mean).psnr
        psnr_obs = compute_metrics(x, y).psnr
        # oracle: best PSNR over a coarse log grid, warm-started, fewer RBMC samples
        grid = [compute_metrics(x, run_ep(y, op, xi, L1TV(g), EPConfig(rbmc_samples=8),
                                          sites=res.sites).posterior_mean).psnr for g in A8_GRID]
        best = float(A8_GRID[int(np.argmax(grid))])
        good = psnr > psnr_obs and best / 3 <= lam <= best * 3
        ok &= good
        notes.append(f"{bsnr} dB {psnr_obs:.2f}->{psnr:.2f}, lambda {lam:.3g} vs grid {best:.3g}")
    acceptance("A8", ok, f"{crop}: " + ", ".join(notes))
    assert ok


# ---------------------------------------------------------------------------
# A10 determinism

_A10_SCRIPT = """
import hashlib, json, numpy as np
from eptv import Conv2D, EMConfig, EPConfig, GaussianIID, run_ep_em
from eptv.datasets import observe
from eptv.operators import uniform_kernel
rng = np.random.default_rng(5)
x = np.cumsum(np.cumsum(rng.normal(0, 1, (24, 24)), 0), 1)
out = {}
for name, op in [("conv", Conv2D(uniform_kernel(5), x.shape)), ("cs", GaussianIID(x.shape, 200, seed=2))]:
    y = observe(x, op, 0.5, seed=3)
    res, trace = run_ep_em(y, op, 0.5, EMConfig(max_em_iterations=4),
                           EPConfig(strategy="rbmc", rbmc_samples=16, seed=11))
    h = hashlib.sha256()
    for a in (res.posterior_mean, res.posterior_variance, np.asarray(trace)):
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    out[name] = h.hexdigest()
print(json.dumps(out))
"""


def _a10_run(threads: int) -> dict:
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = str(threads)
    proc = subprocess.run([sys.executable, "-c", _A10_SCRIPT], env=env, capture_output=True,
                          text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def test_a10_determinism(acceptance):
    runs = [_a10_run(1), _a10_run(1), _a10_run(4)]
    ok = runs[0] == runs[1] == runs[2]
    acceptance("A10", ok, "RBMC deconvolution and CS EP-EM: bit-identical over 2 runs and 1 vs 4 threads"
               if ok else f"hashes differ: {runs}")
    assert ok
