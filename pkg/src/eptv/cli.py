"""Command-line driver.

Every subcommand writes into ``--output-dir``:

``restored.pgm`` / ``restored.pfm``
    posterior mean (PGM clipped to the intensity range; PFM exact float32)
``variance.pfm``
    posterior marginal variances (log10 with ``--log``)
``log.jsonl``
    one JSON record per EP iteration (or per EM iteration)
``summary.json``
    one JSON object with the settings, final lambda and metrics

Outputs are staged in a temporary directory and moved into place only after
the run succeeds, so a failed run leaves nothing behind.

A plain-text ``key=value`` file given with ``--config`` supplies defaults;
keys are flag names without the leading dashes. Command-line flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import noise_variance_for_bsnr, observe
from .em import EMConfig, run_ep_em
from .engine import EPConfig, run_ep
from .imageio import load_kernel, read_image, write_pfm, write_pgm
from .metrics import compute_metrics
from .operators import Conv2D, GaussianIID, Identity, build_hadamard
from .priors import BACKEND, prior_from_name

log = logging.getLogger("eptv")

SUMMARY_KEYS = ("command", "version", "backend", "input", "dims", "operator", "xi", "prior",
                "lambda", "lambda_trace", "iterations", "converged", "strategy", "seed",
                "metrics", "observation_metrics", "variance_scale", "outputs", "seconds")
COMMANDS = ("denoise", "deconvolve", "cs", "estimate-lambda")


class UsageError(Exception):
    pass


def _positive(text: str) -> float:
    val = float(text)
    if not (math.isfinite(val) and val > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return val


def _ratio(text: str) -> float:
    val = float(text)
    if not 0 < val < 1:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 1), got {text!r}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eptv", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"eptv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared options")
    g.add_argument("--config", help="key=value file of defaults (flags win)")
    g.add_argument("--input", required=True, help="input image (PGM or PFM)")
    g.add_argument("--truth", help="ground-truth image for MSE/PSNR")
    g.add_argument("--output-dir", required=True)
    g.add_argument("--xi", type=_positive, help="noise variance on the --scale intensity scale")
    g.add_argument("--prior", choices=("l1tv", "mog2", "bg"), default="l1tv")
    g.add_argument("--lambda", dest="lam", type=float, help="l1-TV weight")
    g.add_argument("--omega", type=float, help="mixture weight of the --s1sq component (mog2, bg)")
    g.add_argument("--s1sq", type=_positive, help="mog2 component variance")
    g.add_argument("--s2sq", type=_positive, help="mog2 component variance")
    g.add_argument("--ssq", type=_positive, help="bg slab variance")
    g.add_argument("--eta", type=float, default=0.9, help="damping weight of the new site")
    g.add_argument("--max-iter", type=int, default=20, help="EP sweeps")
    g.add_argument("--tol", type=float, default=1e-4,
                   help="relative mean-change stopping tolerance (0 runs all sweeps)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=int, choices=(255, 1), default=255,
                   help="intensity scale: PGM values as stored (255) or divided by maxval (1)")
    g.add_argument("--log", action="store_true", help="write the variance map on a log10 scale")
    g.add_argument("--pgm-bits", type=int, choices=(8, 16), default=8)
    g.add_argument("--strategy", choices=("auto", "exact", "woodbury", "rbmc"), default="auto",
                   help="likelihood variance strategy")
    g.add_argument("--rbmc-samples", type=int, default=64)
    g.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("denoise", parents=[shared], help="y = x + noise")
    p.set_defaults(task="denoise")

    p = sub.add_parser("deconvolve", parents=[shared], help="y = k * x + noise")
    p.add_argument("--kernel", default="uniform9", help="kernel text file or uniformK")
    p.add_argument("--bsnr", type=float,
                   help="treat --input as the clean image and simulate an observation at this BSNR (dB)")
    p.set_defaults(task="deconvolve")

    p = sub.add_parser("cs", parents=[shared], help="simulate y = H x + noise with M < N and reconstruct")
    _cs_flags(p, required=True)
    p.set_defaults(task="cs")

    p = sub.add_parser("estimate-lambda", parents=[shared],
                       help="EP-EM estimate of the l1-TV weight (denoising unless --kernel/--matrix)")
    p.add_argument("--em-iters", type=int, default=20)
    p.add_argument("--a0-option", choices=("x", "u", "tilted"), default="tilted")
    p.add_argument("--ep-loops", type=int, default=1, help="EP sweeps per EM iteration")
    p.add_argument("--kernel", help="deconvolution kernel (observation given in --input)")
    _cs_flags(p, required=False)
    p.set_defaults(task="estimate-lambda")
    return parser


def _cs_flags(p, required: bool) -> None:
    p.add_argument("--matrix", choices=("gaussian", "hadamard"), default="gaussian" if required else None)
    p.add_argument("--ratio", type=_ratio, default=0.3 if required else None, help="M/N")


def read_config(path) -> list[str]:
    """Turn a key=value file into argv tokens placed before the real flags."""
    tokens = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if flag in ("--log", "--verbose"):
            if val.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
            elif val.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"{path}:{n}: {key} expects true/false")
        else:
            tokens += [flag, val]
    return tokens


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    commands = [i for i, tok in enumerate(argv) if tok in COMMANDS]
    if known.config and commands:
        # config tokens go first so that repeated command-line flags override them
        pos = commands[0]
        try:
            extra = read_config(known.config)
        except UsageError as exc:
            parser.error(str(exc))
        argv = argv[:pos + 1] + extra + argv[pos + 1:]
    return parser.parse_args(argv)


def _prior(args):
    if args.task == "estimate-lambda":
        if args.prior != "l1tv":
            raise UsageError("estimate-lambda only applies to the l1tv prior")
        return None
    try:
        if args.prior == "l1tv":
            if args.lam is None:
                raise UsageError("--lambda is required for the l1tv prior")
            return prior_from_name("l1tv", lam=args.lam)
        if args.prior == "mog2":
            if None in (args.omega, args.s1sq, args.s2sq):
                raise UsageError("mog2 needs --omega, --s1sq and --s2sq")
            if args.s1sq == args.s2sq:
                raise UsageError("mog2 variances must differ")
            return prior_from_name("mog2", omega=args.omega, s1_sq=args.s1sq, s2_sq=args.s2sq)
        if None in (args.omega, args.ssq):
            raise UsageError("bg needs --omega and --ssq")
        return prior_from_name("bg", omega=args.omega, s_sq=args.ssq)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(path, scale: int) -> np.ndarray:
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")
    img = read_image(path)
    if scale == 1 and Path(path).suffix.lower() == ".pgm":
        img = img / (65535.0 if img.max() > 255 else 255.0)
    return img


def build_problem(args, image):
    """Return ``(y, op, xi, truth)`` for the subcommand."""
    dims = image.shape
    truth = None
    task = args.task
    if task == "estimate-lambda":
        if args.kernel and args.matrix:
            raise UsageError("give at most one of --kernel and --matrix")
        task = "deconvolve" if args.kernel else "cs" if args.matrix else "denoise"
        if task == "cs" and args.ratio is None:
            args.ratio = 0.3
    if task == "denoise":
        op, y = Identity(dims), image.ravel()
    elif task == "deconvolve":
        op = Conv2D(load_kernel(args.kernel), dims, kernel_source=args.kernel)
        if getattr(args, "bsnr", None) is not None:
            truth = image
            if args.xi is None:
                args.xi = noise_variance_for_bsnr(op.apply(image.ravel()), args.bsnr)
            y = observe(image, op, args.xi, seed=args.seed)
        else:
            y = image.ravel()
    else:
        m = int(round(args.ratio * image.size))
        if m < 1:
            raise UsageError("--ratio gives no measurements")
        if args.matrix == "hadamard":
            try:
                op = build_hadamard(dims, m, seed=args.seed)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
        else:
            op = GaussianIID(dims, m, seed=args.seed)
        truth = image
        if args.xi is None:
            raise UsageError("--xi is required")
        y = observe(image, op, args.xi, seed=args.seed + 1)
    if args.xi is None:
        raise UsageError("--xi is required")
    return y, op, args.xi, truth


def _ep_config(args) -> EPConfig:
    if not 0 < args.eta <= 1:
        raise UsageError("--eta must lie in (0, 1]")
    if args.max_iter < 1:
        raise UsageError("--max-iter must be at least 1")
    return EPConfig(eta=args.eta, max_iterations=args.max_iter,
                    mean_change_tol=args.tol if args.tol > 0 else None,
                    strategy=None if args.strategy == "auto" else args.strategy,
                    rbmc_samples=args.rbmc_samples, seed=args.seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def run(args) -> dict:
    """Run one subcommand; returns the staged outputs as ``{name: writer}``."""
    t0 = time.perf_counter()
    image = _load(args.input, args.scale)
    prior = _prior(args)
    y, op, xi, truth = build_problem(args, image)
    if args.truth:
        truth = _load(args.truth, args.scale)
        if truth.shape != image.shape:
            raise UsageError("--truth and --input differ in shape")
    ep_cfg = _ep_config(args)
    records = []

    if args.task == "estimate-lambda":
        if args.em_iters < 1 or args.ep_loops < 1:
            raise UsageError("--em-iters and --ep-loops must be at least 1")
        em_cfg = EMConfig(lambda_init=args.lam, max_em_iterations=args.em_iters,
                          ep_loops_per_em=args.ep_loops, a0_option=args.a0_option)
        result, trace = run_ep_em(y, op, xi, em_cfg, ep_cfg, callback=records.append)
        lam = trace[-2]  # the weight the returned EP state was computed with
        prior_info = {"name": "l1tv", "params": {"lambda": lam}}
    else:
        result = run_ep(y, op, xi, prior, ep_cfg, callback=records.append)
        trace = None
        lam = getattr(prior, "lam", None)
        prior_info = {"name": prior.name, "params": prior.params()}
        for rec in records:
            log.info("iteration %d mean change %.3g", rec["iteration"], rec["mean_change"])

    metrics = obs_metrics = None
    if truth is not None:
        metrics = compute_metrics(truth, result.posterior_mean, args.scale).as_dict()
        if op.output_len == op.n_pixels:
            obs_metrics = compute_metrics(truth, y, args.scale).as_dict()

    mean = result.mean_image
    var = result.variance_image
    if args.log:
        var = np.log10(var)
    maxval = 255 if args.pgm_bits == 8 else 65535
    outputs = {
        "restored.pgm": lambda p: write_pgm(p, mean * (maxval / args.scale), maxval),
        "restored.pfm": lambda p: write_pfm(p, mean),
        "variance.pfm": lambda p: write_pfm(p, var),
        "log.jsonl": lambda p: Path(p).write_text(
            "".join(json.dumps(_jsonable(r)) + "\n" for r in records)),
    }
    summary = dict.fromkeys(SUMMARY_KEYS)
    summary.update(
        command=args.command, version=__version__, backend=BACKEND, input=str(args.input),
        dims=list(mean.shape), operator=op.to_config(), xi=xi, prior=prior_info, **{"lambda": lam},
        lambda_trace=trace, iterations=result.iterations_run, converged=result.converged,
        strategy=args.strategy, seed=args.seed, metrics=metrics, observation_metrics=obs_metrics,
        variance_scale="log10" if args.log else "linear",
        outputs=sorted(outputs) + ["summary.json"], seconds=time.perf_counter() - t0,
    )
    outputs["summary.json"] = lambda p: Path(p).write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    return outputs


def commit(outputs: dict, out_dir) -> None:
    """Write everything to a staging directory, then move it into ``out_dir``."""
    out_dir = Path(out_dir)
    parent = out_dir.parent
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".eptv-", dir=parent))
    try:
        for name, writer in outputs.items():
            writer(stage / name)
        out_dir.mkdir(exist_ok=True)
        for name in outputs:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        outputs = run(args)
        commit(outputs, args.output_dir)
    except UsageError as exc:
        print(f"eptv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"eptv {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
