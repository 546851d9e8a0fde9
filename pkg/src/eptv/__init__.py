"""Expectation propagation for image restoration with gradient priors."""
from .em import EMConfig, run_ep_em
from .engine import EPConfig, EPDivergenceError, EPResult, run_ep
from .metrics import Metrics, compute_metrics
from .operators import Conv2D, GaussianIID, HadamardSubsampled, Identity, build_hadamard
from .priors import BACKEND, BG, L1TV, MoG2, prior_from_name

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BG", "Conv2D", "EMConfig", "EPConfig", "EPDivergenceError", "EPResult",
    "GaussianIID", "HadamardSubsampled", "Identity", "L1TV", "Metrics", "MoG2",
    "build_hadamard", "compute_metrics", "prior_from_name", "run_ep", "run_ep_em",
]
