"""Image quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    mse: float
    psnr: float  # dB; +inf when the estimate is exact

    def as_dict(self) -> dict:
        # JSON has no infinity, so an exact match is written as null
        return {"mse": self.mse, "psnr": self.psnr if math.isfinite(self.psnr) else None}


def compute_metrics(truth, estimate, max_intensity: float = 255.0) -> Metrics:
    """``MSE = mean((x - x_hat)^2)`` and ``PSNR = 10 log10(max^2 / MSE)``."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.size != estimate.size:
        raise ValueError("truth and estimate differ in size")
    mse = float(np.mean((truth.ravel() - estimate.ravel()) ** 2))
    psnr = math.inf if mse == 0 else 10.0 * math.log10(max_intensity ** 2 / mse)
    return Metrics(mse, psnr)
