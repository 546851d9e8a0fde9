"""Test images and synthetic observations for the experiments.

Images come from scikit-image (an optional dependency) and are returned as
float arrays on the 0..255 scale.
"""
from __future__ import annotations

import numpy as np

from .operators import ForwardOp

# (image name, row, col, size): substitutes for the cropped deconvolution images
DECONV_CROPS = (
    ("camera", 96, 160, 128),
    ("astronaut", 20, 150, 164),
    ("chelsea", 40, 140, 165),
)


def _skdata():
    try:
        import skimage.data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ImportError("test images need scikit-image: pip install 'eptv[data]'") from exc
    return skimage.data


def _gray(rgb) -> np.ndarray:
    # ITU-R 601 luma, as in most gray conversions of these images
    return np.asarray(rgb[..., :3], dtype=float) @ np.array([0.299, 0.587, 0.114])


def cameraman(size: int = 256) -> np.ndarray:
    """Cameraman reduced from 512x512 by block averaging."""
    img = _skdata().camera().astype(float)
    f = img.shape[0] // size
    if f * size != img.shape[0]:
        raise ValueError("size must divide 512")
    return img.reshape(size, f, size, f).mean(axis=(1, 3))


def shepp_logan(size: int = 128) -> np.ndarray:
    from skimage.transform import resize

    ph = _skdata().shepp_logan_phantom()
    ph = resize(ph, (size, size), anti_aliasing=True, preserve_range=True)
    return 255.0 * ph / ph.max()


def deconv_crop(name: str) -> np.ndarray:
    data = _skdata()
    for key, r, c, n in DECONV_CROPS:
        if key == name:
            src = {"camera": lambda: data.camera().astype(float),
                   "astronaut": lambda: _gray(data.astronaut()),
                   "chelsea": lambda: _gray(data.chelsea())}[key]()
            return src[r:r + n, c:c + n].copy()
    raise KeyError(f"unknown crop {name!r}")


def load_named(name: str) -> np.ndarray:
    if name == "cameraman":
        return cameraman()
    if name in ("shepp-logan", "shepp_logan"):
        return shepp_logan()
    return deconv_crop(name)


def noise_variance_for_bsnr(blurred, bsnr_db: float) -> float:
    """Noise variance giving blurred-signal-to-noise ratio ``bsnr_db``."""
    blurred = np.asarray(blurred, dtype=float)
    return float(np.mean((blurred - blurred.mean()) ** 2) / 10.0 ** (bsnr_db / 10.0))


def observe(x, op: ForwardOp, xi: float, seed: int = 0) -> np.ndarray:
    """``y = H x + sqrt(xi) e`` with seeded standard normal ``e``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    clean = op.apply(np.asarray(x, dtype=float).ravel())
    return clean + np.sqrt(xi) * rng.standard_normal(clean.shape)
