"""Linear degradation operators ``H`` acting on flattened ``(H, W)`` images."""
from __future__ import annotations

import math

import numpy as np
from scipy import fft as sfft


class ForwardOp:
    """Base class: ``apply`` maps an image vector to observations, ``adjoint`` back."""

    kind = "abstract"

    def __init__(self, dims):
        height, width = (int(d) for d in dims)
        if height < 1 or width < 1:
            raise ValueError("image dimensions must be positive")
        self.dims = (height, width)

    @property
    def n_pixels(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def output_len(self) -> int:
        return self.n_pixels

    @property
    def shape(self):
        return (self.output_len, self.n_pixels)

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.n_pixels:
            raise ValueError(f"expected {self.n_pixels} pixels, got shape {x.shape}")
        return x

    def _check_y(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 0 or y.shape[-1] != self.output_len:
            raise ValueError(f"expected {self.output_len} observations, got shape {y.shape}")
        return y

    def apply(self, x) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y) -> np.ndarray:
        raise NotImplementedError

    def normal(self, x) -> np.ndarray:
        """``H^T H x``; batched over leading axes."""
        return self.adjoint(self.apply(x))

    def gram_diagonal(self):
        """``diag(H^T H)`` when ``H^T H`` itself is diagonal, else ``None``."""
        return None

    def normal_diagonal(self) -> np.ndarray:
        """``diag(H^T H)`` for any operator (needed by the Monte Carlo estimator)."""
        raise NotImplementedError

    def to_config(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims)}

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.dims}, output_len={self.output_len})"


class Identity(ForwardOp):
    kind = "identity"

    def apply(self, x):
        return np.array(self._check_x(x), copy=True)

    def adjoint(self, y):
        return np.array(self._check_y(y), copy=True)

    def normal(self, x):
        return np.array(self._check_x(x), copy=True)

    def gram_diagonal(self):
        return np.ones(self.n_pixels)

    def normal_diagonal(self):
        return np.ones(self.n_pixels)


def uniform_kernel(size: int = 9) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


class Conv2D(ForwardOp):
    """Circular 2-D convolution with a centred kernel.

    ``y[r, q] = sum_{a,b} k[a, b] x[(r - a + ch) % H, (q - b + cw) % W]``
    with ``(ch, cw)`` the kernel centre. The kernel is used as given;
    :func:`uniform_kernel` and the CLI normalise to unit sum.
    """

    kind = "conv2d"

    def __init__(self, kernel, dims, kernel_source=None):
        super().__init__(dims)
        kernel = np.atleast_2d(np.asarray(kernel, dtype=float))
        self.kernel = kernel
        self.kernel_source = kernel_source
        height, width = self.dims
        kh, kw = kernel.shape
        rows = (np.arange(kh) - kh // 2) % height
        cols = (np.arange(kw) - kw // 2) % width
        # kernel wrapped onto the image torus with its centre at pixel (0, 0)
        psf = np.zeros(self.dims)
        np.add.at(psf, (rows[:, None], cols[None, :]), kernel)
        self._psf = psf
        self._otf = sfft.rfft2(psf)
        self._otf_sq = np.abs(self._otf) ** 2

    def _filter(self, x, transfer):
        x = self._check_x(x)
        lead = x.shape[:-1]
        img = x.reshape(lead + self.dims)
        out = sfft.irfft2(sfft.rfft2(img) * transfer, s=self.dims)
        return out.reshape(lead + (self.n_pixels,))

    def apply(self, x):
        return self._filter(x, self._otf)

    def adjoint(self, y):
        return self._filter(self._check_y(y), np.conj(self._otf))

    def normal(self, x):
        return self._filter(x, self._otf_sq)

    def normal_diagonal(self):
        # every column of a circulant H holds the wrapped kernel
        return np.full(self.n_pixels, float(np.sum(self._psf ** 2)))

    @property
    def transfer_sq(self) -> np.ndarray:
        """``|K(f)|^2`` on the ``rfft2`` grid (eigenvalues of ``H^T H``)."""
        return self._otf_sq

    def to_config(self):
        cfg = super().to_config()
        cfg["kernel"] = self.kernel_source or self.kernel.tolist()
        return cfg


class GaussianIID(ForwardOp):
    """``M x N`` matrix with i.i.d. ``N(0, 1/M)`` entries.

    Row ``m`` is drawn from its own seed substream ``(seed, m)`` so any row
    can be regenerated independently; the dense matrix is built lazily.
    """

    kind = "gaussian"

    def __init__(self, dims, rows: int, seed: int = 0):
        super().__init__(dims)
        if not 1 <= rows <= self.n_pixels:
            raise ValueError("number of rows must lie in [1, N]")
        self.rows = int(rows)
        self.seed = int(seed)
        self._matrix = None

    @property
    def output_len(self):
        return self.rows

    def row(self, m: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(m,)))
        return rng.standard_normal(self.n_pixels) / math.sqrt(self.rows)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            mat = np.empty((self.rows, self.n_pixels))
            for m in range(self.rows):
                mat[m] = self.row(m)
            self._matrix = mat
        return self._matrix

    def apply(self, x):
        return self._check_x(x) @ self.matrix.T

    def adjoint(self, y):
        return self._check_y(y) @ self.matrix

    def normal_diagonal(self):
        return np.einsum("mn,mn->n", self.matrix, self.matrix)

    def to_config(self):
        cfg = super().to_config()
        cfg.update(rows=self.rows, seed=self.seed)
        return cfg


# ---------------------------------------------------------------------------
# Walsh-Hadamard

def _bit_reverse(n: int) -> np.ndarray:
    p = int(round(math.log2(n)))
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(p):
        rev |= ((idx >> b) & 1) << (p - 1 - b)
    return rev


def fwht(a, axis: int = -1) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform in natural (Sylvester) order."""
    a = np.moveaxis(np.array(a, dtype=float, copy=True), axis, -1)
    n = a.shape[-1]
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    lead = a.shape[:-1]
    h = 1
    while h < n:
        a = a.reshape(lead + (n // (2 * h), 2, h))
        x, y = a[..., 0, :], a[..., 1, :]
        a = np.stack((x + y, x - y), axis=-2).reshape(lead + (n,))
        h *= 2
    return np.moveaxis(a, -1, axis)


def paley_transform(x, axis: int = -1) -> np.ndarray:
    """Orthonormal Walsh transform with rows in Paley (dyadic) order."""
    n = np.shape(x)[axis]
    out = fwht(x, axis) / math.sqrt(n)
    return np.take(out, _bit_reverse(n), axis=axis)


def paley_adjoint(c, axis: int = -1) -> np.ndarray:
    n = np.shape(c)[axis]
    perm = _bit_reverse(n)
    z = np.empty_like(np.asarray(c, dtype=float))
    idx = [slice(None)] * z.ndim
    idx[axis] = perm
    z[tuple(idx)] = c
    return fwht(z, axis) / math.sqrt(n)


class HadamardSubsampled(ForwardOp):
    """Rows of the separable 2-D Paley-ordered Walsh transform.

    ``H = S (W_H kron W_W)``, with ``S`` keeping ``selected_rows`` of the
    row-major coefficient array. Rows are orthonormal, so ``H H^T = I_M``.
    """

    kind = "hadamard"

    def __init__(self, dims, selected_rows, seed=None):
        super().__init__(dims)
        for d in self.dims:
            if d & (d - 1):
                raise ValueError("Hadamard operator needs power-of-two dimensions")
        sel = np.asarray(selected_rows, dtype=np.int64)
        if sel.ndim != 1 or sel.size < 1 or len(np.unique(sel)) != sel.size:
            raise ValueError("selected rows must be distinct indices")
        if sel.min() < 0 or sel.max() >= self.n_pixels:
            raise ValueError("selected row out of range")
        self.selected_rows = sel
        self.seed = seed
        self._xor_index = None

    @property
    def output_len(self):
        return self.selected_rows.size

    def full_transform(self, x) -> np.ndarray:
        x = self._check_x(x)
        img = x.reshape(x.shape[:-1] + self.dims)
        coef = paley_transform(paley_transform(img, -1), -2)
        return coef.reshape(x.shape[:-1] + (self.n_pixels,))

    def full_adjoint(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        img = c.reshape(c.shape[:-1] + self.dims)
        out = paley_adjoint(paley_adjoint(img, -2), -1)
        return out.reshape(c.shape[:-1] + (self.n_pixels,))

    def apply(self, x):
        return self.full_transform(x)[..., self.selected_rows]

    def adjoint(self, y):
        y = self._check_y(y)
        c = np.zeros(y.shape[:-1] + (self.n_pixels,))
        c[..., self.selected_rows] = y
        return self.full_adjoint(c)

    def normal_diagonal(self):
        return np.full(self.n_pixels, self.output_len / self.n_pixels)

    @property
    def xor_index(self) -> np.ndarray:
        """Flat coefficient index of ``row_a XOR row_b`` for all selected pairs.

        Walsh functions multiply by XOR-ing their (per-axis) indices, which
        turns ``H diag(v) H^T`` into a gather from one transform of ``v``.
        """
        if self._xor_index is None:
            width = self.dims[1]
            r = (self.selected_rows // width).astype(np.int32)
            q = (self.selected_rows % width).astype(np.int32)
            self._xor_index = (r[:, None] ^ r[None, :]) * np.int32(width) + (q[:, None] ^ q[None, :])
        return self._xor_index

    def to_config(self):
        cfg = super().to_config()
        cfg.update(rows=self.output_len, seed=self.seed)
        if self.seed is None:
            cfg["selected_rows"] = self.selected_rows.tolist()
        return cfg


def build_hadamard(dims, m: int, seed: int = 0) -> HadamardSubsampled:
    """Subsampled 2-D Hadamard operator with ``m`` rows picked uniformly at random."""
    height, width = dims
    n = height * width
    if not 1 <= m <= n:
        raise ValueError("m must lie in [1, N]")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rows = np.sort(rng.choice(n, size=m, replace=False))
    return HadamardSubsampled(dims, rows, seed=seed)


def op_from_config(cfg: dict) -> ForwardOp:
    kind = cfg["kind"]
    dims = tuple(cfg["dims"])
    if kind == "identity":
        return Identity(dims)
    if kind == "conv2d":
        kern = cfg["kernel"]
        if isinstance(kern, str):
            from .imageio import load_kernel
            return Conv2D(load_kernel(kern), dims, kernel_source=kern)
        return Conv2D(np.asarray(kern), dims)
    if kind == "gaussian":
        return GaussianIID(dims, cfg["rows"], cfg.get("seed", 0))
    if kind == "hadamard":
        if cfg.get("selected_rows") is not None:
            return HadamardSubsampled(dims, cfg["selected_rows"], cfg.get("seed"))
        return build_hadamard(dims, cfg["rows"], cfg.get("seed", 0))
    raise ValueError(f"unknown operator kind {kind!r}")
