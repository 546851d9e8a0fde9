"""4-neighbourhood edge graph split into four vertex-disjoint edge sets.

Set 1 holds horizontal edges whose left pixel sits in an even column, set 2
the odd-column ones; sets 3 and 4 do the same for vertical edges by the row
of the top pixel. Boundaries are free (no wrap-around) and pixels are
indexed row-major from 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EdgePartition:
    height: int
    width: int
    sets: tuple = field(repr=False)      # four (i, j) index-array pairs
    offsets: tuple = field(repr=False)   # start of each set in the global gradient index

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def n_edges(self) -> int:
        return sum(len(i) for i, _ in self.sets)

    def edges(self, k: int):
        """Pixel index arrays ``(i, j)`` of set ``k`` (1-based)."""
        _check_k(k)
        return self.sets[k - 1]

    def set_size(self, k: int) -> int:
        return len(self.edges(k)[0])

    def u_index(self, k: int, position) -> np.ndarray:
        """Global gradient index of edge ``position`` within set ``k``."""
        size = self.set_size(k)
        position = np.asarray(position)
        if np.any((position < 0) | (position >= size)):
            raise IndexError("edge position out of range")
        return self.offsets[k - 1] + position

    def edge_list(self, k: int):
        i, j = self.edges(k)
        return list(zip(i.tolist(), j.tolist()))

    def gradient(self, k: int, x) -> np.ndarray:
        """``u_k = D_k x``: one difference ``x[i] - x[j]`` per edge."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.n_pixels:
            raise ValueError("image size does not match the partition")
        i, j = self.edges(k)
        return x[i] - x[j]

    def gradient_adjoint(self, k: int, v) -> np.ndarray:
        """``D_k^T v``."""
        v = np.asarray(v, dtype=float).ravel()
        i, j = self.edges(k)
        if v.size != i.size:
            raise ValueError("gradient vector length does not match the edge set")
        out = np.zeros(self.n_pixels)
        # no pixel repeats within a set, so plain fancy assignment is safe
        out[i] += v
        out[j] -= v
        return out

    def all_gradients(self, x) -> np.ndarray:
        return np.concatenate([self.gradient(k, x) for k in range(1, 5)])


def _check_k(k: int) -> None:
    if k not in (1, 2, 3, 4):
        raise ValueError(f"edge set index must be 1..4, got {k}")


def build_partition(height: int, width: int) -> EdgePartition:
    if height < 1 or width < 1 or height * width < 2:
        raise ValueError("image needs at least two pixels")
    idx = np.arange(height * width).reshape(height, width)
    sets = []
    for start in (0, 1):
        left = idx[:, start:width - 1:2]
        sets.append((left.ravel(), (left + 1).ravel()))
    for start in (0, 1):
        top = idx[start:height - 1:2, :]
        sets.append((top.ravel(), (top + width).ravel()))
    sizes = [len(i) for i, _ in sets]
    offsets = tuple(int(o) for o in np.concatenate(([0], np.cumsum(sizes)[:-1])))
    return EdgePartition(height, width, tuple(sets), offsets)
