"""Synthetic signals with clustered supports."""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError


def _cluster_sizes(k: int, cluster_count: int) -> list[int]:
    base, extra = divmod(k, cluster_count)
    return [base + (1 if i < extra else 0) for i in range(cluster_count)]


def gen_synthetic_structured(n: int, k: int, cluster_count: int, amplitude: float = 1.0, seed: int = 0,
                             shape: tuple[int, int] | None = None, max_tries: int = 1000) -> np.ndarray:
    """k Gaussian nonzeros (std ``amplitude``) grouped in ``cluster_count`` clusters.

    Without ``shape`` the clusters are non-overlapping contiguous runs of a
    length-n vector. With ``shape=(h, w)`` they are near-square blobs on the
    raster: each blob fills its first c cells, row by row, of a
    ceil(sqrt(c))-high rectangle. Cluster sizes differ by at most one.
    """
    if k < 0 or k > n:
        raise ConfigError(f"need 0 <= k <= N, got k={k}, N={n}")
    x = np.zeros(n)
    if k == 0:
        return x
    if cluster_count < 1 or cluster_count > k:
        raise ConfigError(f"need 1 <= cluster_count <= k, got {cluster_count}")
    if shape is not None and shape[0] * shape[1] != n:
        raise ConfigError(f"shape {shape} does not hold {n} entries")
    rng = np.random.default_rng(seed)
    occupied = np.zeros(n, dtype=bool)
    for size in _cluster_sizes(k, cluster_count):
        if shape is None:
            cells = np.arange(size)
            span = n - size + 1
            offsets = lambda: int(rng.integers(span))  # noqa: E731
        else:
            h, w = shape
            bh = math.ceil(math.sqrt(size))
            bw = math.ceil(size / bh)
            if bh > h or bw > w:
                raise ConfigError(f"a blob of {size} cells does not fit a {h}x{w} grid")
            rr, cc = np.divmod(np.arange(size), bw)
            cells = rr * w + cc
            offsets = lambda: int(rng.integers(h - bh + 1)) * w + int(rng.integers(w - bw + 1))  # noqa: E731
        for _ in range(max_tries):
            idx = cells + offsets()
            if not occupied[idx].any():
                occupied[idx] = True
                break
        else:
            raise ConfigError(f"could not place {cluster_count} clusters totalling {k} entries in N={n}")
    support = np.flatnonzero(occupied)
    x[support] = amplitude * rng.standard_normal(support.size)
    return x
