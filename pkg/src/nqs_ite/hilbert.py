"""Basis states of the fixed-magnetization sector.

A configuration is an unsigned 64-bit pattern; bit ``j`` set means site ``j``
is spin up. Batches are ``np.uint64`` arrays.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

MAX_ENUMERATION_SITES = 32


def popcount(configs) -> np.ndarray:
    """Number of up spins per configuration."""
    x = np.asarray(configs, dtype=np.uint64)
    return np.bitwise_count(x).astype(np.int64)


def to_spins(configs, n_sites: int) -> np.ndarray:
    """Map bit patterns to +-1 arrays of shape (batch, n_sites): up -> -1, down -> +1."""
    x = np.asarray(configs, dtype=np.uint64).reshape(-1)
    shifts = np.arange(n_sites, dtype=np.uint64)
    bits = (x[:, None] >> shifts[None, :]) & np.uint64(1)
    return 1.0 - 2.0 * bits.astype(np.float64)


def from_spins(spins) -> np.ndarray:
    """Inverse of :func:`to_spins`."""
    spins = np.atleast_2d(np.asarray(spins))
    bits = (spins < 0).astype(np.uint64)
    weights = np.uint64(1) << np.arange(spins.shape[1], dtype=np.uint64)
    return (bits * weights).sum(axis=1, dtype=np.uint64)


@dataclass(frozen=True)
class SectorIndex:
    """All configurations with a fixed number of up spins, in ascending order."""

    n_sites: int
    n_up: int
    configs: np.ndarray

    def __len__(self) -> int:
        return len(self.configs)

    def index(self, configs) -> np.ndarray:
        """Ordinals of ``configs``; raises ``KeyError`` for any config outside the sector."""
        x = np.asarray(configs, dtype=np.uint64)
        idx = np.searchsorted(self.configs, x)
        idx_c = np.minimum(idx, len(self.configs) - 1)
        if not np.all(self.configs[idx_c] == x):
            raise KeyError("configuration outside the sector")
        return idx_c


def enumerate_sector(n_sites: int, n_up: int) -> SectorIndex:
    if not 0 <= n_up <= n_sites:
        raise ValueError(f"need 0 <= n_up <= n_sites, got n_up={n_up}, n_sites={n_sites}")
    if n_sites > MAX_ENUMERATION_SITES:
        raise ValueError(
            f"refusing to enumerate a sector over {n_sites} sites "
            f"(limit {MAX_ENUMERATION_SITES}; C({n_sites},{n_up}) = {comb(n_sites, n_up)})"
        )
    out = np.empty(comb(n_sites, n_up), dtype=np.uint64)
    for k, ups in enumerate(itertools.combinations(range(n_sites), n_up)):
        v = 0
        for site in ups:
            v |= 1 << site
        out[k] = v
    out.sort()
    return SectorIndex(n_sites=n_sites, n_up=n_up, configs=out)


def fisher_yates_configs(uniforms: np.ndarray, n_sites: int, n_up: int) -> np.ndarray:
    """Uniform fixed-popcount configurations from ``uniforms`` of shape (batch, n_up).

    Partial Fisher-Yates: step ``k`` swaps position ``k`` with a uniform pick
    from ``k..n_sites-1``; the first ``n_up`` positions become the up sites.
    """
    u = np.atleast_2d(np.asarray(uniforms, dtype=np.float64))
    batch = u.shape[0]
    perm = np.tile(np.arange(n_sites, dtype=np.int64), (batch, 1))
    rows = np.arange(batch)
    for k in range(n_up):
        j = k + np.minimum((u[:, k] * (n_sites - k)).astype(np.int64), n_sites - k - 1)
        a = perm[rows, k].copy()
        perm[rows, k] = perm[rows, j]
        perm[rows, j] = a
    out = np.zeros(batch, dtype=np.uint64)
    for k in range(n_up):
        out |= np.uint64(1) << perm[:, k].astype(np.uint64)
    return out


def random_config(rng: np.random.Generator, n_sites: int, n_up: int) -> int:
    """One uniformly random configuration with exactly ``n_up`` up spins."""
    u = rng.random((1, n_up))
    return int(fisher_yates_configs(u, n_sites, n_up)[0])
