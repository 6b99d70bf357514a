"""Periodic square lattice with nearest (J1) and next-nearest (J2) bond tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """A ``d_lat x d_lat`` torus. Sites are indexed row-major: ``y * d_lat + x``.

    Bonds are unordered pairs stored once as ``(min, max)`` rows, sorted.
    """

    d_lat: int
    nn_bonds: np.ndarray
    nnn_bonds: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.d_lat * self.d_lat

    def site_index(self, x: int, y: int) -> int:
        return (y % self.d_lat) * self.d_lat + (x % self.d_lat)

    def site_coords(self, index: int) -> tuple[int, int]:
        y, x = divmod(int(index), self.d_lat)
        return x, y


def _bond_table(d_lat: int, offsets) -> np.ndarray:
    bonds = set()
    for y in range(d_lat):
        for x in range(d_lat):
            i = y * d_lat + x
            for dx, dy in offsets:
                j = ((y + dy) % d_lat) * d_lat + (x + dx) % d_lat
                bonds.add((min(i, j), max(i, j)))
    return np.array(sorted(bonds), dtype=np.int64).reshape(-1, 2)


def build_lattice(d_lat: int) -> Lattice:
    """Build the periodic square lattice of side ``d_lat`` (even, >= 4)."""
    if int(d_lat) != d_lat or d_lat < 4 or d_lat % 2:
        raise ValueError(
            f"d_lat must be an even integer >= 4 (got {d_lat!r}); odd sides leave the "
            "Sz=0 sector empty and d_lat=2 doubles periodic bonds"
        )
    d_lat = int(d_lat)
    nn = _bond_table(d_lat, [(1, 0), (0, 1)])
    nnn = _bond_table(d_lat, [(1, 1), (1, -1)])
    return Lattice(d_lat=d_lat, nn_bonds=nn, nnn_bonds=nnn)


@dataclass(frozen=True)
class Ring:
    """Periodic chain of ``n_sites`` sites; nn bonds ``(i, i+1)``, nnn bonds ``(i, i+2)``.

    Used for small verification sectors, e.g. ``n_sites=8`` gives dimension 70.
    """

    n_sites: int
    nn_bonds: np.ndarray
    nnn_bonds: np.ndarray


def build_ring(n_sites: int) -> Ring:
    if int(n_sites) != n_sites or n_sites < 6 or n_sites % 2:
        raise ValueError(f"ring needs an even number of sites >= 6, got {n_sites!r}")
    n = int(n_sites)

    def table(k):
        return np.array(sorted((min(i, (i + k) % n), max(i, (i + k) % n)) for i in range(n)),
                        dtype=np.int64)

    return Ring(n_sites=n, nn_bonds=table(1), nnn_bonds=table(2))
