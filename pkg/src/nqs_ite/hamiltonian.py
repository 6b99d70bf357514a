"""Matrix-free J1-J2 Heisenberg Hamiltonian in the S^z product basis.

Each bond contributes ``J S_i.S_j``: ``+J/4`` on the diagonal for aligned
spins, ``-J/4`` for anti-aligned spins plus an exchange element ``J/2``
connecting to the configuration with the two spins swapped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from nqs_ite.hilbert import SectorIndex


@dataclass(frozen=True)
class Couplings:
    j1: float = 1.0
    j2: float = 0.0

    def __post_init__(self):
        if not self.j1 > 0:
            raise ValueError(f"j1 must be > 0, got {self.j1}")
        if not self.j2 >= 0:
            raise ValueError(f"j2 must be >= 0, got {self.j2}")


@dataclass
class ConnectedSet:
    """Row ``s`` of H: the diagonal element and the nonzero off-diagonal ones."""

    diagonal: float
    off_diag: list[tuple[int, float]] = field(default_factory=list)


class Heisenberg:
    """J1-J2 Hamiltonian bound to a lattice (anything with nn/nnn bond tables)."""

    def __init__(self, lattice, couplings: Couplings):
        self.lattice = lattice
        self.couplings = couplings
        self.n_sites = int(lattice.n_sites)
        nn = np.asarray(lattice.nn_bonds, dtype=np.int64).reshape(-1, 2)
        nnn = np.asarray(lattice.nnn_bonds, dtype=np.int64).reshape(-1, 2)
        if couplings.j2 == 0.0:
            nnn = nnn[:0]
        bonds = np.concatenate([nn, nnn])
        self.bond_i = bonds[:, 0].astype(np.uint64)
        self.bond_j = bonds[:, 1].astype(np.uint64)
        self.bond_coupling = np.concatenate(
            [np.full(len(nn), couplings.j1), np.full(len(nnn), couplings.j2)]
        )
        one = np.uint64(1)
        self.bond_mask = (one << self.bond_i) | (one << self.bond_j)

    @property
    def n_bonds(self) -> int:
        return len(self.bond_coupling)

    def connected(self, s: int) -> ConnectedSet:
        s = int(s)
        diag = 0.0
        merged: dict[int, float] = {}
        for i, j, coupling in zip(self.bond_i, self.bond_j, self.bond_coupling):
            if ((s >> int(i)) & 1) == ((s >> int(j)) & 1):
                diag += coupling / 4
            else:
                diag -= coupling / 4
                t = s ^ ((1 << int(i)) | (1 << int(j)))
                merged[t] = merged.get(t, 0.0) + coupling / 2
        return ConnectedSet(diagonal=diag, off_diag=sorted(merged.items()))

    def connected_batch(self, configs):
        """Vectorized rows for a batch.

        Returns ``(diag, targets, elements, anti)`` with shapes (B,), (B, M),
        (B, M), (B, M); ``anti`` flags bonds that produce an exchange and
        ``elements`` is zero elsewhere. Bonds are distinct pairs, so targets
        within a row never repeat and need no merging.
        """
        x = np.asarray(configs, dtype=np.uint64).reshape(-1)
        one = np.uint64(1)
        bi = (x[:, None] >> self.bond_i[None, :]) & one
        bj = (x[:, None] >> self.bond_j[None, :]) & one
        anti = bi != bj
        signs = np.where(anti, -1.0, 1.0)
        diag = (signs * self.bond_coupling[None, :]).sum(axis=1) / 4
        targets = x[:, None] ^ self.bond_mask[None, :]
        elements = np.where(anti, self.bond_coupling[None, :] / 2, 0.0)
        return diag, targets, elements, anti

    def diagonal(self, configs) -> np.ndarray:
        return self.connected_batch(configs)[0]

    def matvec(self, sector: SectorIndex, v) -> np.ndarray:
        """H v over a sector, bond by bond, without assembling a matrix."""
        v = np.asarray(v)
        if v.shape != (len(sector),):
            raise ValueError(f"vector length {v.shape} does not match sector size {len(sector)}")
        x = sector.configs
        one = np.uint64(1)
        out = np.zeros_like(v, dtype=np.result_type(v, np.float64))
        for i, j, coupling, mask in zip(self.bond_i, self.bond_j, self.bond_coupling, self.bond_mask):
            anti = ((x >> i) & one) != ((x >> j) & one)
            out += np.where(anti, -coupling / 4, coupling / 4) * v
            src = np.flatnonzero(anti)
            dst = sector.index(x[src] ^ mask)
            out[src] += (coupling / 2) * v[dst]
        return out

    def sparse_matrix(self, sector: SectorIndex) -> sp.csr_matrix:
        """Sector block of H assembled from :meth:`connected_batch` rows."""
        diag, targets, elements, anti = self.connected_batch(sector.configs)
        rows, cols = np.nonzero(anti)
        data = elements[rows, cols]
        cols = sector.index(targets[rows, cols])
        n = len(sector)
        idx = np.arange(n)
        mat = sp.coo_matrix(
            (np.concatenate([diag, data]), (np.concatenate([idx, rows]), np.concatenate([idx, cols]))),
            shape=(n, n),
        )
        return mat.tocsr()


def connected(lattice, couplings: Couplings, s: int) -> ConnectedSet:
    return Heisenberg(lattice, couplings).connected(s)


def matvec(lattice, couplings: Couplings, sector: SectorIndex, v) -> np.ndarray:
    return Heisenberg(lattice, couplings).matvec(sector, v)
