"""Neural-network quantum states trained by fixed-target imaginary time evolution.

Ground-state search for the 2D spin-1/2 J1-J2 Heisenberg model on periodic
square lattices, with an exact-diagonalization oracle and an energy-loss
baseline.
"""

from nqs_ite.lattice import Lattice, build_lattice
from nqs_ite.hilbert import SectorIndex, enumerate_sector, random_config
from nqs_ite.hamiltonian import ConnectedSet, Couplings, Heisenberg, connected, matvec
from nqs_ite.model import (
    Architecture,
    NqsNetwork,
    TabulatedState,
    count_params,
    forward,
    init_params,
    log_psi_grad,
)
from nqs_ite.ed import EdResult, ground_state

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "ConnectedSet",
    "Couplings",
    "EdResult",
    "Heisenberg",
    "Lattice",
    "NqsNetwork",
    "SectorIndex",
    "TabulatedState",
    "build_lattice",
    "connected",
    "count_params",
    "enumerate_sector",
    "forward",
    "ground_state",
    "init_params",
    "log_psi_grad",
    "matvec",
    "random_config",
]
