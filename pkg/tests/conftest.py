import numpy as np
import pytest

from nqs_ite import estimators as est
from nqs_ite.ed import ground_state
from nqs_ite.hamiltonian import Couplings, Heisenberg
from nqs_ite.hilbert import enumerate_sector
from nqs_ite.lattice import build_lattice, build_ring
from nqs_ite.model import Architecture, init_params

# ground energies of the 4x4 torus, S=1/2 spins, J1 = 1, frozen from an
# independent ARPACK solve of the sector matrix
E0_4X4 = {0.0: -11.228483208428841, 0.5: -8.457923351394847, 1.0: -12.295490216102479}


@pytest.fixture(scope="session")
def lattice4():
    return build_lattice(4)


@pytest.fixture(scope="session")
def sector4():
    return enumerate_sector(16, 8)


@pytest.fixture(scope="session")
def ham4(lattice4):
    return Heisenberg(lattice4, Couplings(1.0, 0.5))


@pytest.fixture(scope="session")
def exact4(ham4, sector4):
    return est.ExactSum(ham4, sector4)


@pytest.fixture(scope="session")
def ed4(lattice4, sector4):
    return ground_state(lattice4, Couplings(1.0, 0.5), sector4)


@pytest.fixture(scope="session")
def ring8():
    return build_ring(8)


@pytest.fixture(scope="session")
def sector8():
    return enumerate_sector(8, 4)


@pytest.fixture(scope="session")
def ham8(ring8):
    return Heisenberg(ring8, Couplings(1.0, 0.5))


@pytest.fixture
def small_net():
    return init_params(Architecture(d_lat=4, width=8, depth=2), seed=11, scale=1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
