import numpy as np
import pytest

from nqs_ite.hamiltonian import Couplings, Heisenberg, connected, matvec
from nqs_ite.hilbert import enumerate_sector
from nqs_ite.lattice import build_lattice
from nqs_ite.verification import dense_matrix

ALL_UP_16 = (1 << 16) - 1


def test_all_up_is_diagonal(lattice4):
    row = connected(lattice4, Couplings(1.0, 0.5), ALL_UP_16)
    assert row.off_diag == []
    # 32 nn bonds * 1/4 + 32 nnn bonds * 0.5/4
    assert row.diagonal == pytest.approx(8 * 1.0 + 8 * 0.5)


def test_single_flip_pair_row(lattice4):
    # sites 0 and 1 anti-aligned, everything else up
    s = ALL_UP_16 ^ 1
    row = connected(lattice4, Couplings(1.0, 0.0), s)
    # site 0 has 4 nn partners, all anti-aligned with it
    assert len(row.off_diag) == 4
    assert all(v == 0.5 for _, v in row.off_diag)
    assert row.diagonal == pytest.approx((32 - 4) / 4 - 4 / 4)


def test_couplings_validation():
    with pytest.raises(ValueError):
        Couplings(0.0, 0.1)
    with pytest.raises(ValueError):
        Couplings(1.0, -0.1)


def test_batch_rows_match_dict_rows(ham4, sector4):
    configs = sector4.configs[::997]
    diag, targets, elements, anti = ham4.connected_batch(configs)
    for k, s in enumerate(configs):
        row = ham4.connected(int(s))
        assert diag[k] == pytest.approx(row.diagonal)
        got = sorted((int(t), e) for t, e, a in zip(targets[k], elements[k], anti[k]) if a)
        assert got == row.off_diag


def test_matvec_matches_dense_on_ring(ham8, sector8):
    h = dense_matrix(ham8, sector8)
    np.testing.assert_allclose(h, h.T)
    v = np.random.default_rng(0).standard_normal(len(sector8))
    np.testing.assert_allclose(ham8.matvec(sector8, v), h @ v, atol=1e-13)
    np.testing.assert_allclose(ham8.sparse_matrix(sector8).toarray(), h, atol=0)


def test_matvec_vs_sparse_4x4(ham4, sector4):
    v = np.random.default_rng(1).standard_normal(len(sector4))
    np.testing.assert_allclose(matvec(ham4.lattice, ham4.couplings, sector4, v),
                               ham4.sparse_matrix(sector4) @ v, atol=1e-12)
    with pytest.raises(ValueError):
        ham4.matvec(sector4, v[:-1])


def test_j2_zero_drops_nnn(lattice4):
    assert Heisenberg(lattice4, Couplings(1.0, 0.0)).n_bonds == 32
    assert Heisenberg(lattice4, Couplings(1.0, 0.5)).n_bonds == 64


def test_translation_invariance_of_spectrum_part():
    # relabel sites by a unit translation; <v|H|v> must be unchanged for translated v
    lat = build_lattice(4)
    ham = Heisenberg(lat, Couplings(1.0, 0.5))
    sec = enumerate_sector(16, 8)
    perm = np.array([lat.site_index(x + 1, y) for y in range(4) for x in range(4)])
    bits = ((sec.configs[:, None] >> np.arange(16, dtype=np.uint64)) & np.uint64(1)).astype(np.uint64)
    shifted = (bits << perm.astype(np.uint64)).sum(axis=1, dtype=np.uint64)
    idx = sec.index(shifted)
    v = np.random.default_rng(2).standard_normal(len(sec))
    w = np.empty_like(v)
    w[idx] = v
    assert v @ ham.matvec(sec, v) == pytest.approx(w @ ham.matvec(sec, w), rel=1e-12)
