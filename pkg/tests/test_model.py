import numpy as np
import pytest

from nqs_ite.hilbert import to_spins
from nqs_ite.model import (
    Architecture,
    NqsNetwork,
    TabulatedState,
    count_params,
    forward,
    init_params,
    log_psi_grad,
)


def test_param_counts():
    assert count_params(Architecture(d_lat=6, d_p=2, d_enc=8, width=512, depth=4)) == 826410
    assert count_params(Architecture(d_lat=4, d_p=2, d_enc=1, width=1, depth=1)) == 14


def test_width_doubling_cost():
    a = count_params(Architecture(d_lat=6, width=256, depth=3))
    b = count_params(Architecture(d_lat=6, width=512, depth=3))
    assert 3.0 < b / a < 4.0


@pytest.mark.parametrize("kw", [dict(d_lat=6, d_p=4), dict(d_lat=4, width=0), dict(d_lat=4, depth=0),
                                dict(d_lat=4, a_sat=0.0), dict(d_lat=4, activation="swish")])
def test_architecture_validation(kw):
    with pytest.raises(ValueError):
        Architecture(**kw)


def _reference_forward(net, configs):
    """Straightforward per-config evaluation, independent of the batched code."""
    a = net.arch
    v = net.views()
    out = []
    for s in configs:
        grid = to_spins(np.array([s], dtype=np.uint64), a.n_sites)[0].reshape(a.d_lat, a.d_lat)
        feats = []
        for py in range(a.d_lat // a.d_p):
            for px in range(a.d_lat // a.d_p):
                patch = grid[py * a.d_p:(py + 1) * a.d_p, px * a.d_p:(px + 1) * a.d_p].ravel()
                feats.append(patch @ v["enc_w"] + v["enc_b"])
        h = np.concatenate(feats)
        for k in range(a.depth):
            z = h @ v[f"w{k}"] + v[f"b{k}"]
            h = 0.5 * z * (1 + np.tanh(np.sqrt(2 / np.pi) * (z + 0.044715 * z**3)))
        x, phi = h @ v["head_w"] + v["head_b"]
        out.append((a.a_sat * np.tanh(x / a.a_sat), phi))
    return np.array(out)


def test_forward_matches_reference(small_net, sector4):
    configs = sector4.configs[::1300]
    lr, phi = forward(small_net, configs)
    ref = _reference_forward(small_net, configs)
    np.testing.assert_allclose(lr, ref[:, 0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(phi, ref[:, 1], rtol=1e-12, atol=1e-12)


def test_log_rho_saturation():
    arch = Architecture(d_lat=4, width=4, depth=1, a_sat=2.0)
    net = init_params(arch, 0, scale=50.0)
    lr, _ = net.evaluate(np.array([0xFF, 0xFF00, 0x0F0F], dtype=np.uint64))
    assert np.all(np.abs(lr) <= 2.0)


def test_rejects_bits_beyond_lattice(small_net):
    with pytest.raises(ValueError):
        small_net.evaluate(np.array([1 << 20], dtype=np.uint64))


def test_chunked_equals_single(small_net, sector4):
    lr_all, phi_all = small_net.evaluate(sector4.configs)
    lr_part, phi_part = small_net.evaluate(sector4.configs[5000:5003])
    np.testing.assert_array_equal(lr_all[5000:5003], lr_part)
    np.testing.assert_array_equal(phi_all[5000:5003], phi_part)


@pytest.mark.parametrize("act", ["gelu", "tanh"])
def test_log_psi_grad_finite_difference(act):
    net = init_params(Architecture(d_lat=4, width=16, depth=2, activation=act), 5, scale=1.5)
    s = 0b1010_0101_1100_0011
    g_rho, g_phi = log_psi_grad(net, s)
    h = 1e-6
    rng = np.random.default_rng(0)
    for i in rng.choice(net.n_params, 40, replace=False):
        p = net.params.copy()
        p[i] += h
        up = NqsNetwork(net.arch, p).evaluate(np.array([s], dtype=np.uint64))
        p[i] -= 2 * h
        dn = NqsNetwork(net.arch, p).evaluate(np.array([s], dtype=np.uint64))
        np.testing.assert_allclose(g_rho[i], (up[0][0] - dn[0][0]) / (2 * h), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(g_phi[i], (up[1][0] - dn[1][0]) / (2 * h), rtol=1e-6, atol=1e-9)


def test_phase_bias_gradient_is_one(small_net):
    g_rho, g_phi = log_psi_grad(small_net, 0b1111_0000_1111_0000)
    # last parameter is the phase-head bias
    assert g_phi[-1] == 1.0
    assert g_rho[-1] == 0.0


def test_vjp_is_weighted_sum_of_gradients(small_net, sector4):
    configs = sector4.configs[:7]
    c_rho = np.linspace(-1, 1, 7)
    c_phi = np.linspace(2, -3, 7)
    total = small_net.vjp(configs, c_rho, c_phi)
    ref = sum(cr * log_psi_grad(small_net, int(s))[0] + cp * log_psi_grad(small_net, int(s))[1]
              for s, cr, cp in zip(configs, c_rho, c_phi))
    np.testing.assert_allclose(total, ref, rtol=1e-12, atol=1e-14)


def test_init_reproducible_and_copy_independent():
    arch = Architecture(d_lat=4, width=8, depth=1)
    a, b = init_params(arch, 3), init_params(arch, 3)
    np.testing.assert_array_equal(a.params, b.params)
    c = a.copy()
    c.params[0] += 1.0
    assert a.params[0] != c.params[0]


def test_tabulated_state(sector8):
    psi = np.random.default_rng(0).standard_normal(len(sector8))
    t = TabulatedState.from_amplitudes(sector8, psi)
    lr, phi = t.evaluate(sector8.configs)
    np.testing.assert_allclose(np.exp(lr) * np.cos(phi), psi, rtol=1e-12)
