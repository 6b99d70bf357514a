"""Oracle and invariant checks behind the ``verify`` subcommand.

Each check returns a :class:`Check` with a short detail string. The oracles
are deliberately independent of the code under test: dense matrices built
from the dict-based :meth:`Heisenberg.connected` rows, the bond-by-bond
matrix-free product, ARPACK for the ground energy, central finite
differences for gradients and brute-force grid scans for the time step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from nqs_ite import estimators as est
from nqs_ite import sampler as smp
from nqs_ite.ed import ground_state
from nqs_ite.hamiltonian import Couplings, Heisenberg
from nqs_ite.hilbert import enumerate_sector
from nqs_ite.lattice import build_lattice, build_ring
from nqs_ite.model import Architecture, NqsNetwork, TabulatedState, count_params, init_params
from nqs_ite.trainer import optimal_time_step, target_energy


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def dense_matrix(ham: Heisenberg, sector) -> np.ndarray:
    """Dense sector block from the row-by-row ``connected`` map (small sectors only)."""
    n = len(sector)
    if n > 5000:
        raise ValueError("dense oracle limited to sectors of dimension <= 5000")
    h = np.zeros((n, n))
    for a, s in enumerate(sector.configs):
        row = ham.connected(int(s))
        h[a, a] += row.diagonal
        for t, val in row.off_diag:
            h[a, int(sector.index(np.array([t], dtype=np.uint64))[0])] += val
    return h


def random_net(d_lat: int, width: int, depth: int, seed: int, scale: float = 1.0) -> NqsNetwork:
    return init_params(Architecture(d_lat=d_lat, width=width, depth=depth), seed, scale)


def random_tabulated(sector, seed: int) -> TabulatedState:
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(len(sector)) + 1j * rng.standard_normal(len(sector))
    return TabulatedState.from_amplitudes(sector, psi)


def rayleigh_moments(apply, psi: np.ndarray) -> tuple[float, float, float]:
    """``<H^k>`` for k = 1, 2, 3 from repeated matrix application."""
    h1 = apply(psi)
    h2 = apply(h1)
    norm = np.vdot(psi, psi).real
    return (np.vdot(psi, h1).real / norm, np.vdot(h1, h1).real / norm, np.vdot(h1, h2).real / norm)


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# ---------------------------------------------------------------- checks


def check_param_counts() -> Check:
    a = count_params(Architecture(d_lat=6, d_p=2, d_enc=8, width=512, depth=4))
    b = count_params(Architecture(d_lat=4, d_p=2, d_enc=1, width=1, depth=1))
    return Check("param_count", a == 826410 and b == 14, f"{a}, {b}")


def check_ed(j2_values=(0.0, 0.5, 1.0)) -> Check:
    lat = build_lattice(4)
    sector = enumerate_sector(16, 8)
    ok, lines = True, []
    for j2 in j2_values:
        ham = Heisenberg(lat, Couplings(1.0, j2))
        res = ground_state(lat, Couplings(1.0, j2), sector)
        ref = spla.eigsh(ham.sparse_matrix(sector), k=1, which="SA", tol=1e-14)[0][0]
        ok &= abs(res.e0 - ref) <= 1e-10 * abs(ref) and res.residual <= 1e-9 * abs(res.e0)
        lines.append(f"j2={j2}: e0={res.e0:.10f} res={res.residual:.1e}")
    return Check("ed_lanczos_vs_arpack", bool(ok), "; ".join(lines))


def check_local_energy_eigenstate() -> Check:
    lat = build_lattice(4)
    c = Couplings(1.0, 0.5)
    sector = enumerate_sector(16, 8)
    res = ground_state(lat, c, sector)
    wf = TabulatedState.from_amplitudes(sector, res.vector)
    h = est.local_energies(wf, Heisenberg(lat, c), sector.configs)
    spread = float(np.max(np.abs(h - res.e0)))
    return Check("local_energy_eigenstate", spread < 1e-9, f"max |H_loc - E0| = {spread:.2e}")


def check_moments(n_nets: int = 20, tol: float = 1e-9) -> Check:
    lat = build_lattice(4)
    sector = enumerate_sector(16, 8)
    ham = Heisenberg(lat, Couplings(1.0, 0.5))
    exact = est.ExactSum(ham, sector)
    worst = 0.0
    for k in range(n_nets):
        net = random_net(4, 8, 1, 1000 + k, scale=2.0)
        m = est.energy_moments(net, ham, exact=exact, e3_mode="exact")
        lr, ph = net.evaluate(sector.configs)
        psi = np.exp(lr - lr.max() + 1j * ph)
        ref = rayleigh_moments(lambda v: ham.matvec(sector, v), psi)
        worst = max(worst, *(abs(x - y) / abs(y) for x, y in zip((m.e1, m.e2, m.e3), ref)))
    return Check("moments_vs_matrix", worst <= tol, f"{n_nets} nets, worst rel err {worst:.2e}")


def check_local_energy_sq_toy() -> Check:
    ring = build_ring(8)
    ham = Heisenberg(ring, Couplings(1.0, 0.5))
    sector = enumerate_sector(8, 4)
    h = dense_matrix(ham, sector)
    wf = random_tabulated(sector, 7)
    psi = np.exp(wf.log_rho + 1j * wf.phi)
    ref = (h @ (h @ psi)) / psi
    got = np.array([est.local_energy_sq(wf, ham, int(s)) for s in sector.configs])
    err = rel_err(got, ref)
    return Check("local_energy_sq_toy", err < 1e-10, f"rel err {err:.2e}")


def _fd_grad(fun, params: np.ndarray, idx, h: float = 1e-5) -> np.ndarray:
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        old = params[i]
        params[i] = old + h
        fp = fun()
        params[i] = old - h
        fm = fun()
        params[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def gradient_errors(n_nets: int = 10, n_params: int = 20, seed: int = 0) -> tuple[float, float]:
    """Worst relative error of the ITE and E-loss gradients against finite differences."""
    lat = build_lattice(4)
    sector = enumerate_sector(16, 8)
    ham = Heisenberg(lat, Couplings(1.0, 0.5))
    exact = est.ExactSum(ham, sector)
    rng = np.random.default_rng(seed)
    worst_ite = worst_e = 0.0
    for k in range(n_nets):
        fixed = random_net(4, 8 + (k % 2) * 8, 1 + k % 2, 2000 + k, scale=1.5)
        net = fixed.copy()
        net.params += 0.05 * rng.standard_normal(net.n_params)
        dt = 0.05 + 0.1 * rng.random()
        table = est.target_table(fixed, exact, dt)
        idx = rng.choice(net.n_params, size=min(n_params, net.n_params), replace=False)

        g = est.ite_loss_grad_exact(net, fixed, dt, exact)[idx]
        fd = _fd_grad(lambda: est.ite_loss_exact(net, table, exact), net.params, idx)
        worst_ite = max(worst_ite, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))

        g = est.e_loss_grad_exact(net, exact)[idx]

        def energy():
            b = exact.batch(net)
            return float(b.mean(b.h_loc).real)

        fd = _fd_grad(energy, net.params, idx)
        worst_e = max(worst_e, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))
    return worst_ite, worst_e


def check_gradients(n_nets: int = 10, n_params: int = 20, tol: float = 1e-6) -> Check:
    ite, e = gradient_errors(n_nets, n_params)
    return Check("gradients_vs_fd", max(ite, e) <= tol, f"ite {ite:.2e}, e_loss {e:.2e}")


def proportionality_error(n_nets: int = 5) -> float:
    lat = build_lattice(4)
    ham = Heisenberg(lat, Couplings(1.0, 0.5))
    exact = est.ExactSum(ham, enumerate_sector(16, 8))
    worst = 0.0
    for k in range(n_nets):
        net = random_net(4, 16, 2, 3000 + k)
        dt = 0.02 * (k + 1)
        g_ite = est.ite_loss_grad_exact(net, net, dt, exact)
        g_e = est.e_loss_grad_exact(net, exact)
        b = exact.batch(net)
        scale = dt / (1.0 - dt * float(b.mean(b.h_loc).real))
        worst = max(worst, float(np.max(np.abs(g_ite - scale * g_e)) / np.max(np.abs(g_ite))))
    return worst


def check_proportionality(tol: float = 1e-10) -> Check:
    err = proportionality_error()
    return Check("ite_vs_eloss_proportionality", err <= tol, f"worst rel err {err:.2e}")


def time_step_errors(n_states: int = 50, n_grid: int = 10_000, seed: int = 0) -> tuple[int, float]:
    """Grid points beating the chosen time step, and worst Rayleigh mismatch of the target energy."""
    lat = build_lattice(4)
    sector = enumerate_sector(16, 8)
    ham = Heisenberg(lat, Couplings(1.0, 0.5))
    exact = est.ExactSum(ham, sector)
    losers, worst = 0, 0.0
    for k in range(n_states):
        wf = random_net(4, 8, 1, 4000 + k + seed, scale=1.0 + 0.05 * k)
        m = est.energy_moments(wf, ham, exact=exact, e3_mode="exact")
        dt = optimal_time_step(m)
        e_star = target_energy(m, dt)
        sigma = math.sqrt(m.sigma2)
        grid = np.linspace(2.0 / sigma / n_grid, 2.0 / sigma, n_grid)
        e_grid = np.array([target_energy(m, g) for g in grid])
        losers += int(np.sum(e_grid < e_star - 1e-12 * abs(e_star)))
        lr, ph = wf.evaluate(sector.configs)
        psi = np.exp(lr - lr.max() + 1j * ph)
        phi_t = psi - dt * exact.apply(psi)
        rq = np.vdot(phi_t, exact.apply(phi_t)).real / np.vdot(phi_t, phi_t).real
        worst = max(worst, abs(rq - e_star) / abs(rq))
    return losers, worst


def check_time_step(n_states: int = 50) -> Check:
    losers, worst = time_step_errors(n_states)
    return Check("optimal_time_step", losers == 0 and worst <= 1e-10,
                 f"{losers} grid points lower; Rayleigh rel err {worst:.2e}")


def check_uniform_acceptance() -> Check:
    sector = enumerate_sector(16, 8)
    wf = TabulatedState.uniform(sector)
    ens = smp.init_ensemble(64, 16, 8, build_lattice(4).nn_bonds, seed=1)
    smp.sample_many(wf, ens, 64 * 50, 1)
    return Check("uniform_acceptance", ens.acceptance_rate == 1.0, f"rate {ens.acceptance_rate!r}")


def stationarity_error(seed: int = 0) -> float:
    """Largest change of an exact ``|psi|^2`` under one Metropolis transition matrix (8-site ring)."""
    ring = build_ring(8)
    sector = enumerate_sector(8, 4)
    wf = random_tabulated(sector, seed)
    p = np.exp(2 * wf.log_rho)
    p /= p.sum()
    n, bonds = len(sector), ring.nn_bonds
    t = np.zeros((n, n))
    for a, s in enumerate(sector.configs):
        for i, j in bonds:
            s2 = int(s) ^ ((1 << int(i)) | (1 << int(j)))
            if ((int(s) >> int(i)) & 1) == ((int(s) >> int(j)) & 1):
                t[a, a] += 1 / len(bonds)
                continue
            b = int(sector.index(np.array([s2], dtype=np.uint64))[0])
            acc = min(1.0, p[b] / p[a])
            t[a, b] += acc / len(bonds)
            t[a, a] += (1 - acc) / len(bonds)
    return float(np.max(np.abs(p @ t - p)))


def check_stationarity() -> Check:
    err = stationarity_error()
    return Check("sampler_stationarity", err < 1e-12, f"max |pT - p| = {err:.2e}")


ALL_CHECKS = (
    check_param_counts,
    check_ed,
    check_local_energy_eigenstate,
    check_local_energy_sq_toy,
    check_moments,
    check_gradients,
    check_proportionality,
    check_time_step,
    check_uniform_acceptance,
    check_stationarity,
)


def run_all(checks=ALL_CHECKS) -> list[Check]:
    out = []
    for fn in checks:
        t0 = time.perf_counter()
        try:
            c = fn()
        except Exception as exc:  # a crashing check is a failing check
            c = Check(fn.__name__.removeprefix("check_"), False, f"error: {exc!r}")
        c.seconds = time.perf_counter() - t0
        out.append(c)
    return out


def format_table(results: list[Check]) -> str:
    width = max(len(c.name) for c in results)
    lines = [f"{'check':<{width}}  result  seconds  detail"]
    for c in results:
        lines.append(f"{c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  {c.seconds:7.2f}  {c.detail}")
    return "\n".join(lines)
