"""Local energies, energy moments and loss gradients.

Every estimator works on a :class:`Batch`: configurations with weights that
sum to one. A Monte Carlo batch carries uniform weights ``1/n``; an
exact-sum batch is the whole sector weighted by ``|psi|^2 / sum |psi|^2``,
which turns every sample mean into the exact expectation value.

Gradients are returned as real vectors over the parameters. With
``D(s) = d/dtheta log psi*(s) = dlog_rho - 1j * dphi`` and complex per-sample
coefficients ``c``, ``2 Re sum c D`` is one backward pass with cotangents
``2 Re c`` on ``log_rho`` and ``2 Im c`` on ``phi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nqs_ite.hamiltonian import Heisenberg
from nqs_ite.hilbert import SectorIndex
from nqs_ite.parallel import batch_mean, batch_sum


@dataclass
class Batch:
    configs: np.ndarray
    weights: np.ndarray
    log_rho: np.ndarray
    phi: np.ndarray
    h_loc: np.ndarray
    cache: list | None = None
    exact: bool = False

    def __len__(self) -> int:
        return len(self.configs)

    def mean(self, values):
        return batch_mean(values, self.weights)


@dataclass
class EnergyMoments:
    e1: float
    e2: float
    e3: float
    sigma2: float
    sigma_e: float
    n_samples: int
    e3_mode: str
    e1_imag: float = 0.0


def local_energies(wf, ham: Heisenberg, configs, log_rho=None, phi=None) -> np.ndarray:
    """``H_loc(s) = sum_s' H_ss' psi(s') / psi(s)`` for a batch.

    The wavefunction is evaluated once per distinct connected configuration.
    """
    configs = np.asarray(configs, dtype=np.uint64).reshape(-1)
    if log_rho is None:
        log_rho, phi = wf.evaluate(configs)
    diag, targets, elements, anti = ham.connected_batch(configs)
    rows, cols = np.nonzero(anti)
    uniq, inverse = np.unique(targets[rows, cols], return_inverse=True)
    lr_t, ph_t = wf.evaluate(uniq) if len(uniq) else (np.zeros(0), np.zeros(0))
    terms = np.zeros(targets.shape, dtype=np.complex128)
    terms[rows, cols] = elements[rows, cols] * np.exp(
        (lr_t[inverse] - log_rho[rows]) + 1j * (ph_t[inverse] - phi[rows])
    )
    return diag + terms.sum(axis=1)


def local_energy(wf, ham: Heisenberg, s: int) -> complex:
    row = ham.connected(s)
    lr, ph = wf.evaluate(np.array([s], dtype=np.uint64))
    value = complex(row.diagonal)
    if row.off_diag:
        targets = np.array([t for t, _ in row.off_diag], dtype=np.uint64)
        amps = np.array([a for _, a in row.off_diag])
        lr_t, ph_t = wf.evaluate(targets)
        value += complex(np.sum(amps * np.exp((lr_t - lr[0]) + 1j * (ph_t - ph[0]))))
    return value


def local_energy_sq(wf, ham: Heisenberg, s: int) -> complex:
    """``(H^2)_loc(s) = (1/psi(s)) sum_s'' H_ss'' sum_s' H_s''s' psi(s')``.

    The inner sum is ``H_loc(s'') psi(s'')``, so each intermediate state costs
    one row of local energies: quadratic in system size.
    """
    row = ham.connected(s)
    nodes = np.array([s] + [t for t, _ in row.off_diag], dtype=np.uint64)
    amps = np.array([row.diagonal] + [a for _, a in row.off_diag])
    lr, ph = wf.evaluate(nodes)
    inner = local_energies(wf, ham, nodes, lr, ph)
    ratio = np.exp((lr - lr[0]) + 1j * (ph - ph[0]))
    return complex(np.sum(amps * inner * ratio))


def sampled_batch(wf, ham: Heisenberg, configs, keep_cache: bool = False) -> Batch:
    configs = np.asarray(configs, dtype=np.uint64).reshape(-1)
    if keep_cache:
        log_rho, phi, cache = wf.forward(configs, keep_cache=True)
    else:
        (log_rho, phi), cache = wf.evaluate(configs), None
    h_loc = local_energies(wf, ham, configs, log_rho, phi)
    weights = np.full(len(configs), 1.0 / len(configs))
    return Batch(configs, weights, log_rho, phi, h_loc, cache)


class ExactSum:
    """Full enumeration of a sector: exact expectation values in place of sampling."""

    def __init__(self, ham: Heisenberg, sector: SectorIndex):
        self.ham = ham
        self.sector = sector
        self.matrix = ham.sparse_matrix(sector)

    @property
    def configs(self) -> np.ndarray:
        return self.sector.configs

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v)
        if np.iscomplexobj(v):
            return self.matrix @ v.real + 1j * (self.matrix @ v.imag)
        return self.matrix @ v

    @staticmethod
    def amplitudes(log_rho, phi) -> np.ndarray:
        """``psi`` over the sector up to one global positive factor."""
        return np.exp((log_rho - np.max(log_rho)) + 1j * phi)

    def batch(self, wf, keep_cache: bool = False) -> Batch:
        if keep_cache:
            log_rho, phi, cache = wf.forward(self.configs, keep_cache=True)
        else:
            (log_rho, phi), cache = wf.evaluate(self.configs), None
        psi = self.amplitudes(log_rho, phi)
        prob = np.abs(psi) ** 2
        prob /= batch_sum(prob)
        h_loc = self.apply(psi) / psi
        return Batch(self.configs, prob, log_rho, phi, h_loc, cache, exact=True)

    def local_energy_sq(self, batch: Batch) -> np.ndarray:
        psi = self.amplitudes(batch.log_rho, batch.phi)
        return self.apply(self.apply(psi)) / psi

    def probabilities(self, wf) -> np.ndarray:
        log_rho, _ = wf.evaluate(self.configs)
        prob = np.exp(2.0 * (log_rho - np.max(log_rho)))
        return prob / batch_sum(prob)


def exact_weights(wf, sector: SectorIndex) -> np.ndarray:
    """``|psi(s)|^2 / sum |psi|^2`` by enumeration."""
    if len(sector) > 5_000_000:
        raise ValueError(f"sector of size {len(sector)} is too large for exact weights")
    log_rho, _ = wf.evaluate(sector.configs)
    prob = np.exp(2.0 * (log_rho - np.max(log_rho)))
    return prob / batch_sum(prob)


def _sigma_e(values: np.ndarray, n_chains: int | None) -> float:
    """Standard error of the mean of ``values``.

    With ``n_chains`` the samples are taken as round-major output of that many
    independent Markov chains (sample ``i`` from chain ``i % n_chains``), and the
    error comes from the spread of the per-chain means, which stays honest when
    consecutive samples of a chain are correlated. A trailing partial round is
    left out of the error estimate.
    """
    n = len(values)
    if n < 2:
        return 0.0
    if n_chains and n_chains > 1:
        rounds = n // n_chains
        if rounds < 1:
            raise ValueError("fewer samples than chains")
        chain_means = values[: rounds * n_chains].reshape(rounds, n_chains).mean(axis=0)
        return float(np.sqrt(np.var(chain_means, ddof=1) / n_chains))
    mean = batch_sum(values) / n
    return float(np.sqrt(batch_sum((values - mean) ** 2) / (n - 1) / n))


def moments_from_batch(batch: Batch, e3_mode: str = "approximate", h2_loc=None,
                       n_chains: int | None = None) -> EnergyMoments:
    """Energy moments from local energies.

    ``e3_mode='exact'`` uses ``Re <H_loc* (H^2)_loc>`` and needs ``h2_loc``;
    ``'approximate'`` uses ``Re <H_loc |H_loc|^2>`` (linear cost).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    h = batch.h_loc
    mean_h = batch.mean(h)
    e1 = float(mean_h.real)
    e2 = float(batch.mean(np.abs(h) ** 2))
    if e3_mode == "exact":
        if h2_loc is None:
            raise ValueError("exact third moment needs (H^2)_loc values")
        e3 = float(batch.mean(np.conj(h) * h2_loc).real)
    elif e3_mode == "approximate":
        e3 = float(batch.mean(h * np.abs(h) ** 2).real)
    else:
        raise ValueError(f"unknown e3_mode {e3_mode!r}")
    sigma_e = 0.0 if batch.exact else _sigma_e(h.real, n_chains)
    return EnergyMoments(e1, e2, e3, e2 - e1 * e1, sigma_e, len(batch), e3_mode, float(mean_h.imag))


def energy_moments(wf, ham: Heisenberg, samples=None, exact: ExactSum | None = None,
                   e3_mode: str = "approximate", n_chains: int | None = None) -> EnergyMoments:
    """Moments from Monte Carlo ``samples`` or, with ``exact``, from full enumeration."""
    if exact is not None:
        batch = exact.batch(wf)
        h2 = exact.local_energy_sq(batch) if e3_mode == "exact" else None
    else:
        if samples is None or len(samples) == 0:
            raise ValueError("empty batch")
        batch = sampled_batch(wf, ham, samples)
        h2 = None
        if e3_mode == "exact":
            h2 = np.array([local_energy_sq(wf, ham, int(s)) for s in batch.configs])
    return moments_from_batch(batch, e3_mode, h2, n_chains)


# ---------------------------------------------------------------- losses


def target_ratio(batch: Batch, fixed_log_rho, fixed_phi, fixed_h_loc, delta_tau: float) -> np.ndarray:
    """``psi_T(s)/psi(s) = (psi_fixed(s)/psi(s)) (1 - dtau H_loc^fixed(s))``, in log space."""
    cross = np.exp((fixed_log_rho - batch.log_rho) + 1j * (fixed_phi - batch.phi))
    return cross * (1.0 - delta_tau * fixed_h_loc)


def ite_grad_from_ratio(net, batch: Batch, ratio: np.ndarray) -> np.ndarray:
    """``2 Re{<D> - <r D>/<r>}`` for target ratios ``r``."""
    coeff = batch.weights * (1.0 - ratio / batch.mean(ratio))
    return net.vjp(batch.configs, 2.0 * coeff.real, 2.0 * coeff.imag, batch.cache)


def e_grad_from_batch(net, batch: Batch) -> np.ndarray:
    """``2 Re{<H_loc D> - <H_loc><D>}``."""
    coeff = batch.weights * (batch.h_loc - batch.mean(batch.h_loc))
    return net.vjp(batch.configs, 2.0 * coeff.real, 2.0 * coeff.imag, batch.cache)


def ite_loss_estimate(batch: Batch, ratio: np.ndarray) -> float:
    """Overlap loss from samples: ``-log(|<r>|^2 / <|r|^2>)``."""
    return float(-np.log(np.abs(batch.mean(ratio)) ** 2 / batch.mean(np.abs(ratio) ** 2)))


def ite_loss_grad(net, fixed_net, delta_tau: float, configs, ham: Heisenberg) -> np.ndarray:
    """Monte Carlo gradient of the overlap loss on ``configs`` sampled from ``|psi|^2``."""
    batch = sampled_batch(net, ham, configs, keep_cache=True)
    f_lr, f_ph = fixed_net.evaluate(batch.configs)
    f_h = local_energies(fixed_net, ham, batch.configs, f_lr, f_ph)
    return ite_grad_from_ratio(net, batch, target_ratio(batch, f_lr, f_ph, f_h, delta_tau))


def ite_loss_grad_exact(net, fixed_net, delta_tau: float, exact: ExactSum) -> np.ndarray:
    batch = exact.batch(net, keep_cache=True)
    fixed = exact.batch(fixed_net)
    ratio = target_ratio(batch, fixed.log_rho, fixed.phi, fixed.h_loc, delta_tau)
    return ite_grad_from_ratio(net, batch, ratio)


def e_loss_grad(net, configs, ham: Heisenberg) -> np.ndarray:
    return e_grad_from_batch(net, sampled_batch(net, ham, configs, keep_cache=True))


def e_loss_grad_exact(net, exact: ExactSum) -> np.ndarray:
    return e_grad_from_batch(net, exact.batch(net, keep_cache=True))


def target_table(fixed_net, exact: ExactSum, delta_tau: float) -> np.ndarray:
    """``psi_T = psi_fixed - dtau H psi_fixed`` over the sector (global scale arbitrary)."""
    log_rho, phi = fixed_net.evaluate(exact.configs)
    psi = exact.amplitudes(log_rho, phi)
    return psi - delta_tau * exact.apply(psi)


def ite_loss_exact(wf, table, exact: ExactSum) -> float:
    """``-log(|<psi|psi_T>|^2 / (<psi|psi><psi_T|psi_T>))``; ``inf`` for orthogonal states."""
    table = np.asarray(table, dtype=np.complex128)
    norm_t = float(np.vdot(table, table).real)
    if norm_t == 0.0:
        raise ValueError("target wavefunction has zero norm")
    log_rho, phi = wf.evaluate(exact.configs)
    psi = exact.amplitudes(log_rho, phi)
    overlap = abs(np.vdot(psi, table)) ** 2 / (float(np.vdot(psi, psi).real) * norm_t)
    if overlap == 0.0:
        return float("inf")
    return float(-np.log(min(overlap, 1.0)))
