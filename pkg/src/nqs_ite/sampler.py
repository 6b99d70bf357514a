"""Metropolis-Hastings sampling of ``|psi(s)|^2`` with neighbor spin exchanges.

All walkers advance in lock step; walker ``k`` draws from its own
counter-based stream, so a run is reproducible for a fixed seed regardless
of how the batch is partitioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nqs_ite import rng as rng_mod
from nqs_ite.hilbert import fisher_yates_configs


@dataclass
class WalkerEnsemble:
    configs: np.ndarray
    streams: rng_mod.StreamSet
    bonds: np.ndarray
    accepted: int = 0
    proposed: int = 0

    def __post_init__(self):
        self.bonds = np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)
        one = np.uint64(1)
        self._masks = (one << self.bonds[:, 0].astype(np.uint64)) | (one << self.bonds[:, 1].astype(np.uint64))

    @property
    def n_walkers(self) -> int:
        return len(self.configs)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def reset_counters(self) -> None:
        self.accepted = self.proposed = 0


def init_ensemble(n_walkers: int, n_sites: int, n_up: int, bonds, seed: int,
                  purpose: int = rng_mod.WALKERS) -> WalkerEnsemble:
    """Walkers started from independent uniform fixed-magnetization configurations."""
    streams = rng_mod.StreamSet(seed, purpose, n_walkers)
    configs = fisher_yates_configs(streams.uniform(n_up), n_sites, n_up)
    return WalkerEnsemble(configs, streams, bonds)


def metropolis_step(wf, ensemble: WalkerEnsemble, log_rho=None) -> np.ndarray:
    """One proposal per walker; returns the walkers' updated ``log_rho``.

    A bond is picked uniformly from the neighbor table and its two spins are
    exchanged. Aligned pairs give ``s' = s`` and count as accepted.
    """
    x = ensemble.configs
    if log_rho is None:
        log_rho = wf.evaluate(x)[0]
    u = ensemble.streams.uniform(2)
    n_bonds = len(ensemble.bonds)
    pick = np.minimum((u[:, 0] * n_bonds).astype(np.int64), n_bonds - 1)
    one = np.uint64(1)
    bi = (x >> ensemble.bonds[pick, 0].astype(np.uint64)) & one
    bj = (x >> ensemble.bonds[pick, 1].astype(np.uint64)) & one
    moving = np.flatnonzero(bi != bj)
    accept = np.ones(len(x), dtype=bool)
    new_lr = log_rho.copy()
    if len(moving):
        cand = x[moving] ^ ensemble._masks[pick[moving]]
        lr_c = wf.evaluate(cand)[0]
        ok = u[moving, 1] <= np.exp(2.0 * (lr_c - log_rho[moving]))
        accept[moving] = ok
        hit = moving[ok]
        x[hit] = cand[ok]
        new_lr[hit] = lr_c[ok]
    ensemble.accepted += int(accept.sum())
    ensemble.proposed += len(x)
    return new_lr


def warmup(wf, ensemble: WalkerEnsemble, n_warmup: int) -> WalkerEnsemble:
    log_rho = None
    for _ in range(n_warmup):
        log_rho = metropolis_step(wf, ensemble, log_rho)
    return ensemble


def sample_batch(wf, ensemble: WalkerEnsemble, n_skip: int) -> np.ndarray:
    """Advance every walker ``n_skip`` steps and return a copy of their states."""
    log_rho = None
    for _ in range(n_skip):
        log_rho = metropolis_step(wf, ensemble, log_rho)
    return ensemble.configs.copy()


def sample_many(wf, ensemble: WalkerEnsemble, n_samples: int, n_skip: int) -> np.ndarray:
    """At least ``n_samples`` retained states from repeated :func:`sample_batch` calls, truncated."""
    rounds = -(-n_samples // ensemble.n_walkers)
    out = [sample_batch(wf, ensemble, n_skip) for _ in range(rounds)]
    return np.concatenate(out)[:n_samples]
