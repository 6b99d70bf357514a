"""Fixed-target imaginary-time-evolution training and the energy-loss baseline.

Training is split into epochs. At the start of an epoch the energy moments
of the current network are estimated, the time step minimizing the energy
of the Euler target ``(1 - dtau H) psi`` is chosen, the network is frozen
as the target generator and the energy threshold ``<E> - sigma_E`` is set.
Optimizer steps on the overlap loss follow until a running energy estimate
falls below the threshold (or a per-epoch step cap is hit).

The loop is a state machine over :class:`TrainState` so that a run can be
checkpointed after any step and resumed bit for bit.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from nqs_ite import estimators as est
from nqs_ite import rng as rng_mod
from nqs_ite import sampler as smp
from nqs_ite.hamiltonian import Heisenberg
from nqs_ite.hilbert import enumerate_sector
from nqs_ite.model import Architecture, NqsNetwork, init_params
from nqs_ite.runlog import RunLog

log = logging.getLogger(__name__)

LOSS_KINDS = ("ite", "e_loss")
MODES = ("mcmc", "exact")
# Largest time step, in units of 1 / sigma.
DTAU_CAP_SIGMA = 10.0


class Degenerate(Exception):
    """Energy variance vanished: the state is an eigenstate to working precision."""


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 500_000
    batch_size: int = 256
    n_skip: int = 4
    n_warmup: int | None = None
    alpha_0: float = 1e-3
    alpha_f: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_energy_samples: int = 100_000
    n_final_samples: int = 1_000_000
    ema_decay: float = 0.99
    loss_kind: str = "ite"
    mode: str = "mcmc"
    e3_mode: str = "approximate"
    max_epoch_steps: int = 1000
    degeneracy_tol: float = 1e-12
    dtau_cap_sigma: float = DTAU_CAP_SIGMA
    seed: int = 0

    def __post_init__(self):
        if not self.alpha_0 >= self.alpha_f > 0:
            raise ValueError("learning rates must satisfy alpha_0 >= alpha_f > 0")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.e3_mode not in ("approximate", "exact"):
            raise ValueError(f"e3_mode must be 'approximate' or 'exact', got {self.e3_mode!r}")
        if not self.dtau_cap_sigma > 0:
            raise ValueError("dtau_cap_sigma must be positive")
        for name in ("total_steps", "batch_size", "n_skip", "n_energy_samples", "n_final_samples", "max_epoch_steps"):
            if getattr(self, name) < 0 or (name != "total_steps" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if self.mode == "mcmc" and min(self.n_energy_samples, self.n_final_samples) < 2 * self.batch_size:
            raise ValueError("energy sample counts must cover at least two rounds of the walker ensemble")

    def warmup_steps(self, d_lat: int) -> int:
        return 10 * d_lat * d_lat if self.n_warmup is None else self.n_warmup


# ----------------------------------------------------------------- time step


def target_energy(m: est.EnergyMoments, delta_tau: float) -> float:
    """Energy of ``(1 - dtau H) psi`` from the first three moments."""
    denom = 1.0 - 2.0 * delta_tau * m.e1 + delta_tau**2 * m.e2
    if not denom > 0:
        raise ValueError(f"non-positive target norm {denom!r}: inconsistent moments")
    return (m.e1 - 2.0 * delta_tau * m.e2 + delta_tau**2 * m.e3) / denom


def optimal_time_step(m: est.EnergyMoments, tol: float = 1e-12, fallback: float | None = None,
                      cap_sigma: float = DTAU_CAP_SIGMA) -> float:
    """Positive time step with the lowest target energy.

    Stationary points solve ``A dtau^2 - B dtau - sigma^2 = 0`` with
    ``A = <E^2>^2 - <E><E^3>`` and ``B = <E><E^2> - <E^3>``. Since the slope
    at zero is ``-2 sigma^2``, a target energy with no positive stationary
    point keeps falling with ``dtau``; the cap ``cap_sigma / sigma`` is
    therefore evaluated alongside the roots. ``fallback`` is returned only
    when no candidate gives a valid target norm.
    """
    if not all(map(math.isfinite, (m.e1, m.e2, m.e3))):
        raise ValueError("moments must be finite")
    sigma2 = m.e2 - m.e1 * m.e1
    if sigma2 <= tol * max(1.0, m.e1 * m.e1):
        raise Degenerate(f"energy variance {sigma2:.3e} below tolerance")
    a = m.e2 * m.e2 - m.e1 * m.e3
    b = m.e1 * m.e2 - m.e3
    if abs(a) > 1e-14 * max(1.0, m.e2 * m.e2):
        disc = b * b + 4.0 * a * sigma2
        roots = [] if disc < 0 else [(b + s * math.sqrt(disc)) / (2.0 * a) for s in (1.0, -1.0)]
    else:
        roots = [-sigma2 / b] if b != 0 else []
    cap = cap_sigma / math.sqrt(sigma2)
    candidates = [r for r in roots if math.isfinite(r) and 0 < r < cap] + [cap]
    best, best_e = None, math.inf
    for r in candidates:
        try:
            e = target_energy(m, r)
        except ValueError:
            continue
        if e < best_e:
            best, best_e = r, e
    if best is None:
        if fallback is None:
            raise ValueError("no positive time step gives a valid target")
        return fallback
    return best


# ----------------------------------------------------------------- optimizer


def learning_rate(step: int, cfg: TrainConfig) -> float:
    if cfg.total_steps == 0:
        return cfg.alpha_0
    return cfg.alpha_0 * (cfg.alpha_f / cfg.alpha_0) ** (step / cfg.total_steps)


def adam_step(params, m, v, t: int, grad, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected ADAM update for step ``t`` (1-based); updates arrays in place."""
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# ----------------------------------------------------------------- state


@dataclass
class TrainState:
    net: NqsNetwork
    adam_m: np.ndarray
    adam_v: np.ndarray
    fixed_net: NqsNetwork | None = None
    ensemble: smp.WalkerEnsemble | None = None
    step: int = 0
    epoch: int = 0
    epoch_start_step: int = 0
    steps_in_epoch: int = 0
    epoch_open: bool = False
    warmed: bool = False
    converged: bool = False
    delta_tau: float = math.nan
    e_threshold: float = math.nan
    ema_energy: float = math.nan
    moments: dict = field(default_factory=dict)

    SCALARS = ("step", "epoch", "epoch_start_step", "steps_in_epoch", "epoch_open", "warmed",
               "converged", "delta_tau", "e_threshold", "ema_energy", "moments")

    def scalars(self) -> dict:
        return {k: getattr(self, k) for k in self.SCALARS}


class Trainer:
    def __init__(self, ham: Heisenberg, config: TrainConfig, state: TrainState,
                 exact: est.ExactSum | None = None, runlog: RunLog | None = None):
        self.ham = ham
        self.cfg = config
        self.state = state
        self.log = runlog if runlog is not None else RunLog()
        n = ham.n_sites
        self.d_lat = int(round(math.sqrt(n)))
        if config.mode == "exact" and exact is None:
            exact = est.ExactSum(ham, enumerate_sector(n, n // 2))
        self.exact = exact
        self._fixed_tables = None

    @classmethod
    def create(cls, ham: Heisenberg, arch: Architecture, config: TrainConfig, net=None, **kw) -> "Trainer":
        if net is None:
            net = init_params(arch, rng_mod.derive_key(config.seed, rng_mod.INIT))
        n_par = len(getattr(net, "params", ()))
        state = TrainState(net=net, adam_m=np.zeros(n_par), adam_v=np.zeros(n_par))
        if config.mode == "mcmc":
            n = ham.n_sites
            state.ensemble = smp.init_ensemble(
                config.batch_size, n, n // 2, ham.lattice.nn_bonds, config.seed
            )
        return cls(ham, config, state, **kw)

    # -------------------------------------------------------------- epochs

    def _moments(self, net, batch=None) -> tuple[est.EnergyMoments, est.Batch]:
        cfg, st = self.cfg, self.state
        if self.exact is not None:
            if batch is None:
                batch = self.exact.batch(net)
            h2 = self.exact.local_energy_sq(batch) if cfg.e3_mode == "exact" else None
            return est.moments_from_batch(batch, cfg.e3_mode, h2), batch
        smp.warmup(net, st.ensemble, cfg.warmup_steps(self.d_lat))
        st.warmed = True
        samples = smp.sample_many(net, st.ensemble, cfg.n_energy_samples, cfg.n_skip)
        batch = est.sampled_batch(net, self.ham, samples)
        h2 = None
        if cfg.e3_mode == "exact":
            h2 = np.array([est.local_energy_sq(net, self.ham, int(s)) for s in samples])
        return est.moments_from_batch(batch, cfg.e3_mode, h2, st.ensemble.n_walkers), batch

    def start_epoch(self, batch: est.Batch | None = None) -> None:
        """Open a new epoch; ``batch`` may supply an exact-sum pass of the live net."""
        st, cfg = self.state, self.cfg
        m, batch = self._moments(st.net, batch)
        st.epoch += 1
        st.epoch_start_step = st.step
        st.steps_in_epoch = 0
        st.moments = {"e_mean": m.e1, "sigma_e": m.sigma_e, "e2": m.e2, "e3": m.e3}
        fallback = st.delta_tau if math.isfinite(st.delta_tau) else None
        try:
            dt = optimal_time_step(m, cfg.degeneracy_tol, fallback, cfg.dtau_cap_sigma)
        except Degenerate:
            st.converged = True
            self._close_epoch("degenerate", math.nan, math.nan)
            log.info("epoch %d: energy variance vanished, converged at E=%.12g", st.epoch, m.e1)
            return
        except ValueError:
            dt = 1.0 / math.sqrt(m.sigma2)
        st.delta_tau = dt
        st.e_threshold = m.e1 - m.sigma_e
        st.ema_energy = m.e1
        st.fixed_net = st.net.copy()
        st.epoch_open = True
        self._fixed_tables = None
        if self.exact is not None:
            self._fixed_tables = (batch.log_rho, batch.phi, batch.h_loc)
        log.debug("epoch %d: E=%.10g sigma_E=%.3g dtau=%.5g", st.epoch, m.e1, m.sigma_e, dt)

    def _close_epoch(self, status: str, delta_tau=None, threshold=None) -> None:
        st = self.state
        self.log.add_epoch(
            epoch=st.epoch,
            start_step=st.epoch_start_step,
            delta_tau=st.delta_tau if delta_tau is None else delta_tau,
            e_mean=st.moments["e_mean"],
            sigma_e=st.moments["sigma_e"],
            e2=st.moments["e2"],
            e3=st.moments["e3"],
            e_threshold=st.e_threshold if threshold is None else threshold,
            steps_in_epoch=st.steps_in_epoch,
            status=status,
        )
        st.epoch_open = False

    def _fixed_values(self, configs):
        if self.exact is not None:
            if self._fixed_tables is None:
                b = self.exact.batch(self.state.fixed_net)
                self._fixed_tables = (b.log_rho, b.phi, b.h_loc)
            return self._fixed_tables
        fixed = self.state.fixed_net
        lr, ph = fixed.evaluate(configs)
        return lr, ph, est.local_energies(fixed, self.ham, configs, lr, ph)

    # -------------------------------------------------------------- steps

    def _batch(self):
        st, cfg = self.state, self.cfg
        if self.exact is not None:
            return self.exact.batch(st.net, keep_cache=True), math.nan
        if not st.warmed:
            smp.warmup(st.net, st.ensemble, cfg.warmup_steps(self.d_lat))
            st.warmed = True
        st.ensemble.reset_counters()
        configs = smp.sample_batch(st.net, st.ensemble, cfg.n_skip)
        return est.sampled_batch(st.net, self.ham, configs, keep_cache=True), st.ensemble.acceptance_rate

    def _update_energy(self, batch) -> float:
        st = self.state
        e = float(batch.mean(batch.h_loc).real)
        if batch.exact or not math.isfinite(st.ema_energy):
            st.ema_energy = e
        else:
            st.ema_energy = self.cfg.ema_decay * st.ema_energy + (1.0 - self.cfg.ema_decay) * e
        return e

    def _apply(self, grad, loss, acceptance, t0) -> None:
        st, cfg = self.state, self.cfg
        lr = learning_rate(st.step, cfg)
        adam_step(st.net.params, st.adam_m, st.adam_v, st.step + 1, grad, lr, cfg.beta1, cfg.beta2, cfg.eps)
        if not np.all(np.isfinite(st.net.params)):
            raise TrainingError(f"non-finite parameters after step {st.step + 1}")
        st.step += 1
        st.steps_in_epoch += 1
        self.log.add_step(
            step=st.step,
            epoch=st.epoch,
            lr=lr,
            delta_tau=st.delta_tau if cfg.loss_kind == "ite" else math.nan,
            ema_energy=st.ema_energy,
            loss=loss,
            acceptance=acceptance,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )

    def step_ite(self) -> None:
        st, cfg = self.state, self.cfg
        t0 = time.perf_counter()
        if self.exact is not None:
            # One exact pass serves the threshold test and, if the epoch ends, the next epoch's moments.
            batch, acceptance = self._batch()
            if st.epoch_open:
                self._update_energy(batch)
                if st.ema_energy < st.e_threshold:
                    self._close_epoch("threshold")
            if not st.epoch_open:
                self.start_epoch(batch)
                if st.converged:
                    return
        else:
            if not st.epoch_open:
                self.start_epoch()
                if st.converged:
                    return
            batch, acceptance = self._batch()
            self._update_energy(batch)
            if st.ema_energy < st.e_threshold:
                self._close_epoch("threshold")
                return
        f_lr, f_ph, f_h = self._fixed_values(batch.configs)
        ratio = est.target_ratio(batch, f_lr, f_ph, f_h, st.delta_tau)
        grad = est.ite_grad_from_ratio(st.net, batch, ratio)
        self._apply(grad, est.ite_loss_estimate(batch, ratio), acceptance, t0)
        if st.steps_in_epoch >= cfg.max_epoch_steps and st.step < cfg.total_steps:
            log.warning("epoch %d stalled after %d steps", st.epoch, st.steps_in_epoch)
            self._close_epoch("stall")

    def step_e_loss(self) -> None:
        t0 = time.perf_counter()
        batch, acceptance = self._batch()
        e = self._update_energy(batch)
        grad = est.e_grad_from_batch(self.state.net, batch)
        self._apply(grad, e, acceptance, t0)

    def run(self, n_steps: int | None = None) -> "Trainer":
        """Advance until ``total_steps``, convergence, or ``n_steps`` more optimizer steps."""
        st, cfg = self.state, self.cfg
        stop = cfg.total_steps if n_steps is None else min(cfg.total_steps, st.step + n_steps)
        step_fn = self.step_ite if cfg.loss_kind == "ite" else self.step_e_loss
        while st.step < stop and not st.converged:
            step_fn()
        if st.step >= cfg.total_steps and st.epoch_open:
            self._close_epoch("open")
        return self

    # -------------------------------------------------------------- results

    def final_energy(self) -> tuple[float, float]:
        """``(E, sigma_E)`` of the live network; exact when an exact sum is attached."""
        cfg, net = self.cfg, self.state.net
        if self.exact is not None:
            b = self.exact.batch(net)
            return float(b.mean(b.h_loc).real), 0.0
        n = self.ham.n_sites
        ens = smp.init_ensemble(cfg.batch_size, n, n // 2, self.ham.lattice.nn_bonds, cfg.seed, rng_mod.FINAL)
        smp.warmup(net, ens, cfg.warmup_steps(self.d_lat))
        samples = smp.sample_many(net, ens, cfg.n_final_samples, cfg.n_skip)
        m = est.moments_from_batch(est.sampled_batch(net, self.ham, samples), n_chains=ens.n_walkers)
        return m.e1, m.sigma_e


def train(ham: Heisenberg, arch: Architecture, config: TrainConfig, net=None,
          exact: est.ExactSum | None = None) -> tuple[NqsNetwork, RunLog]:
    """Run a full training from a fresh (or given) network."""
    trainer = Trainer.create(ham, arch, config, net=net, exact=exact)
    trainer.run()
    return trainer.state.net, trainer.log
