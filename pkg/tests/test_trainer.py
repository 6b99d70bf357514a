import math

import numpy as np
import pytest

from nqs_ite import estimators as est
from nqs_ite.estimators import EnergyMoments
from nqs_ite.model import Architecture, TabulatedState, init_params
from nqs_ite.trainer import (
    Degenerate,
    TrainConfig,
    Trainer,
    TrainingError,
    adam_step,
    learning_rate,
    optimal_time_step,
    target_energy,
    train,
)


def _moments(e1, e2, e3):
    return EnergyMoments(e1, e2, e3, e2 - e1 * e1, 0.0, 1, "exact")


def test_target_energy_limits():
    m = _moments(-2.0, 5.0, -13.0)
    assert target_energy(m, 0.0) == -2.0
    eig = _moments(-3.0, 9.0, -27.0)
    for dt in (0.01, 0.3, 2.0):
        assert target_energy(eig, dt) == pytest.approx(-3.0, rel=1e-14)
    with pytest.raises(ValueError):
        target_energy(_moments(1.0, 0.5, 0.0), 1.0)


def test_eigenstate_is_degenerate():
    with pytest.raises(Degenerate):
        optimal_time_step(_moments(-3.0, 9.0, -27.0))


def test_time_step_two_level_system():
    # two levels at -1 and +1, equal weight: (1 - dt H) with dt = 1 kills the upper level
    m = _moments(0.0, 1.0, 0.0)
    dt = optimal_time_step(m)
    assert dt == pytest.approx(1.0, rel=1e-12)
    assert target_energy(m, dt) == pytest.approx(-1.0, rel=1e-12)


def test_time_step_beats_grid(ham4, exact4):
    for k in range(5):
        wf = init_params(Architecture(d_lat=4, width=8, depth=1), 50 + k, scale=1.5)
        m = est.energy_moments(wf, ham4, exact=exact4, e3_mode="exact")
        dt = optimal_time_step(m)
        assert dt > 0
        grid = np.linspace(1e-4, 2 / math.sqrt(m.sigma2), 2000)
        assert target_energy(m, dt) <= min(target_energy(m, g) for g in grid) + 1e-12


def test_time_step_cap_when_monotone():
    # no positive stationary point: the energy keeps falling and the cap is returned
    m = _moments(-1.0, 2.0, -4.5)
    dt = optimal_time_step(m, cap_sigma=10.0)
    assert dt == pytest.approx(10.0, rel=1e-12)


def test_learning_rate_schedule():
    cfg = TrainConfig(total_steps=1000)
    assert learning_rate(0, cfg) == 1e-3
    assert learning_rate(1000, cfg) == pytest.approx(1e-5, rel=1e-12)
    assert learning_rate(500, cfg) == pytest.approx(1e-4, rel=1e-12)


def test_adam_first_step_and_zero_grad():
    p = np.zeros(3)
    m, v = np.zeros(3), np.zeros(3)
    adam_step(p, m, v, 1, np.array([2.0, -0.5, 0.0]), 0.1)
    np.testing.assert_allclose(p, [-0.1, 0.1, 0.0], rtol=1e-6)
    q = np.ones(2)
    adam_step(q, np.zeros(2), np.zeros(2), 1, np.zeros(2), 0.1)
    np.testing.assert_array_equal(q, 1.0)
    with pytest.raises(TrainingError):
        adam_step(q, np.zeros(2), np.zeros(2), 1, np.array([np.nan, 0.0]), 0.1)


@pytest.mark.parametrize("kw", [dict(alpha_0=1e-5, alpha_f=1e-3), dict(ema_decay=1.0), dict(loss_kind="sr"),
                                dict(mode="gpu"), dict(batch_size=0), dict(e3_mode="x")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_warmup_default():
    assert TrainConfig().warmup_steps(6) == 360


def test_zero_steps_returns_initial_net(ham4):
    arch = Architecture(d_lat=4, width=8, depth=1)
    net0 = init_params(arch, 1)
    net, log = train(ham4, arch, TrainConfig(total_steps=0, mode="exact"), net=net0.copy())
    np.testing.assert_array_equal(net.params, net0.params)
    assert log.steps == [] and log.epochs == []


def test_eigenstate_init_converges_immediately(ham4, sector4, ed4, exact4):
    wf = TabulatedState.from_amplitudes(sector4, ed4.vector)
    tr = Trainer.create(ham4, None, TrainConfig(total_steps=10, mode="exact"), net=wf, exact=exact4)
    tr.run()
    assert tr.state.converged and tr.state.step == 0
    assert tr.log.epochs[-1]["status"] == "degenerate"


def _exact_trainer(ham4, exact4, steps=40, **kw):
    cfg = TrainConfig(total_steps=steps, mode="exact", seed=3, **kw)
    return Trainer.create(ham4, Architecture(d_lat=4, width=16, depth=1), cfg, exact=exact4)


def test_exact_epoch_energies_decrease(ham4, exact4, ed4):
    tr = _exact_trainer(ham4, exact4).run()
    e = [r["e_mean"] for r in tr.log.epochs]
    assert len(e) > 5
    assert all(b < a for a, b in zip(e, e[1:]))
    assert min(e) >= ed4.e0 - 1e-9
    assert all(r["delta_tau"] > 0 for r in tr.log.epochs)


def test_fixed_net_constant_within_epoch(ham4, lattice4):
    cfg = TrainConfig(total_steps=12, batch_size=32, n_energy_samples=256, max_epoch_steps=4, seed=2)
    tr = Trainer.create(ham4, Architecture(d_lat=4, width=8, depth=1), cfg)
    seen = {}
    while tr.state.step < cfg.total_steps:
        tr.step_ite()
        if tr.state.epoch_open:
            key = tr.state.epoch
            digest = tr.state.fixed_net.params.tobytes()
            assert seen.setdefault(key, digest) == digest


def test_e_loss_matches_refreshed_ite_direction(ham4, exact4):
    # target refreshed every step (exact mode, one step epochs) gives E-loss directions
    net = init_params(Architecture(d_lat=4, width=8, depth=1), 9)
    g_e = est.e_loss_grad_exact(net, exact4)
    g_i = est.ite_loss_grad_exact(net, net, 0.01, exact4)
    cos = g_e @ g_i / np.linalg.norm(g_e) / np.linalg.norm(g_i)
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_runlog_records(ham4, exact4):
    tr = _exact_trainer(ham4, exact4, steps=10).run()
    steps = tr.log.column("step")
    assert steps == list(range(1, 11))
    assert tr.log.steps[0]["lr"] == 1e-3
    assert tr.log.epochs[-1]["status"] == "open"


def test_e_loss_training_runs(ham4, exact4):
    tr = _exact_trainer(ham4, exact4, steps=10, loss_kind="e_loss").run()
    assert tr.state.step == 10 and tr.log.epochs == []
    assert all(math.isnan(r["delta_tau"]) for r in tr.log.steps)


def test_mcmc_training_smoke(ham4):
    cfg = TrainConfig(total_steps=6, batch_size=16, n_energy_samples=128, n_final_samples=128, seed=1)
    tr = Trainer.create(ham4, Architecture(d_lat=4, width=8, depth=1), cfg).run()
    e, s = tr.final_energy()
    assert math.isfinite(e) and s > 0
    assert all(0 <= r["acceptance"] <= 1 for r in tr.log.steps)
