import math

import pytest

from nqs_ite.runlog import EPOCH_COLUMNS, STEP_COLUMNS, RunLog, config_hash


def _step(i):
    return dict(step=i, epoch=1, lr=1e-3, delta_tau=0.1, ema_energy=-1.0 / 3, loss=math.nan, acceptance=0.5)


def test_csv_layout(tmp_path):
    log = RunLog()
    log.add_step(wall_ms=1.25, **_step(1))
    log.add_step(**_step(2))
    log.add_epoch(epoch=1, start_step=1, delta_tau=0.1, e_mean=-1.0, sigma_e=0.2, e2=1.04, e3=-1.1,
                  e_threshold=-1.0, steps_in_epoch=2, status="open")
    log.write(tmp_path, {"final_energy": -1.0})
    lines = (tmp_path / "steps.csv").read_text().splitlines()
    assert lines[0] == "# schema,1"
    assert lines[1] == ",".join(STEP_COLUMNS)
    # full precision round trip, NaN written as empty
    row = lines[2].split(",")
    assert float(row[4]) == -1.0 / 3 and row[5] == ""
    assert (tmp_path / "epochs.csv").read_text().splitlines()[1] == ",".join(EPOCH_COLUMNS)
    assert (tmp_path / "timing.csv").read_text().splitlines()[1] == "1,1.250"
    assert "final_energy" in (tmp_path / "summary.json").read_text()


def test_steps_must_increase():
    log = RunLog()
    log.add_step(**_step(2))
    with pytest.raises(ValueError):
        log.add_step(**_step(2))


def test_config_hash_is_order_free():
    assert config_hash({"a": 1, "b": {"c": 2}}) == config_hash({"b": {"c": 2}, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
