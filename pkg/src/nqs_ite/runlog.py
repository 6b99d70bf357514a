"""Per-step and per-epoch training records with a fixed, versioned CSV schema.

Wall-clock timings are kept out of the deterministic CSVs and written to a
separate ``timing.csv``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

SCHEMA_VERSION = 1
STEP_COLUMNS = ("step", "epoch", "lr", "delta_tau", "ema_energy", "loss", "acceptance")
EPOCH_COLUMNS = ("epoch", "start_step", "delta_tau", "e_mean", "sigma_e", "e2", "e3",
                 "e_threshold", "steps_in_epoch", "status")


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a config mapping."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunLog:
    def __init__(self):
        self.steps: list[dict] = []
        self.epochs: list[dict] = []
        self.timing: list[tuple[int, float]] = []
        self.summary: dict = {}

    def add_step(self, wall_ms: float = math.nan, **record) -> None:
        if self.steps and record["step"] <= self.steps[-1]["step"]:
            raise ValueError("step records must be strictly increasing")
        self.steps.append({k: record[k] for k in STEP_COLUMNS})
        self.timing.append((record["step"], wall_ms))

    def add_epoch(self, **record) -> None:
        self.epochs.append({k: record[k] for k in EPOCH_COLUMNS})

    def column(self, name: str, table: str = "steps") -> list:
        return [r[name] for r in getattr(self, table)]

    @staticmethod
    def _csv(columns, rows) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("# schema", SCHEMA_VERSION))
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
        return buf.getvalue()

    def steps_csv(self) -> str:
        return self._csv(STEP_COLUMNS, self.steps)

    def epochs_csv(self) -> str:
        return self._csv(EPOCH_COLUMNS, self.epochs)

    def write(self, out_dir, summary: dict | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "steps.csv").write_text(self.steps_csv())
        (out / "epochs.csv").write_text(self.epochs_csv())
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "wall_ms"))
            w.writerows((s, f"{ms:.3f}") for s, ms in self.timing)
        if summary is not None:
            self.summary = summary
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
