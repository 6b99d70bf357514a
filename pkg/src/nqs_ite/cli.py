"""Command line entry point: ``nqs-ite {train,ed,verify,compare-loss,sweep}``.

Every subcommand takes ``--config``, ``--seed``, ``--out``, ``--threads`` and
``--mode``. Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from nqs_ite import checkpoint as ckpt
from nqs_ite import parallel
from nqs_ite.config import RunConfig, parse_config
from nqs_ite.ed import ground_state
from nqs_ite.hamiltonian import Couplings, Heisenberg
from nqs_ite.hilbert import enumerate_sector
from nqs_ite.lattice import build_lattice
from nqs_ite.trainer import Trainer

log = logging.getLogger("nqs_ite")

CHECKPOINT_NAME = "checkpoint.nqs"
ED_MAX_D_LAT = 4


def _dump(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def ed_energy(d_lat: int, couplings: Couplings) -> dict:
    lat = build_lattice(d_lat)
    n = lat.n_sites
    res = ground_state(lat, couplings, enumerate_sector(n, n // 2))
    return {
        "d_lat": d_lat,
        "j2_over_j1": couplings.j2 / couplings.j1,
        "sector": {"n_sites": n, "n_up": n // 2, "sz": 0},
        "e0": res.e0,
        "e0_per_site": res.e0 / n,
        "residual": res.residual,
    }


def error_vs_ed(energy: float, e0: float, n_sites: int) -> dict:
    return {
        "abs_per_site": abs(energy - e0) / n_sites,
        "relative": abs(energy - e0) / abs(e0),
    }


def run_train(cfg: RunConfig, out: Path | None, resume: Path | None = None,
              ed: dict | None = None) -> dict:
    """Train per ``cfg``; writes run log, summary and checkpoint under ``out``."""
    lat = build_lattice(cfg.d_lat)
    ham = Heisenberg(lat, cfg.couplings())
    tcfg = cfg.train_config()
    t0 = time.perf_counter()
    if resume is not None:
        ck = ckpt.load_checkpoint(resume)
        saved = RunConfig(json.loads(ck.config_text))
        if saved.hash() != cfg.hash():
            raise ValueError("checkpoint was written with a different config")
        trainer = ckpt.restore(Trainer, ham, tcfg, ck)
    else:
        trainer = Trainer.create(ham, cfg.architecture(), tcfg)
    trainer.run()
    energy, sigma = trainer.final_energy()
    n = lat.n_sites
    summary = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "mode": tcfg.mode,
        "loss": tcfg.loss_kind,
        "d_lat": cfg.d_lat,
        "j2_over_j1": cfg["lattice.j2"] / cfg["lattice.j1"],
        "steps": trainer.state.step,
        "epochs": trainer.state.epoch,
        "converged": trainer.state.converged,
        "final_energy": energy,
        "final_sigma_e": sigma,
        "final_energy_per_site": energy / n,
    }
    if ed is None and cfg.d_lat <= ED_MAX_D_LAT:
        ed = ed_energy(cfg.d_lat, cfg.couplings())
    if ed is not None:
        summary["ed_e0"] = ed["e0"]
        summary["error_vs_ed"] = error_vs_ed(energy, ed["e0"], n)
    wall = time.perf_counter() - t0
    if out is not None:
        trainer.log.write(out, summary)
        _dump(out / "timing.json", {"total_wall_s": wall})
        ckpt.save_checkpoint(trainer, out / CHECKPOINT_NAME, cfg.to_json())
    summary["total_wall_s"] = wall
    return summary


def _seed_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def run_compare(cfg: RunConfig, out: Path | None, seeds: list[int]) -> dict:
    """Paired ITE / E-loss runs over ``seeds``; reports the seed-to-seed spread."""
    ed = ed_energy(cfg.d_lat, cfg.couplings()) if cfg.d_lat <= ED_MAX_D_LAT else None
    rows = []
    for loss in ("ite", "e_loss"):
        for seed in seeds:
            run_cfg = cfg.with_overrides(**{"train.loss": loss, "train.seed": seed})
            sub = None if out is None else out / f"{loss}_seed{seed}"
            s = run_train(run_cfg, sub, ed=ed)
            rows.append({"loss": loss, "seed": seed, "final_energy": s["final_energy"],
                         "final_sigma_e": s["final_sigma_e"]})
    spread = {
        loss: float(np.std([r["final_energy"] for r in rows if r["loss"] == loss], ddof=1))
        if len(seeds) > 1 else 0.0
        for loss in ("ite", "e_loss")
    }
    result = {"runs": rows, "std_final_energy": spread, "ite_spread_not_larger": spread["ite"] <= spread["e_loss"]}
    if ed is not None:
        result["ed_e0"] = ed["e0"]
    if out is not None:
        _dump(out / "compare.json", result)
    return result


def run_sweep(cfg: RunConfig, out: Path | None, ratios: list[float]) -> list[dict]:
    """One training run per ``j2 / j1`` ratio; returns error-vs-ratio rows."""
    rows = []
    for r in ratios:
        run_cfg = cfg.with_overrides(**{"lattice.j2": r * cfg["lattice.j1"]})
        sub = None if out is None else out / f"j2_{r:g}"
        s = run_train(run_cfg, sub)
        row = {"j2_over_j1": r, "final_energy": s["final_energy"], "final_sigma_e": s["final_sigma_e"]}
        if "error_vs_ed" in s:
            row.update(ed_e0=s["ed_e0"], **s["error_vs_ed"])
        rows.append(row)
    if out is not None:
        cols = list(rows[0])
        lines = [",".join(cols)] + [",".join(repr(row.get(c, math.nan)) for c in cols) for row in rows]
        (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return rows


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI or JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: NQS_THREADS or 1)")
    common.add_argument("--mode", choices=("mcmc", "exact"), help="sampling mode (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nqs-ite", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--resume", type=Path, help="continue from a checkpoint")
    t.add_argument("--steps", type=int, help="total optimizer steps (overrides the config)")
    e = sub.add_parser("ed", parents=[common], help="exact ground state of the configured lattice")
    e.add_argument("--j2", type=float, help="j2 / j1 ratio (overrides the config)")
    sub.add_parser("verify", parents=[common], help="run the oracle and invariant checks")
    c = sub.add_parser("compare-loss", parents=[common], help="paired ITE / E-loss runs")
    c.add_argument("--seeds", default="0,1,2")
    c.add_argument("--steps", type=int)
    s = sub.add_parser("sweep", parents=[common], help="j2/j1 sweep")
    s.add_argument("--ratios", default="0.4,0.45,0.5,0.55,0.6")
    s.add_argument("--steps", type=int)
    return p


def _load(args) -> RunConfig:
    cfg = parse_config(args.config)
    over = {}
    if args.seed is not None:
        over["train.seed"] = args.seed
    if args.mode is not None:
        over["train.mode"] = args.mode
    if getattr(args, "steps", None) is not None:
        over["train.total_steps"] = args.steps
    if getattr(args, "j2", None) is not None:
        over["lattice.j2"] = args.j2 * cfg["lattice.j1"]
    return cfg.with_overrides(**over) if over else cfg


def dispatch(args) -> int:
    if args.command == "verify":
        from nqs_ite.verification import format_table, run_all

        results = run_all()
        print(format_table(results))
        return 0 if all(c.passed for c in results) else 1
    cfg = _load(args)
    out = args.out
    if args.command == "ed":
        res = ed_energy(cfg.d_lat, cfg.couplings())
        if out is not None:
            _dump(out / "ed.json", res)
        print(json.dumps(res, sort_keys=True))
    elif args.command == "train":
        print(json.dumps(run_train(cfg, out, args.resume), indent=2, sort_keys=True))
    elif args.command == "compare-loss":
        print(json.dumps(run_compare(cfg, out, _seed_list(args.seeds)), indent=2, sort_keys=True))
    elif args.command == "sweep":
        ratios = [float(r) for r in args.ratios.split(",")]
        print(json.dumps(run_sweep(cfg, out, ratios), indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print(json.dumps({"error": "ValueError", "message": "--threads must be >= 1"}), file=sys.stderr)
            return 2
        parallel.set_threads(args.threads)
    try:
        # chunk-level threads only; BLAS stays single threaded so results do not depend on it
        with threadpool_limits(limits=1):
            return dispatch(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
