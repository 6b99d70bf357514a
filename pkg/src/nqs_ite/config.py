"""Run configuration: sectioned key-value files (INI style) or JSON.

Sections and keys::

    [lattice]  d_lat, j1, j2
    [model]    d_p, d_enc, width, depth, a_sat, activation
    [sampler]  batch_size, n_skip, n_warmup, n_energy_samples, n_final_samples
    [train]    total_steps, alpha_0, alpha_f, beta1, beta2, eps, ema_decay,
               loss, mode, e3_mode, max_epoch_steps, degeneracy_tol,
               dtau_cap_sigma, seed

Missing keys take the defaults below; unknown sections or keys are errors.
``n_warmup`` defaults to ``10 * d_lat**2``.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from nqs_ite.hamiltonian import Couplings
from nqs_ite.lattice import build_lattice
from nqs_ite.model import Architecture
from nqs_ite.runlog import config_hash
from nqs_ite.trainer import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (type, default); None default means "derived"
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "lattice": {"d_lat": (int, 4), "j1": (float, 1.0), "j2": (float, 0.5)},
    "model": {
        "d_p": (int, 2), "d_enc": (int, 8), "width": (int, 512), "depth": (int, 4),
        "a_sat": (float, 20.0), "activation": (str, "gelu"),
    },
    "sampler": {
        "batch_size": (int, 256), "n_skip": (int, 4), "n_warmup": (int, None),
        "n_energy_samples": (int, 100_000), "n_final_samples": (int, 1_000_000),
    },
    "train": {
        "total_steps": (int, 500_000), "alpha_0": (float, 1e-3), "alpha_f": (float, 1e-5),
        "beta1": (float, 0.9), "beta2": (float, 0.999), "eps": (float, 1e-8),
        "ema_decay": (float, 0.99), "loss": (str, "ite"), "mode": (str, "mcmc"),
        "e3_mode": (str, "approximate"), "max_epoch_steps": (int, 1000),
        "degeneracy_tol": (float, 1e-12), "dtau_cap_sigma": (float, 10.0), "seed": (int, 0),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        section, name = key.split(".")
        return self.values[section][name]

    @property
    def d_lat(self) -> int:
        return self["lattice.d_lat"]

    @property
    def seed(self) -> int:
        return self["train.seed"]

    def couplings(self) -> Couplings:
        return Couplings(self["lattice.j1"], self["lattice.j2"])

    def architecture(self) -> Architecture:
        return Architecture(d_lat=self.d_lat, **self.values["model"])

    def train_config(self) -> TrainConfig:
        s, t = self.values["sampler"], self.values["train"]
        kw = {f.name: t[f.name] for f in fields(TrainConfig) if f.name in t}
        kw.update({k: s[k] for k in s})
        kw["loss_kind"] = t["loss"]
        return TrainConfig(**kw)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with ``section.key=value`` style overrides (``{"train.seed": 3}``)."""
        values = {sec: dict(v) for sec, v in self.values.items()}
        for key, value in overrides.items():
            section, name = key.split(".")
            values.setdefault(section, {})[name] = value
        return from_mapping(values)

    def to_dict(self) -> dict:
        return {sec: dict(v) for sec, v in self.values.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _exact_int(x) -> int:
    if isinstance(x, bool) or float(x) != int(x):
        raise ValueError
    return int(x)


def _coerce(section: str, key: str, raw, typ: type):
    if raw is None:
        return None
    try:
        if typ is int:
            if isinstance(raw, str):
                raw = raw.strip().replace("_", "")
                # accept "1e5" style integers, but only exact ones
                return int(raw) if raw.lstrip("+-").isdigit() else _exact_int(float(raw))
            return _exact_int(raw)
        if typ is float:
            return float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def from_mapping(mapping: dict) -> RunConfig:
    """Validate a ``{section: {key: value}}`` mapping and fill in defaults."""
    unknown = set(mapping) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    values: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        given = mapping.get(section, {}) or {}
        extra = set(given) - set(keys)
        if extra:
            raise ConfigError(f"[{section}] unknown key(s): {', '.join(sorted(extra))}")
        values[section] = {k: _coerce(section, k, given.get(k, d), t) for k, (t, d) in keys.items()}
    if values["sampler"]["n_warmup"] is None:
        values["sampler"]["n_warmup"] = 10 * values["lattice"]["d_lat"] ** 2
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        build_lattice(cfg.d_lat)
        cfg.couplings()
        cfg.architecture()
        cfg.train_config()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["train.mode"] == "exact" and cfg.d_lat > 4:
        raise ConfigError("exact-sum mode needs an enumerable sector (d_lat = 4)")


def parse_text(text: str) -> RunConfig:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"JSON parse error at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object of sections")
        return from_mapping(data)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from None
    return from_mapping({s: dict(parser[s]) for s in parser.sections()})


def parse_config(path=None) -> RunConfig:
    """Read a config file; ``None`` gives the full defaults."""
    if path is None:
        return from_mapping({})
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_text(p.read_text())


def default_config() -> RunConfig:
    return from_mapping({})
