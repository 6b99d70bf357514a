"""Binary checkpoints of a training run.

Layout (all integers little-endian)::

    magic      8 bytes  b"NQSITE01"
    version    u32
    config     u32 length + UTF-8 JSON text
    arch       u32 d_lat, d_p, d_enc, width, depth; f64 a_sat; u32 length + activation name
    params     u64 count + f64[count]      live network
    fixed      u8 flag (+ f64[count])      frozen target network
    adam       f64[count] m, f64[count] v
    walkers    u8 flag (+ u64 seed, purpose, n_streams, counter, accepted, proposed,
               u64[n_streams] configs, u32 n_bonds, i64[n_bonds, 2] bonds)
    state      u32 length + UTF-8 JSON (scalar train state and the run log so far)
    crc32      u32 over every preceding byte

Floats are stored as raw IEEE-754 bits, so a resumed run continues bit for bit.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from nqs_ite import rng as rng_mod
from nqs_ite.model import Architecture, NqsNetwork, count_params
from nqs_ite.runlog import RunLog
from nqs_ite.sampler import WalkerEnsemble

MAGIC = b"NQSITE01"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    arch: Architecture
    params: np.ndarray
    fixed_params: np.ndarray | None
    adam_m: np.ndarray
    adam_v: np.ndarray
    ensemble: WalkerEnsemble | None
    state: dict


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.pack("I", len(raw))
        self.parts.append(raw)

    def array(self, a: np.ndarray, dtype: str) -> None:
        self.parts.append(np.ascontiguousarray(a, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (n,) = self.unpack("I")
        return self.take(n).decode("utf-8")

    def array(self, count: int, dtype: str) -> np.ndarray:
        return np.frombuffer(self.take(count * np.dtype(dtype).itemsize), dtype=dtype).copy()


def encode(ck: Checkpoint) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("I", VERSION)
    w.text(ck.config_text)
    a = ck.arch
    w.pack("5I", a.d_lat, a.d_p, a.d_enc, a.width, a.depth)
    w.pack("d", a.a_sat)
    w.text(a.activation)
    n = len(ck.params)
    w.pack("Q", n)
    w.array(ck.params, "<f8")
    w.pack("B", ck.fixed_params is not None)
    if ck.fixed_params is not None:
        w.array(ck.fixed_params, "<f8")
    w.array(ck.adam_m, "<f8")
    w.array(ck.adam_v, "<f8")
    ens = ck.ensemble
    w.pack("B", ens is not None)
    if ens is not None:
        w.pack("6Q", *ens.streams.state(), ens.accepted, ens.proposed)
        w.array(ens.configs, "<u8")
        w.pack("I", len(ens.bonds))
        w.array(ens.bonds, "<i8")
    w.text(json.dumps(ck.state, sort_keys=True))
    body = w.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("checkpoint is truncated")
    r = _Reader(data[:-4])
    r.take(len(MAGIC))
    (version,) = r.unpack("I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted or truncated")
    config_text = r.text()
    d_lat, d_p, d_enc, width, depth = r.unpack("5I")
    (a_sat,) = r.unpack("d")
    arch = Architecture(d_lat=d_lat, d_p=d_p, d_enc=d_enc, width=width, depth=depth,
                        a_sat=a_sat, activation=r.text())
    (n,) = r.unpack("Q")
    if n != count_params(arch):
        raise CheckpointError(f"parameter count {n} does not match the architecture ({count_params(arch)})")
    params = r.array(n, "<f8")
    (has_fixed,) = r.unpack("B")
    fixed = r.array(n, "<f8") if has_fixed else None
    adam_m = r.array(n, "<f8")
    adam_v = r.array(n, "<f8")
    (has_ens,) = r.unpack("B")
    ensemble = None
    if has_ens:
        seed, purpose, n_streams, counter, accepted, proposed = r.unpack("6Q")
        configs = r.array(n_streams, "<u8")
        (n_bonds,) = r.unpack("I")
        bonds = r.array(2 * n_bonds, "<i8").reshape(-1, 2)
        streams = rng_mod.StreamSet.from_state((seed, purpose, n_streams, counter))
        ensemble = WalkerEnsemble(configs, streams, bonds, accepted, proposed)
    state = json.loads(r.text())
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config_text, arch, params, fixed, adam_m, adam_v, ensemble, state)


def save_checkpoint(trainer, path, config_text: str) -> None:
    """Write the full resumable state of ``trainer``."""
    st = trainer.state
    state = {
        "train": st.scalars(),
        "steps": trainer.log.steps,
        "epochs": trainer.log.epochs,
    }
    ck = Checkpoint(
        config_text=config_text,
        arch=st.net.arch,
        params=st.net.params,
        fixed_params=None if st.fixed_net is None else st.fixed_net.params,
        adam_m=st.adam_m,
        adam_v=st.adam_v,
        ensemble=st.ensemble,
        state=state,
    )
    Path(path).write_bytes(encode(ck))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return decode(p.read_bytes())


def restore(trainer_cls, ham, config, ck: Checkpoint, **kw):
    """Rebuild a trainer of class ``trainer_cls`` positioned exactly where ``ck`` was saved."""
    from nqs_ite.trainer import TrainState

    net = NqsNetwork(ck.arch, ck.params)
    fixed = None if ck.fixed_params is None else NqsNetwork(ck.arch, ck.fixed_params)
    state = TrainState(net=net, adam_m=ck.adam_m, adam_v=ck.adam_v, fixed_net=fixed, ensemble=ck.ensemble)
    for key, value in ck.state["train"].items():
        setattr(state, key, value)
    runlog = RunLog()
    runlog.steps = [dict(r) for r in ck.state["steps"]]
    runlog.epochs = [dict(r) for r in ck.state["epochs"]]
    return trainer_cls(ham, config, state, runlog=runlog, **kw)
