"""Patch-encoded MLP wavefunction with an analytic backward pass.

A configuration is mapped to spins (up -> -1, down -> +1) on the
``d_lat x d_lat`` grid, cut into ``d_p x d_p`` patches (row-major within a
patch, patches row-major over the grid), each patch linearly embedded into
``d_enc`` features, the embeddings concatenated and fed through ``depth``
hidden layers of ``width`` units. The two-unit head gives the pre-activation
``x`` of the log-amplitude and the phase ``phi``; the log-amplitude is
saturated as ``a_sat * tanh(x / a_sat)``.

Flat parameter layout (portable across checkpoints)::

    enc_w (d_p^2, d_enc), enc_b (d_enc,)
    w0 (n_patches * d_enc, width), b0 (width,)
    w1..w{depth-1} (width, width), b1..b{depth-1} (width,)
    head_w (width, 2), head_b (2,)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nqs_ite import parallel
from nqs_ite.hilbert import SectorIndex, to_spins

_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(z):
    # tanh form of GELU; returns (value, derivative). In-place to limit temporaries.
    z2 = z * z
    t = 0.044715 * z2
    t += 1.0
    t *= z
    t *= _GELU_C
    np.tanh(t, out=t)
    slope = 1.0 - t * t
    slope *= 0.134145 * z2 + 1.0
    slope *= (0.5 * _GELU_C) * z
    t += 1.0
    t *= 0.5
    slope += t
    t *= z
    return t, slope


def _tanh(z):
    t = np.tanh(z)
    return t, 1.0 - t * t


def _relu(z):
    return np.maximum(z, 0.0), (z > 0).astype(z.dtype)


ACTIVATIONS = {"gelu": _gelu, "tanh": _tanh, "relu": _relu}


@dataclass(frozen=True)
class Architecture:
    d_lat: int
    d_p: int = 2
    d_enc: int = 8
    width: int = 512
    depth: int = 4
    a_sat: float = 20.0
    activation: str = "gelu"

    def __post_init__(self):
        if self.d_p < 1 or self.d_lat % self.d_p:
            raise ValueError(f"d_lat={self.d_lat} is not divisible by patch size d_p={self.d_p}")
        if self.width < 1 or self.depth < 1 or self.d_enc < 1:
            raise ValueError("width, depth and d_enc must be >= 1")
        if not self.a_sat > 0:
            raise ValueError("a_sat must be > 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")

    @property
    def n_sites(self) -> int:
        return self.d_lat * self.d_lat

    @property
    def n_patches(self) -> int:
        return (self.d_lat // self.d_p) ** 2

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        p2 = self.d_p * self.d_p
        shapes = [("enc_w", (p2, self.d_enc)), ("enc_b", (self.d_enc,))]
        fan_in = self.n_patches * self.d_enc
        for layer in range(self.depth):
            shapes.append((f"w{layer}", (fan_in, self.width)))
            shapes.append((f"b{layer}", (self.width,)))
            fan_in = self.width
        shapes += [("head_w", (self.width, 2)), ("head_b", (2,))]
        return shapes


def count_params(arch: Architecture) -> int:
    return sum(int(np.prod(shape)) for _, shape in arch.layout())


def _unpack(arch: Architecture, params: np.ndarray) -> dict[str, np.ndarray]:
    views, offset = {}, 0
    for name, shape in arch.layout():
        size = int(np.prod(shape))
        views[name] = params[offset : offset + size].reshape(shape)
        offset += size
    return views


def _patches(arch: Architecture, configs) -> np.ndarray:
    d, p = arch.d_lat, arch.d_p
    g = d // p
    spins = to_spins(configs, arch.n_sites).reshape(-1, g, p, g, p)
    return spins.transpose(0, 1, 3, 2, 4).reshape(-1, g * g, p * p)


class NqsNetwork:
    """Variational wavefunction ``psi(s) = exp(log_rho(s) + i phi(s))``."""

    def __init__(self, arch: Architecture, params: np.ndarray):
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (count_params(arch),):
            raise ValueError(f"expected {count_params(arch)} parameters, got {params.shape}")
        self.arch = arch
        self.params = params

    @property
    def n_params(self) -> int:
        return len(self.params)

    def copy(self) -> "NqsNetwork":
        return NqsNetwork(self.arch, self.params.copy())

    def views(self) -> dict[str, np.ndarray]:
        return _unpack(self.arch, self.params)

    def _forward_chunk(self, configs, keep):
        arch, v = self.arch, self.views()
        act = ACTIVATIONS[arch.activation]
        patches = _patches(arch, configs)
        h = (patches @ v["enc_w"] + v["enc_b"]).reshape(len(patches), -1)
        inputs, slopes = [h], []
        for layer in range(arch.depth):
            h, slope = act(h @ v[f"w{layer}"] + v[f"b{layer}"])
            inputs.append(h)
            slopes.append(slope)
        out = h @ v["head_w"] + v["head_b"]
        t = np.tanh(out[:, 0] / arch.a_sat)
        log_rho = arch.a_sat * t
        phi = out[:, 1].copy()
        cache = (patches, inputs, slopes, 1.0 - t * t) if keep else None
        return log_rho, phi, cache

    def forward(self, configs, keep_cache: bool = False):
        """Return ``(log_rho, phi)`` (and the backward cache when ``keep_cache``)."""
        configs = np.asarray(configs, dtype=np.uint64).reshape(-1)
        if self.arch.n_sites < 64 and np.any(configs >> np.uint64(self.arch.n_sites)):
            raise ValueError(f"configuration has bits beyond the {self.arch.n_sites} lattice sites")
        parts = parallel.map_chunks(
            lambda lo, hi: self._forward_chunk(configs[lo:hi], keep_cache), len(configs)
        )
        log_rho = np.concatenate([p[0] for p in parts])
        phi = np.concatenate([p[1] for p in parts])
        if keep_cache:
            return log_rho, phi, [p[2] for p in parts]
        return log_rho, phi

    def evaluate(self, configs):
        return self.forward(configs)

    def _vjp_chunk(self, cache, c_rho, c_phi):
        arch, v = self.arch, self.views()
        patches, inputs, slopes, sat = cache
        grads = {}
        d_out = np.stack([c_rho * sat, c_phi], axis=1)
        grads["head_w"] = inputs[-1].T @ d_out
        grads["head_b"] = d_out.sum(axis=0)
        d_h = d_out @ v["head_w"].T
        for layer in reversed(range(arch.depth)):
            d_z = d_h * slopes[layer]
            grads[f"w{layer}"] = inputs[layer].T @ d_z
            grads[f"b{layer}"] = d_z.sum(axis=0)
            d_h = d_z @ v[f"w{layer}"].T
        d_emb = d_h.reshape(-1, arch.d_enc)
        grads["enc_w"] = patches.reshape(-1, arch.d_p * arch.d_p).T @ d_emb
        grads["enc_b"] = d_emb.sum(axis=0)
        return np.concatenate([grads[name].ravel() for name, _ in arch.layout()])

    def vjp(self, configs, c_rho, c_phi, cache=None) -> np.ndarray:
        """``sum_b c_rho[b] dlog_rho[b]/dtheta + c_phi[b] dphi[b]/dtheta``.

        ``cache`` is the chunk list from ``forward(configs, keep_cache=True)``;
        without it the forward pass is recomputed.
        """
        configs = np.asarray(configs, dtype=np.uint64).reshape(-1)
        c_rho = np.asarray(c_rho, dtype=np.float64).reshape(-1)
        c_phi = np.asarray(c_phi, dtype=np.float64).reshape(-1)
        bounds = parallel.chunk_bounds(len(configs))
        if cache is None:
            cache = self.forward(configs, keep_cache=True)[2]
        lookup = dict(zip(bounds, cache))
        parts = parallel.map_chunks(
            lambda lo, hi: self._vjp_chunk(lookup[(lo, hi)], c_rho[lo:hi], c_phi[lo:hi]),
            len(configs),
        )
        return parallel.tree_sum(parts)


def init_params(arch: Architecture, seed: int, scale: float = 1.0) -> NqsNetwork:
    """Glorot-uniform weights (bound ``sqrt(6 / (fan_in + fan_out))``), zero biases.

    ``scale`` multiplies every weight bound; 1 is the standard rule.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in arch.layout():
        if len(shape) == 2:
            bound = scale * np.sqrt(6.0 / (shape[0] + shape[1]))
            chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
        else:
            chunks.append(np.zeros(shape))
    return NqsNetwork(arch, np.concatenate(chunks))


def forward(net: NqsNetwork, configs):
    return net.forward(configs)


def log_psi_grad(net: NqsNetwork, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``log_rho(s)`` and ``phi(s)``.

    ``d/dtheta log psi*(s) = grad_log_rho - 1j * grad_phi``.
    """
    configs = np.array([s], dtype=np.uint64)
    return net.vjp(configs, [1.0], [0.0]), net.vjp(configs, [0.0], [1.0])


class TabulatedState:
    """Fixed wavefunction given by a table over a sector; a test double for networks."""

    def __init__(self, sector: SectorIndex, log_rho, phi):
        self.sector = sector
        self.log_rho = np.asarray(log_rho, dtype=np.float64)
        self.phi = np.asarray(phi, dtype=np.float64)

    @classmethod
    def from_amplitudes(cls, sector: SectorIndex, psi, floor: float = 1e-300) -> "TabulatedState":
        psi = np.asarray(psi)
        mag = np.maximum(np.abs(psi), floor)
        return cls(sector, np.log(mag), np.angle(psi) if np.iscomplexobj(psi) else np.where(psi < 0, np.pi, 0.0))

    @classmethod
    def uniform(cls, sector: SectorIndex) -> "TabulatedState":
        n = len(sector)
        return cls(sector, np.zeros(n), np.zeros(n))

    def forward(self, configs, keep_cache: bool = False):
        idx = self.sector.index(np.asarray(configs, dtype=np.uint64).reshape(-1))
        if keep_cache:
            return self.log_rho[idx], self.phi[idx], None
        return self.log_rho[idx], self.phi[idx]

    def evaluate(self, configs):
        return self.forward(configs)

    def copy(self) -> "TabulatedState":
        return TabulatedState(self.sector, self.log_rho.copy(), self.phi.copy())
