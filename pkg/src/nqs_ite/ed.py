"""Exact ground states of small sectors by Lanczos with full reorthogonalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from nqs_ite.hamiltonian import Couplings, Heisenberg
from nqs_ite.hilbert import SectorIndex

DENSE_CROSSCHECK_DIM = 2000
MAX_ED_DIM = 200_000


class EdConvergenceError(RuntimeError):
    pass


@dataclass
class EdResult:
    e0: float
    vector: np.ndarray
    residual: float
    iterations: int


def lanczos_ground(apply, dim: int, seed: int = 0, max_iter: int = 400, tol: float = 1e-13):
    """Lowest eigenpair of the symmetric operator ``apply`` on R^dim.

    Returns ``(e0, vector, iterations)``. Stops when the Ritz residual estimate
    ``|beta_k * y_k|`` drops below ``tol * max(1, |e0|)``.
    """
    rng = np.random.default_rng(seed)
    m = min(max_iter, dim)
    basis = np.zeros((m, dim))
    q = rng.standard_normal(dim)
    basis[0] = q / np.linalg.norm(q)
    alphas, betas = [], []
    e0, y = None, None
    for k in range(m):
        w = apply(basis[k])
        a = float(basis[k] @ w)
        alphas.append(a)
        for _ in range(2):
            w -= basis[: k + 1].T @ (basis[: k + 1] @ w)
        b = float(np.linalg.norm(w))
        evals, evecs = eigh_tridiagonal(np.array(alphas), np.array(betas))
        e0, y = float(evals[0]), evecs[:, 0]
        if abs(b * y[-1]) < tol * max(1.0, abs(e0)) or b < 1e-14 or k + 1 == m:
            break
        betas.append(b)
        basis[k + 1] = w / b
    n = len(alphas)
    vector = basis[:n].T @ y
    return e0, vector / np.linalg.norm(vector), n


def ground_state(lattice, couplings: Couplings, sector: SectorIndex, seed: int = 0,
                 max_iter: int = 400) -> EdResult:
    dim = len(sector)
    if dim > MAX_ED_DIM:
        raise ValueError(f"sector dimension {dim} exceeds the ED limit {MAX_ED_DIM}")
    ham = Heisenberg(lattice, couplings)
    e0, vec, iters = lanczos_ground(lambda v: ham.matvec(sector, v), dim, seed=seed, max_iter=max_iter)
    vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
    residual = float(np.linalg.norm(ham.matvec(sector, vec) - e0 * vec))
    if residual > 1e-9 * max(1.0, abs(e0)):
        raise EdConvergenceError(
            f"Lanczos did not converge: residual {residual:.3e} after {iters} iterations"
        )
    if dim < DENSE_CROSSCHECK_DIM:
        dense = np.linalg.eigvalsh(ham.sparse_matrix(sector).toarray())[0]
        if abs(dense - e0) > 1e-9 * max(1.0, abs(e0)):
            raise EdConvergenceError(f"Lanczos e0={e0!r} disagrees with dense e0={dense!r}")
    return EdResult(e0=e0, vector=vec, residual=residual, iterations=iters)
