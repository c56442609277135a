"""Classical synchronization estimators: spectral, row-normalized spectral, GPM, trivial."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import OffsetGraph, build_hermitian, mod2pi

log = logging.getLogger(__name__)

EIG_SEED = 20230101


@dataclass
class EigenBasis:
    vectors: np.ndarray          # (n, k) complex, columns orthonormal
    values: np.ndarray           # (k,) descending
    iterations: int
    residuals: np.ndarray        # ||H v - lambda v|| per column
    converged: bool
    info: dict = field(default_factory=dict)


def top_k_eigenvectors(H, k=1, tol=1e-10, max_iter=5000, seed=EIG_SEED) -> EigenBasis:
    """Top-``k`` eigenpairs of a Hermitian matrix by orthogonal iteration.

    The matrix is shifted by its Gershgorin radius so that the algebraically
    largest eigenvalues dominate, and a Rayleigh-Ritz projection on an
    oversampled block is taken after every QR step.  Convergence means every
    wanted residual satisfies ``||Hv - lv|| <= tol * ||H||``.  On failure the
    current estimate is returned with ``converged=False``.
    """
    H = np.asarray(H)
    n = H.shape[0]
    if H.shape != (n, n):
        raise ValueError("H must be square")
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    scale = float(np.abs(H).sum(axis=1).max()) if n else 0.0
    if scale == 0.0:
        V = np.eye(n, k, dtype=np.complex128)
        return EigenBasis(V, np.zeros(k), 0, np.zeros(k), True)

    block = min(n, max(2 * k, k + 8))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, block)) + 1j * rng.standard_normal((n, block))
    X, _ = np.linalg.qr(X)
    it = 0
    while True:
        HX = H @ X
        # Rayleigh-Ritz on span(X)
        small = X.conj().T @ HX
        small = 0.5 * (small + small.conj().T)
        vals, U = np.linalg.eigh(small)
        order = np.argsort(vals)[::-1]
        vals, U = vals[order], U[:, order]
        X = X @ U
        HX = HX @ U
        res = np.linalg.norm(HX[:, :k] - X[:, :k] * vals[:k], axis=0)
        converged = bool(np.all(res <= tol * scale))
        if converged or it >= max_iter:
            break
        X, _ = np.linalg.qr(HX + scale * X)
        it += 1
    if not converged:
        log.warning("eigensolver stopped after %d iterations, max residual %.3e",
                    it, res.max())
    V = X[:, :k]
    # fix the phase so that the largest-modulus entry of each vector is real positive
    for c in range(k):
        j = int(np.argmax(np.abs(V[:, c])))
        V[:, c] *= np.exp(-1j * np.angle(V[j, c]))
    res = np.linalg.norm(H @ V - V * vals[:k], axis=0)
    return EigenBasis(V, vals[:k].copy(), it, res, converged,
                      {"tol": tol, "scale": scale, "block": block})


def _angles_from_vectors(V):
    mag = np.abs(V)
    ang = np.where(mag > 0, np.angle(V), 0.0)
    return mod2pi(ang)


def spectral_sync(g: OffsetGraph, k=1, **eig_kw) -> np.ndarray:
    """Angles from the arguments of the top-``k`` eigenvectors of H."""
    basis = top_k_eigenvectors(build_hermitian(g), k, **eig_kw)
    return _angles_from_vectors(basis.vectors).reshape(g.n, k)


def spectral_rn_sync(g: OffsetGraph, k=1, **eig_kw) -> np.ndarray:
    """Spectral estimate of the row-normalized operator ``D^-1 H``.

    Computed through the similar Hermitian matrix ``D^-1/2 H D^-1/2``; its
    eigenvectors map back via ``D^-1/2``, a positive scaling that leaves the
    arguments unchanged.
    """
    H = build_hermitian(g)
    deg = np.abs(H).sum(axis=1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 1.0)
    S = dinv[:, None] * H * dinv[None, :]
    basis = top_k_eigenvectors(S, k, **eig_kw)
    V = dinv[:, None] * basis.vectors
    return _angles_from_vectors(V).reshape(g.n, k)


def projected_power_steps(y, H, steps, alphas=None):
    """Numpy version of the projected update ``y <- angle(alpha e^{iy} + H e^{iy})``.

    ``y`` may be a vector or an (n, k) matrix (columns processed independently).
    """
    y = np.asarray(y, dtype=np.float64)
    if alphas is None:
        alphas = [1.0] * steps
    for s in range(steps):
        z = np.exp(1j * y)
        w = alphas[s] * z + H @ z
        y = np.angle(w)
    return mod2pi(y) if steps else y.copy()


def gpm(g: OffsetGraph, k=1, init=None, iters=100, alpha=1.0) -> np.ndarray:
    """Generalized power method; spectral initialization when ``init`` is None."""
    if init is None:
        init = spectral_sync(g, k)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (g.n, k):
        raise ValueError(f"init must have shape {(g.n, k)}")
    H = build_hermitian(g)
    return projected_power_steps(init, H, iters, [alpha] * iters)


def trivial_solution(n, k=1) -> np.ndarray:
    """All angles equal to 1."""
    return np.ones((n, k))


SOLVERS = {
    "spectral": spectral_sync,
    "spectral_rn": spectral_rn_sync,
    "gpm": gpm,
    "trivial": lambda g, k=1: trivial_solution(g.n, k),
}
