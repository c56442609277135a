"""Ground-truth-aware metrics: rotation-corrected MSE, permutation MSE, ANE."""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import kernels
from .graph import TWO_PI

MAX_PERM_K = 8


def _svd2_sum(Q):
    """Sum of the two singular values of a 2x2 matrix, in closed form."""
    a, b = Q[0, 0], Q[0, 1]
    c, d = Q[1, 0], Q[1, 1]
    # s1 + s2 = sqrt(||Q||_F^2 + 2 |det Q|)
    fro2 = a * a + b * b + c * c + d * d
    det = abs(a * d - b * c)
    return math.sqrt(max(fro2 + 2.0 * det, 0.0))


def mse(r, R) -> float:
    """MSE with global angle correction, ``4 - 2 * sum(svd(Q))``.

    ``Q`` is the mean of ``rot(R_i)^T rot(r_i)`` over all nodes.  Values in
    ``(-1e-12, 0)`` from rounding are clamped to 0.
    """
    r = np.asarray(r, dtype=np.float64).ravel()
    R = np.asarray(R, dtype=np.float64).ravel()
    if r.size != R.size:
        raise ValueError("r and R must have equal length")
    if r.size == 0:
        raise ValueError("empty angle vectors")
    d = r - R
    c, s = np.cos(d).mean(), np.sin(d).mean()
    # rot(R)^T rot(r) = rot(r - R)
    Q = np.array([[c, -s], [s, c]])
    val = 4.0 - 2.0 * _svd2_sum(Q)
    if -1e-12 < val < 0:
        val = 0.0
    return val


def mse_oracle(r, R, grid_points=200_000) -> float:
    """Brute-force grid minimum of the summed squared wrapped residuals.

    ``min_theta0 sum_i min(d_i mod 2pi, -d_i mod 2pi)^2`` with
    ``d_i = r_i + theta0 - R_i``.  Note this is a sum over nodes, not a mean,
    and it measures arc length rather than chord length, so it only tracks
    :func:`mse` up to a factor ``n/2`` for small residuals.
    """
    r = np.asarray(r, dtype=np.float64).ravel()
    R = np.asarray(R, dtype=np.float64).ravel()
    if r.size != R.size:
        raise ValueError("r and R must have equal length")
    grid = np.linspace(0.0, TWO_PI, grid_points, endpoint=False)
    vals = kernels.wrapped_sq_grid(np.ascontiguousarray(r - R), grid)
    return float(vals.min())


def chordal_mse_oracle(r, R, grid_points=200_000) -> float:
    """Grid search of ``min_theta0 mean_i ||rot(r_i + theta0) - rot(R_i)||_F^2``.

    Same quantity as :func:`mse`, computed without any SVD.
    """
    d = np.asarray(r, dtype=np.float64).ravel() - np.asarray(R, dtype=np.float64).ravel()
    grid = np.linspace(0.0, TWO_PI, grid_points, endpoint=False)
    c, s = np.cos(d).mean(), np.sin(d).mean()
    # mean of 4 - 4 cos(d_i + g), expanded so the grid pass is O(grid)
    vals = 4.0 - 4.0 * (c * np.cos(grid) - s * np.sin(grid))
    return float(vals.min())


def mse_k(r, R, k=None, return_perm=False):
    """Permutation-minimised mean MSE across the ``k`` angle sets."""
    r = np.asarray(r, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if r.ndim == 1:
        r = r[:, None]
    if R.ndim == 1:
        R = R[:, None]
    if k is None:
        k = R.shape[1]
    if r.shape != R.shape or r.shape[1] != k:
        raise ValueError("r and R must both have shape (n, k)")
    if k > MAX_PERM_K:
        raise ValueError(f"k={k} exceeds the permutation limit {MAX_PERM_K}")
    table = np.array([[mse(r[:, a], R[:, b]) for b in range(k)] for a in range(k)])
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(k)):
        tot = sum(table[perm[l], l] for l in range(k))
        if tot < best:
            best, best_perm = tot, perm
    per_layer = [float(table[best_perm[l], l]) for l in range(k)]
    best = float(best) / k
    if return_perm:
        return best, best_perm, per_layer
    return best


def ane(pred, truth) -> float:
    """Average normalized error of a recovered point cloud."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("point clouds must have equal shape")
    den = np.sqrt(((truth - truth.mean(axis=0)) ** 2).sum())
    if den == 0:
        raise ValueError("truth cloud has zero spread")
    return float(np.sqrt(((pred - truth) ** 2).sum()) / den)
