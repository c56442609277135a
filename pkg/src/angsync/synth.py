"""Synthetic outlier models ERO / BAO / RGGO.

Every random draw comes from a named sub-stream of one master seed, so each
component (ground truth, background noise, selection, measurement graph) can
be regenerated on its own.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import TWO_PI, OffsetGraph, mod2pi

MODELS = ("ERO", "BAO", "RGGO")
MAX_ATTEMPTS = 100


def substream(seed: int, name: str, attempt: int = 0) -> np.random.Generator:
    """Independent generator for ``name`` derived from the master ``seed``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode()), attempt])


@dataclass(frozen=True)
class SyntheticConfig:
    model: str = "ERO"
    n: int = 360
    p: float = 0.15
    k: int = 1
    eta: float = 0.0
    option: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0 <= self.eta < 1:
            raise ValueError("eta must lie in [0, 1)")
        if self.option not in (1, 2, 3, 4):
            raise ValueError("option must be 1, 2, 3 or 4")
        if self.model == "BAO" and math.ceil(self.n * self.p / 2) >= self.n:
            raise ValueError("BA attachment count must be below n")


@dataclass(frozen=True)
class GroundTruth:
    theta: np.ndarray        # (n, k) angles in [0, 2pi)
    edge_layer: np.ndarray   # per stored edge: 1..k, or 0 for a noisy entry

    @property
    def noise_mask(self):
        return self.edge_layer == 0


def _block_sizes(n, blocks=6):
    base, extra = divmod(n, blocks)
    return [base + (1 if b < extra else 0) for b in range(blocks)]


def gen_ground_truth(option: int, n: int, k: int, seed: int, rng=None) -> np.ndarray:
    """Ground-truth angle matrix (n, k), reduced mod 2pi.

    1: Gamma(shape 0.5, scale 2pi) entries.  2: normal, mean pi, covariance
    w w^T with w ~ N(0, I).  3: normal, mean pi, identity covariance.
    4: block-diagonal covariance, six near-equal blocks each built as in 2.
    """
    if rng is None:
        rng = substream(seed, "ground_truth")
    theta = np.empty((n, k))
    for l in range(k):
        if option == 1:
            col = rng.gamma(0.5, TWO_PI, size=n)
        elif option == 2:
            w = rng.standard_normal(n)
            col = math.pi + w * rng.standard_normal()
        elif option == 3:
            col = math.pi + rng.standard_normal(n)
        elif option == 4:
            parts = []
            for size in _block_sizes(n):
                w = rng.standard_normal(size)
                parts.append(w * rng.standard_normal())
            col = math.pi + np.concatenate(parts)
        else:
            raise ValueError(f"unknown ground-truth option {option!r}")
        theta[:, l] = mod2pi(col)
    return theta


def _ba_edges(n, m, rng):
    # star on m+1 nodes, then preferential attachment of m distinct targets
    edges = [(0, v) for v in range(1, m + 1)]
    repeated = [0] * m + list(range(1, m + 1))
    for new in range(m + 1, n):
        targets = set()
        while len(targets) < m:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for t in sorted(targets):
            edges.append((t, new))
            repeated.extend((t, new))
    return edges


def measurement_graph(model: str, n: int, p: float, seed: int, attempt: int = 0) -> np.ndarray:
    """Symmetric boolean mask of the measurement graph (no self-loops)."""
    rng = substream(seed, "measurement_graph", attempt)
    G = np.zeros((n, n), dtype=bool)
    iu = np.triu_indices(n, 1)
    if model == "ERO":
        G[iu] = rng.random(iu[0].size) < p
    elif model == "BAO":
        m = max(1, math.ceil(n * p / 2))
        for a, b in _ba_edges(n, m, rng):
            G[a, b] = True
    elif model == "RGGO":
        pts = rng.random((n, 2))
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        G[iu] = d2[iu] <= (2 * p) ** 2
    else:
        raise ValueError(f"unknown model {model!r}")
    return G | G.T


def _assemble(cfg: SyntheticConfig, theta, attempt):
    n, k, eta = cfg.n, cfg.k, cfg.eta
    A_noise = substream(cfg.seed, "noise", attempt).uniform(0.0, TWO_PI, size=(n, n))
    A_sel = substream(cfg.seed, "selection", attempt).random((n, n))

    A_complete = np.zeros((n, n))
    label = np.zeros((n, n), dtype=np.int64)
    for l in range(1, k + 1):
        sel = ((1 - eta) * (l - 1) / k <= A_sel) & (A_sel < (1 - eta) * l / k)
        gt = mod2pi(theta[:, l - 1][:, None] - theta[:, l - 1][None, :])
        A_complete += gt * sel
        label[sel] = l
    noisy = A_sel >= 1 - eta
    A_complete += A_noise * noisy

    G = measurement_graph(cfg.model, n, cfg.p, cfg.seed, attempt)
    np.fill_diagonal(A_complete, 0.0)
    T1 = A_complete * G
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    T2 = np.where(upper, T1, 0.0) - np.where(upper.T, T1.T, 0.0)
    A = mod2pi(np.where(T2 >= 0, T2, 0.0))
    lab = np.where(upper, label, 0)
    return A, lab


def gen_offset_graph(cfg: SyntheticConfig):
    """Generate ``(OffsetGraph, GroundTruth)``; retries until weakly connected."""
    theta = gen_ground_truth(cfg.option, cfg.n, cfg.k, cfg.seed)
    for attempt in range(MAX_ATTEMPTS):
        A, lab = _assemble(cfg, theta, attempt)
        g = OffsetGraph.from_dense(A, layers=lab)
        if g.is_weakly_connected():
            return g, GroundTruth(theta, g.layer.copy())
    raise RuntimeError(
        f"no weakly connected graph for {cfg} after {MAX_ATTEMPTS} attempts")


def write_ground_truth(gt: GroundTruth, g: OffsetGraph, path):
    lines = ["# angles: i l theta"]
    n, k = gt.theta.shape
    for i in range(n):
        for l in range(k):
            lines.append(f"{i} {l + 1} {float(gt.theta[i, l])!r}")
    lines.append("# edges: i j layer|noise")
    for e in range(g.m):
        lab = gt.edge_layer[e]
        lines.append(f"{g.src[e]} {g.dst[e]} {'noise' if lab == 0 else int(lab)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ground_truth(path):
    """Returns ``(theta (n, k), edge_rows [(i, j, layer or 0)])``."""
    angles, edges = [], []
    section = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            section = "angles" if "angles" in line else "edges" if "edges" in line else section
            continue
        a, b, c = line.split()
        if section == "angles":
            angles.append((int(a), int(b), float(c)))
        elif section == "edges":
            edges.append((int(a), int(b), 0 if c == "noise" else int(c)))
        else:
            raise ValueError("ground-truth row outside a section")
    n = max(i for i, _, _ in angles) + 1
    k = max(l for _, l, _ in angles)
    theta = np.zeros((n, k))
    for i, l, v in angles:
        theta[i, l - 1] = v
    return theta, edges
