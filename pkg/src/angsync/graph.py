"""Offset graphs and their matrix views.

An offset graph stores, for each measured pair, a single directed edge
``(i, j, w)`` where ``w`` estimates ``(theta_i - theta_j) mod 2pi``.  The
reverse offset is implied (``-w mod 2pi``) and never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

TWO_PI = 2.0 * math.pi


def mod2pi(x):
    """Reduce angles to ``[0, 2pi)``.

    Works on scalars and arrays.  Results that round up to exactly ``2pi``
    are wrapped to 0 so the half-open range always holds.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("mod2pi: non-finite input")
    out = np.mod(arr, TWO_PI)
    out = np.where(out >= TWO_PI, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def wrapped_distance(x):
    """Circular distance to 0, ``min(x mod 2pi, -x mod 2pi)``, in ``[0, pi]``."""
    r = mod2pi(x)
    return np.minimum(r, TWO_PI - r)


@dataclass(frozen=True)
class OffsetGraph:
    """Directed weighted graph of pairwise angle offsets.

    ``layer`` holds generator labels (1..k for clean edges, 0 for noise).
    Solvers must not read it.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    layer: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        w = np.asarray(self.weight, dtype=np.float64)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "weight", w)
        if self.layer is not None:
            object.__setattr__(self, "layer", np.asarray(self.layer, dtype=np.int64))
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise ValueError("src, dst and weight must be equal-length vectors")
        if self.layer is not None and self.layer.shape != src.shape:
            raise ValueError("layer labels must match the edge count")
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if src.size:
            if src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= self.n:
                raise ValueError("edge endpoint out of range")
            if np.any(src == dst):
                raise ValueError("self-loops are not allowed")
            if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w >= TWO_PI):
                raise ValueError("edge weights must lie in [0, 2pi)")
            lo = np.minimum(src, dst)
            hi = np.maximum(src, dst)
            key = lo * self.n + hi
            if np.unique(key).size != key.size:
                raise ValueError("at most one direction may be stored per pair")

    @classmethod
    def from_edges(cls, n, edges, layers=None):
        """Build from ``(i, j, w)`` triples; zero offsets are dropped."""
        edges = list(edges)
        if edges:
            arr = np.asarray(edges, dtype=np.float64).reshape(-1, 3)
        else:
            arr = np.zeros((0, 3))
        keep = arr[:, 2] != 0
        lab = None
        if layers is not None:
            lab = np.asarray(layers, dtype=np.int64)[keep]
        arr = arr[keep]
        return cls(n, arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2], lab)

    @classmethod
    def from_dense(cls, A, layers=None):
        """Build from a dense adjacency with at most one nonzero per pair."""
        A = np.asarray(A, dtype=np.float64)
        i, j = np.nonzero(A)
        lab = None if layers is None else np.asarray(layers)[i, j]
        return cls(A.shape[0], i, j, A[i, j], lab)

    @property
    def m(self):
        return int(self.src.size)

    @property
    def t(self):
        """Number of nonzero entries in the adjacency matrix."""
        return int(np.count_nonzero(self.weight))

    def dense(self):
        """Adjacency matrix A, one direction per pair."""
        if "A" not in self._cache:
            A = np.zeros((self.n, self.n))
            A[self.src, self.dst] = self.weight
            self._cache["A"] = A
        return self._cache["A"]

    def skew(self):
        """Real skew matrix: +w on the stored direction, -w on the reverse."""
        S = np.zeros((self.n, self.n))
        S[self.src, self.dst] = self.weight
        S[self.dst, self.src] = -self.weight
        return S

    def offsets_full(self):
        """Both orientations reduced to ``[0, 2pi)``; zero off the edges."""
        V = np.zeros((self.n, self.n))
        V[self.src, self.dst] = self.weight
        V[self.dst, self.src] = mod2pi(-self.weight)
        return V

    def undirected_mask(self):
        M = np.zeros((self.n, self.n), dtype=np.uint8)
        nz = self.weight != 0
        M[self.src[nz], self.dst[nz]] = 1
        M[self.dst[nz], self.src[nz]] = 1
        return M

    def is_weakly_connected(self):
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        if self.n == 1:
            return True
        adj = coo_matrix((np.ones(self.m), (self.src, self.dst)), shape=(self.n, self.n))
        ncomp, _ = connected_components(adj, directed=True, connection="weak")
        return ncomp == 1

    def components(self):
        """Weakly connected component label per node."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        adj = coo_matrix((np.ones(self.m), (self.src, self.dst)), shape=(self.n, self.n))
        _, labels = connected_components(adj, directed=True, connection="weak")
        return labels

    def subgraph(self, nodes):
        """Induced subgraph on ``nodes`` (relabelled 0..len-1)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = -np.ones(self.n, dtype=np.int64)
        remap[nodes] = np.arange(nodes.size)
        keep = (remap[self.src] >= 0) & (remap[self.dst] >= 0)
        lab = None if self.layer is None else self.layer[keep]
        return OffsetGraph(int(nodes.size), remap[self.src[keep]], remap[self.dst[keep]],
                           self.weight[keep], lab)


def build_hermitian(g: OffsetGraph) -> np.ndarray:
    """H with ``H_ij = exp(i w)`` on stored edges and the conjugate on the reverse."""
    H = np.zeros((g.n, g.n), dtype=np.complex128)
    nz = g.weight != 0
    z = np.exp(1j * g.weight[nz])
    H[g.src[nz], g.dst[nz]] = z
    H[g.dst[nz], g.src[nz]] = np.conj(z)
    return H


@dataclass(frozen=True)
class NormalizedPair:
    source: np.ndarray
    target: np.ndarray
    tau: float


def _row_normalize_dense(A, tau):
    At = A + tau * np.eye(A.shape[0])
    return At / At.sum(axis=1, keepdims=True)


def row_normalize(g: OffsetGraph, tau: float = 0.5) -> NormalizedPair:
    """Self-loop weight ``tau`` then row-normalize A (source) and A^T (target)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    A = g.dense()
    return NormalizedPair(_row_normalize_dense(A, tau), _row_normalize_dense(A.T, tau), tau)


def triangles(g: OffsetGraph) -> np.ndarray:
    """Directed 3-cycles ``(i, j, q)`` with ``A_ij * A_jq * A_qi > 0``.

    Each cycle appears once, rotated so that its smallest node comes first.
    """
    mask = np.ascontiguousarray(g.dense() > 0, dtype=np.uint8)
    return kernels.triangles_directed(mask)


# -- edge-list text format ---------------------------------------------------

def write_edgelist(g: OffsetGraph, path, k: int = 1):
    lines = [f"# n={g.n} k={k}"]
    for e in range(g.m):
        row = f"{g.src[e]} {g.dst[e]} {float(g.weight[e])!r}"
        if g.layer is not None:
            row += f" {g.layer[e]}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path):
    """Parse the edge-list format; returns ``(graph, k)``."""
    n = k = None
    src, dst, w, lab = [], [], [], []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("n="):
                    n = int(tok[2:])
                elif tok.startswith("k="):
                    k = int(tok[2:])
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise ValueError(f"bad edge line: {raw!r}")
        src.append(int(parts[0]))
        dst.append(int(parts[1]))
        w.append(float(parts[2]))
        if len(parts) == 4:
            lab.append(int(parts[3]))
    if n is None:
        raise ValueError("missing '# n=<N>' header")
    if lab and len(lab) != len(src):
        raise ValueError("layer column present on some rows only")
    g = OffsetGraph(n, np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64),
                    np.asarray(w, dtype=np.float64), np.asarray(lab) if lab else None)
    return g, (k if k is not None else 1)
