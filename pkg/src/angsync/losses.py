"""Upset and cycle-inconsistency losses, built on :mod:`angsync.autodiff`.

Angle matrices ``r`` may be plain arrays (n, k) or tape nodes.  Residuals
live on the stored edges only, as vectors of length ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .graph import TWO_PI, OffsetGraph


def _columns(r, k):
    r = ad.const(r)
    if r.value.ndim == 1:
        r = ad.Node(r.value[:, None], (r,), lambda g: (g[:, 0],))
    if r.shape[1] != k:
        raise ValueError(f"r has {r.shape[1]} columns, expected k={k}")
    return [ad.take(r, (slice(None), l)) for l in range(k)]


@dataclass
class ResidualSet:
    graph: OffsetGraph
    layers: list          # per-layer residual nodes, shape (m,)
    combined: ad.Node     # elementwise min over layers

    @property
    def k(self):
        return len(self.layers)

    @property
    def t(self):
        return self.graph.t

    def _dense(self, vec):
        M = np.zeros((self.graph.n, self.graph.n))
        M[self.graph.src, self.graph.dst] = vec
        return M

    def dense(self, layer=None):
        """Dense residual matrix; ``layer`` is 1-based, None gives the combined M."""
        if layer is None:
            return self._dense(self.combined.value)
        return self._dense(self.layers[layer - 1].value)


def residual(g: OffsetGraph, r, k=1) -> ResidualSet:
    """Wrapped residuals ``min((T - A) mod 2pi, (A - T) mod 2pi)`` on each edge."""
    if g.m == 0:
        raise ValueError("graph has no edges")
    nz = g.weight != 0
    src, dst, A = g.src[nz], g.dst[nz], g.weight[nz]
    if not nz.all():
        g = OffsetGraph(g.n, src, dst, A)
    cols = _columns(r, k)
    layers = []
    for col in cols:
        T = ad.mod2pi(ad.take(col, src) - ad.take(col, dst))
        layers.append(ad.minimum(ad.mod2pi(T - A), ad.mod2pi(A - T)))
    M = layers[0]
    for Ml in layers[1:]:
        M = ad.minimum(M, Ml)
    return ResidualSet(g, layers, M)


def upset_loss(res: ResidualSet) -> ad.Node:
    """``||M||_F / t``."""
    if res.t == 0:
        raise ValueError("upset loss undefined on an empty graph")
    return ad.frobenius_norm(res.combined) / res.t


@dataclass
class ConfidenceMatrix:
    graph: OffsetGraph
    values: ad.Node       # normalized confidence on each edge, shape (m,)

    def dense(self):
        C = np.zeros((self.graph.n, self.graph.n))
        C[self.graph.src, self.graph.dst] = self.values.value
        return C


def confidence(res: ResidualSet, g: OffsetGraph | None = None) -> ConfidenceMatrix:
    """Edge confidence ``1/(1+M)``, rescaled to preserve ``sum A``."""
    g = res.graph
    A = g.weight
    total = float(A.sum())
    if total <= 0:
        raise ValueError("cannot normalize confidence: total edge weight is zero")
    C = ad.reciprocal(res.combined + 1.0)
    weighted = ad.sum_(ad.mul(C, A))
    return ConfidenceMatrix(g, ad.mul(C, ad.reciprocal(weighted)) * total)


@dataclass
class GraphAssignment:
    graph: OffsetGraph
    labels: np.ndarray    # (m,), values 1..k

    def dense(self):
        """Symmetric label matrix, 0 off the edges."""
        L = np.zeros((self.graph.n, self.graph.n), dtype=np.int64)
        L[self.graph.src, self.graph.dst] = self.labels
        L[self.graph.dst, self.graph.src] = self.labels
        return L


def assign_edges(res: ResidualSet) -> GraphAssignment:
    """``argmin_l M^(l)`` per edge; ties go to the smallest layer index."""
    stacked = np.stack([Ml.value for Ml in res.layers])
    return GraphAssignment(res.graph, np.argmin(stacked, axis=0) + 1)


@dataclass
class ReweightedSkew:
    """Both orientations of the reweighted offsets.

    ``values[e]`` is the stored orientation of edge ``e`` and
    ``values[m + e]`` its reverse.
    """

    graph: OffsetGraph
    values: ad.Node

    def position(self):
        """Dense lookup ``P[i, j]`` -> index into ``values`` (-1 off the edges)."""
        g = self.graph
        P = -np.ones((g.n, g.n), dtype=np.int64)
        P[g.src, g.dst] = np.arange(g.m)
        P[g.dst, g.src] = np.arange(g.m) + g.m
        return P

    def dense(self):
        g = self.graph
        V = np.zeros((g.n, g.n))
        V[g.src, g.dst] = self.values.value[:g.m]
        V[g.dst, g.src] = self.values.value[g.m:]
        return V


def reweighted_skew(g: OffsetGraph, conf: ConfidenceMatrix) -> ReweightedSkew:
    """``(A*C - (A*C)^T) mod 2pi`` with both orientations populated."""
    g = conf.graph
    wc = ad.mul(conf.values, g.weight)
    return ReweightedSkew(g, ad.concat([ad.mod2pi(wc), ad.mod2pi(-wc)]))


def wrapped_abs(S):
    """``min(S mod 2pi, -S mod 2pi)`` on the tape."""
    return ad.minimum(ad.mod2pi(S), ad.mod2pi(-S))


def layer_triangles(skew: ReweightedSkew, assignment: GraphAssignment, layer: int):
    """Undirected triangles of the layer subgraph with positive reweighted entries."""
    g = skew.graph
    v = skew.values.value
    keep = (assignment.labels == layer) & (v[:g.m] > 0) & (v[g.m:] > 0)
    mask = np.zeros((g.n, g.n), dtype=np.uint8)
    mask[g.src[keep], g.dst[keep]] = 1
    mask[g.dst[keep], g.src[keep]] = 1
    return kernels.triangles_undirected(mask)


def cycle_loss(g: OffsetGraph, r, k=1, res: ResidualSet | None = None) -> ad.Node:
    """Mean 3-cycle inconsistency of the confidence-reweighted graph, averaged over layers.

    Each undirected triangle is counted once; every orientation of a triangle
    has the same wrapped inconsistency, so the mean matches the ordered-triple
    definition.  Layers without triangles contribute 0.  The edge assignment
    is treated as a constant.
    """
    if res is None:
        res = residual(g, r, k)
    conf = confidence(res)
    assignment = assign_edges(res)
    skew = reweighted_skew(res.graph, conf)
    P = skew.position()
    total = ad.const(0.0)
    for layer in range(1, res.k + 1):
        tri = layer_triangles(skew, assignment, layer)
        if tri.shape[0] == 0:
            continue
        i, j, q = tri[:, 0], tri[:, 1], tri[:, 2]
        S = (ad.take(skew.values, P[i, j]) + ad.take(skew.values, P[j, q])
             + ad.take(skew.values, P[q, i]))
        total = total + ad.mean(wrapped_abs(S))
    return total / res.k


def combined_loss(g: OffsetGraph, r, k=1, kind="upset", tau=1.0):
    """Training objective by name: upset, cycle, sum, or weighted (cycle + tau*upset)."""
    res = residual(g, r, k)
    if kind == "upset":
        return upset_loss(res)
    if kind == "cycle":
        return cycle_loss(g, r, k, res=res)
    if kind == "sum":
        return upset_loss(res) + cycle_loss(g, r, k, res=res)
    if kind == "weighted":
        return cycle_loss(g, r, k, res=res) + upset_loss(res) * tau
    raise ValueError(f"unknown loss {kind!r}")


def triangle_inconsistency(g: OffsetGraph):
    """Wrapped 3-cycle sums of the two-sided offsets on every undirected triangle."""
    V = g.offsets_full()
    tri = kernels.triangles_undirected(np.ascontiguousarray(g.undirected_mask()))
    if tri.shape[0] == 0:
        return np.zeros(0)
    i, j, q = tri.T
    S = V[i, j] + V[j, q] + V[q, i]
    r = np.mod(S, TWO_PI)
    return np.minimum(r, TWO_PI - r)
