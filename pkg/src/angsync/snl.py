"""Sensor network localization by patch synchronization.

Pipeline: point cloud -> kNN patches -> noisy, rotated patch copies ->
pairwise Procrustes rotations on overlapping patches -> angular
synchronization -> global shift against the true patch rotations ->
rotate back, re-center and average -> ANE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import OffsetGraph, mod2pi
from .metrics import ane
from .synth import gen_ground_truth, substream

log = logging.getLogger(__name__)

SHAPES = ("uniform-square", "gaussian-mixture")
MIXTURE_COMPONENTS = 6


@dataclass
class PointCloud:
    points: np.ndarray                 # (n, 2)
    labels: np.ndarray | None = None   # mixture component per point, if any

    @property
    def n(self):
        return self.points.shape[0]


@dataclass
class Patch:
    center: int
    members: np.ndarray      # global indices, center first
    coords: np.ndarray       # (len(members), 2) local copy
    angle: float = 0.0       # rotation applied to this copy


@dataclass
class PatchGraph:
    graph: OffsetGraph
    overlaps: dict = field(default_factory=dict)   # (i, j) -> overlap count, i < j
    components: list = field(default_factory=list)


def synth_cloud(shape="uniform-square", n=400, seed=0) -> PointCloud:
    """Random 2-D cloud; the mixture variant has components of uneven density."""
    rng = substream(seed, "snl_cloud")
    if shape == "uniform-square":
        return PointCloud(rng.uniform(0.0, 1.0, size=(n, 2)))
    if shape == "gaussian-mixture":
        means = rng.uniform(0.15, 0.85, size=(MIXTURE_COMPONENTS, 2))
        scales = rng.uniform(0.02, 0.12, size=MIXTURE_COMPONENTS)
        labels = rng.integers(0, MIXTURE_COMPONENTS, size=n)
        pts = means[labels] + scales[labels, None] * rng.standard_normal((n, 2))
        return PointCloud(pts, labels)
    raise ValueError(f"unknown cloud shape {shape!r}; expected one of {SHAPES}")


def nearest_neighbors(points, k_patch):
    """Index matrix (n, k_patch + 1): each row is the node then its k_patch nearest others.

    Distances are compared exactly; ties go to the smaller index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n <= k_patch:
        raise ValueError(f"need more than k_patch={k_patch} points, got {n}")
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, -1.0)  # the center always comes first
    idx = np.broadcast_to(np.arange(n), (n, n))
    out = np.empty((n, k_patch + 1), dtype=np.int64)
    for i in range(n):
        order = np.lexsort((idx[i], d2[i]))
        out[i] = order[:k_patch + 1]
    return out


def build_patches(cloud: PointCloud, k_patch=50) -> list:
    nbrs = nearest_neighbors(cloud.points, k_patch)
    return [Patch(i, nbrs[i], cloud.points[nbrs[i]].copy()) for i in range(cloud.n)]


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate_about_centroid(X, theta):
    c = X.mean(axis=0)
    return (X - c) @ rotation(theta).T + c


def perturb_and_rotate(patches, eta, angles, seed=0, axis_std=None) -> list:
    """Independent Gaussian noise per patch copy, then rotation by ``angles[i]``.

    Noise std on each axis is ``eta`` times ``axis_std`` (defaults to the
    per-axis std of all patch coordinates, i.e. of the cloud when every node
    centers a patch).
    """
    angles = np.asarray(angles, dtype=np.float64).ravel()
    if angles.size != len(patches):
        raise ValueError("need one angle per patch")
    if axis_std is None:
        axis_std = np.concatenate([p.coords[:1] for p in patches]).std(axis=0)
    axis_std = np.asarray(axis_std, dtype=np.float64)
    rng = substream(seed, "snl_noise")
    out = []
    for p, th in zip(patches, angles):
        X = p.coords
        if eta > 0:
            X = X + eta * axis_std * rng.standard_normal(X.shape)
        out.append(Patch(p.center, p.members, rotate_about_centroid(X, th), float(th)))
    return out


def procrustes_angle(P, Q) -> float:
    """Rotation angle in [0, 2pi) carrying the centered set ``P`` onto ``Q``.

    Equivalently the minimizer of ``||Q - R(theta) P||_F`` over rotations
    (no reflections).
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 2 or P.shape[0] < 2:
        raise ValueError("P and Q must be matching (m, 2) arrays with m >= 2")
    P = P - P.mean(axis=0)
    Q = Q - Q.mean(axis=0)
    cross = float((P[:, 0] * Q[:, 1] - P[:, 1] * Q[:, 0]).sum())
    dot = float((P * Q).sum())
    if cross == 0.0 and dot == 0.0:
        raise ValueError("degenerate point sets: no rotation is defined")
    return float(mod2pi(np.arctan2(cross, dot)))


def patch_measurement_graph(patches, k_thres=6, seed=0) -> PatchGraph:
    """Offset graph over patches sharing at least ``k_thres`` members.

    The stored orientation of each pair is random; the weight on ``i -> j``
    estimates ``theta_i - theta_j``.
    """
    N = len(patches)
    n_nodes = 1 + max(int(p.members.max()) for p in patches)
    B = np.zeros((N, n_nodes), dtype=np.int32)
    pos = []
    for a, p in enumerate(patches):
        B[a, p.members] = 1
        lookup = np.full(n_nodes, -1, dtype=np.int64)
        lookup[p.members] = np.arange(p.members.size)
        pos.append(lookup)
    O = B @ B.T
    ii, jj = np.nonzero(np.triu(O >= k_thres, 1))
    flip = substream(seed, "snl_direction").random(ii.size) < 0.5
    src, dst, w, overlaps = [], [], [], {}
    for a, b, f in zip(ii, jj, flip):
        shared = np.nonzero(B[a] & B[b])[0]
        overlaps[(int(a), int(b))] = shared.size
        i, j = (b, a) if f else (a, b)
        ang = procrustes_angle(patches[j].coords[pos[j][shared]],
                               patches[i].coords[pos[i][shared]])
        if ang == 0.0:
            continue  # a zero offset cannot be stored
        src.append(i)
        dst.append(j)
        w.append(ang)
    g = OffsetGraph(N, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                    np.array(w, dtype=np.float64))
    labels = g.components()
    comps = [np.nonzero(labels == c)[0] for c in range(int(labels.max()) + 1)]
    if len(comps) > 1:
        log.warning("patch graph has %d components; synchronizing each separately", len(comps))
    return PatchGraph(g, overlaps, comps)


def global_shift(r0, theta, circular=False):
    """Remove the global rotation: ``r = (r0 - delta) mod 2pi``.

    ``delta`` is the arithmetic mean of ``(r0 - theta) mod 2pi``; with
    ``circular=True`` the circular mean is used instead.
    """
    r0 = np.asarray(r0, dtype=np.float64).ravel()
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if r0.shape != theta.shape:
        raise ValueError("r0 and theta must have equal length")
    diff = mod2pi(r0 - theta)
    if circular:
        delta = float(np.angle(np.exp(1j * diff).mean()))
    else:
        delta = float(np.mean(diff))
    return mod2pi(r0 - delta)


def recover_coordinates(patches, r, truth: PointCloud):
    """Un-rotate each patch, re-center on its true members, average per node.

    Returns the recovered cloud and its ANE against ``truth``.
    """
    r = np.asarray(r, dtype=np.float64).ravel()
    n = truth.n
    acc = np.zeros((n, 2))
    cnt = np.zeros(n)
    for p, ang in zip(patches, r):
        X = rotate_about_centroid(p.coords, -ang)
        X = X - X.mean(axis=0) + truth.points[p.members].mean(axis=0)
        np.add.at(acc, p.members, X)
        np.add.at(cnt, p.members, 1.0)
    assert np.all(cnt > 0), "every node lies in its own patch"
    rec = PointCloud(acc / cnt[:, None])
    return rec, ane(rec.points, truth.points)


@dataclass
class SNLResult:
    cloud: PointCloud
    ane: float
    angles: np.ndarray           # shifted patch angles
    true_angles: np.ndarray
    patch_graph: PatchGraph


def synchronize(pg: PatchGraph, solver, theta, circular=False):
    """Run ``solver(graph) -> (N,)`` per component and shift each to the truth."""
    g = pg.graph
    r = np.zeros(g.n)
    for comp in pg.components:
        if comp.size == 1:
            r[comp] = theta[comp]
            continue
        sub = g.subgraph(comp)
        est = np.asarray(solver(sub), dtype=np.float64).reshape(-1)
        r[comp] = global_shift(est, theta[comp], circular=circular)
    return r


def run_pipeline(cloud: PointCloud, solver, eta=0.0, k_patch=50, k_thres=6,
                 option=1, seed=0, circular=False) -> SNLResult:
    """Full localization pipeline; ``solver`` maps an OffsetGraph to angles,
    or is the string ``"exact"`` to inject the true patch rotations."""
    patches = build_patches(cloud, k_patch)
    theta = gen_ground_truth(option, len(patches), 1, seed,
                             rng=substream(seed, "snl_rotations"))[:, 0]
    noisy = perturb_and_rotate(patches, eta, theta, seed, axis_std=cloud.points.std(axis=0))
    pg = patch_measurement_graph(noisy, k_thres, seed)
    if isinstance(solver, str) and solver == "exact":
        r = theta.copy()
    else:
        r = synchronize(pg, solver, theta, circular=circular)
    rec, err = recover_coordinates(noisy, r, cloud)
    return SNLResult(rec, err, r, theta, pg)


def write_cloud(cloud: PointCloud, path, ane_value=None):
    lines = [f"{x!r} {y!r}" for x, y in cloud.points.tolist()]
    if ane_value is not None:
        lines.append(f"# ane={ane_value!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path):
    """Parse ``x y`` lines; returns ``(cloud, ane or None)``."""
    pts, ane_value = [], None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("ane="):
                ane_value = float(line.split("=", 1)[1])
            continue
        x, y = line.split()
        pts.append((float(x), float(y)))
    return PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 2)), ane_value
