"""GNNSync: directed-graph embedding -> angle head -> projected gradient steps.

The embedding is two-hop DIMPA with the identity coefficient fixed to 1::

    Z_s = (I + a_s1 A_s + a_s2 A_s^2) relu(X W_s0) W_s1

and likewise for the target side on ``A^T``.  ``Z = [Z_s | Z_t]`` has
``k * d`` columns; layer ``l`` reads columns ``(l-1)d : ld``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graph import OffsetGraph, NormalizedPair, build_hermitian, row_normalize
from .losses import combined_loss, cycle_loss, residual, upset_loss
from .spectral import projected_power_steps, spectral_rn_sync
from .synth import substream

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
LOSSES = ("upset", "cycle", "sum", "weighted")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class DimpaParams:
    W_s0: ad.Node
    W_s1: ad.Node
    W_t0: ad.Node
    W_t1: ad.Node
    a_s1: ad.Node
    a_s2: ad.Node
    a_t1: ad.Node
    a_t2: ad.Node

    def nodes(self):
        return [self.W_s0, self.W_s1, self.W_t0, self.W_t1,
                self.a_s1, self.a_s2, self.a_t1, self.a_t2]


@dataclass
class HeadParams:
    a: list    # k nodes of shape (d,)
    b: list    # k scalar nodes

    @property
    def k(self):
        return len(self.a)

    @property
    def d(self):
        return self.a[0].shape[0]

    def nodes(self):
        return list(self.a) + list(self.b)


@dataclass
class PGDConfig:
    steps: int = 5
    alphas: tuple | None = None
    trainable: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.alphas is None:
            self.alphas = (1.0,) * self.steps
        if len(self.alphas) != self.steps or any(a < 0 for a in self.alphas):
            raise ValueError("need one non-negative alpha per step")


@dataclass
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 5e-4
    max_epochs: int = 1000
    patience: int = 200
    loss: str = "upset"
    tau: float = 1.0
    seed: int = 0
    d: int = 8
    hidden: int = 16

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.lr <= 0 or self.weight_decay < 0 or self.max_epochs < 0 or self.patience <= 0:
            raise ValueError("invalid training hyperparameters")
        if self.patience > max(self.max_epochs, 1):
            self.patience = max(self.max_epochs, 1)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def parameter_init(seed, d_in, k, d=8, hidden=16):
    """Uniform(+-1/sqrt(fan_in)) weights, hop coefficients 1, zero biases."""
    if (k * d) % 2:
        raise ValueError("k * d must be even to split into source/target halves")
    half = k * d // 2
    rng = substream(seed, "parameters")
    dimpa = DimpaParams(
        W_s0=ad.param(_uniform(rng, d_in, (d_in, hidden)), "W_s0"),
        W_s1=ad.param(_uniform(rng, hidden, (hidden, half)), "W_s1"),
        W_t0=ad.param(_uniform(rng, d_in, (d_in, hidden)), "W_t0"),
        W_t1=ad.param(_uniform(rng, hidden, (hidden, half)), "W_t1"),
        a_s1=ad.param(1.0, "a_s1"), a_s2=ad.param(1.0, "a_s2"),
        a_t1=ad.param(1.0, "a_t1"), a_t2=ad.param(1.0, "a_t2"),
    )
    head = HeadParams(
        a=[ad.param(_uniform(rng, d, (d,)), f"a{l + 1}") for l in range(k)],
        b=[ad.param(0.0, f"b{l + 1}") for l in range(k)],
    )
    return dimpa, head


def _side(A_norm, X, W0, W1, a1, a2):
    Y = ad.relu(X @ W0) @ W1
    AY = A_norm @ Y
    return Y + a1 * AY + a2 * (A_norm @ AY)


def dimpa_embed(norm: NormalizedPair, X, p: DimpaParams) -> ad.Node:
    X = ad.const(X)
    if X.value.ndim != 2 or X.shape[0] != norm.source.shape[0]:
        raise ValueError("features must be an (n, d_in) matrix")
    Zs = _side(ad.const(norm.source), X, p.W_s0, p.W_s1, p.a_s1, p.a_s2)
    Zt = _side(ad.const(norm.target), X, p.W_t0, p.W_t1, p.a_t1, p.a_t2)
    return ad.concat([Zs, Zt], axis=1)


def initial_angles(Z, head: HeadParams, k=None):
    """``2pi * sigmoid(Z[:, (l-1)d:ld] . a_l + b_l)`` for each layer; list of columns."""
    Z = ad.const(Z)
    k = head.k if k is None else k
    d = head.d
    if Z.shape[1] != k * d:
        raise ValueError(f"embedding width {Z.shape[1]} != k*d = {k * d}")
    cols = []
    for l in range(k):
        zl = ad.take(Z, (slice(None), slice(l * d, (l + 1) * d)))
        cols.append(ad.sigmoid(zl @ head.a[l] + head.b[l]) * TWO_PI)
    return cols


def projected_gradient(r0_cols, H, cfg: PGDConfig, alphas=None):
    """Projected gradient steps on the tape, via real cos/sin/atan2 pairs."""
    Hr = ad.const(np.ascontiguousarray(H.real))
    Hi = ad.const(np.ascontiguousarray(H.imag))
    if alphas is None:
        alphas = [ad.const(a) for a in cfg.alphas]
    out = []
    for y in r0_cols:
        y = ad.const(y)
        if cfg.steps == 0:
            out.append(y)
            continue
        for s in range(cfg.steps):
            c, sn = ad.cos(y), ad.sin(y)
            re = alphas[s] * c + (Hr @ c - Hi @ sn)
            im = alphas[s] * sn + (Hr @ sn + Hi @ c)
            y = ad.atan2(im, re)
        out.append(ad.mod2pi(y))
    return out


@dataclass
class GNNSync:
    dimpa: DimpaParams
    head: HeadParams
    pgd: PGDConfig = field(default_factory=PGDConfig)
    alphas: list | None = None

    @property
    def k(self):
        return self.head.k

    def parameters(self):
        ps = self.dimpa.nodes() + self.head.nodes()
        if self.alphas is not None:
            ps += list(self.alphas)
        return ps

    def forward(self, norm, X, H, with_r0=False):
        Z = dimpa_embed(norm, X, self.dimpa)
        r0 = initial_angles(Z, self.head)
        cols = projected_gradient(r0, H, self.pgd, self.alphas)
        r = ad.stack(cols, axis=1)
        if with_r0:
            return r, ad.stack(r0, axis=1)
        return r

    def named_tensors(self):
        out = {}
        for node in self.parameters():
            out[node.name] = node.value
        return out


def build_model(d_in, k, seed=0, d=8, hidden=16, pgd: PGDConfig | None = None):
    dimpa, head = parameter_init(seed, d_in, k, d=d, hidden=hidden)
    pgd = pgd or PGDConfig()
    alphas = None
    if pgd.trainable:
        alphas = [ad.param(a, f"alpha{s + 1}") for s, a in enumerate(pgd.alphas)]
    return GNNSync(dimpa, head, pgd, alphas)


@dataclass
class TrainResult:
    model: GNNSync
    angles: np.ndarray
    loss_trace: list
    best_trace: list
    best_epoch: int
    best_loss: float


def default_features(g: OffsetGraph, k):
    return spectral_rn_sync(g, k)


def train(g: OffsetGraph, X=None, k=1, tcfg: TrainConfig | None = None,
          pcfg: PGDConfig | None = None, model: GNNSync | None = None) -> TrainResult:
    """Full-graph SGD training; returns the best-loss parameters and their angles."""
    tcfg = tcfg or TrainConfig()
    pcfg = pcfg or PGDConfig()
    if X is None:
        X = default_features(g, k)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    norm = row_normalize(g)
    H = build_hermitian(g)
    if model is None:
        model = build_model(X.shape[1], k, seed=tcfg.seed, d=tcfg.d, hidden=tcfg.hidden, pgd=pcfg)
    params = model.parameters()

    best = math.inf
    best_state = [p.value.copy() for p in params]
    best_epoch, since_best = -1, 0
    trace, best_trace = [], []
    for epoch in range(tcfg.max_epochs):
        r = model.forward(norm, X, H)
        loss = combined_loss(g, r, k, tcfg.loss, tcfg.tau)
        val = float(loss.value)
        if not math.isfinite(val):
            raise TrainingDiverged(f"loss became {val} at epoch {epoch}")
        trace.append(val)
        if val < best:
            best, best_epoch, since_best = val, epoch, 0
            best_state = [p.value.copy() for p in params]
        else:
            since_best += 1
        best_trace.append(best)
        if since_best >= tcfg.patience:
            log.info("early stop at epoch %d (best %.6g at %d)", epoch, best, best_epoch)
            break
        ad.backward(loss)
        ad.sgd_step(params, tcfg.lr, tcfg.weight_decay)

    for p, v in zip(params, best_state):
        p.value = v
    angles = model.forward(norm, X, H).value.copy()
    if not math.isfinite(best):
        best = float(combined_loss(g, angles, k, tcfg.loss, tcfg.tau).value)
    return TrainResult(model, angles, trace, best_trace, best_epoch, best)


def post_process(angles, g: OffsetGraph, steps=5, alpha=1.0):
    """Apply the projected steps once, outside training."""
    return projected_power_steps(angles, build_hermitian(g), steps, [alpha] * steps)


def evaluate_losses(g: OffsetGraph, angles, k):
    res = residual(g, angles, k)
    return float(upset_loss(res).value), float(cycle_loss(g, angles, k, res=res).value)


# -- stability bound ----------------------------------------------------------

def _fro(M):
    return float(np.sqrt((np.asarray(M) ** 2).sum()))


def initial_angles_numpy(dimpa: DimpaParams, head: HeadParams, A_s, A_t, X):
    norm = NormalizedPair(np.asarray(A_s), np.asarray(A_t), 0.0)
    Z = dimpa_embed(norm, X, dimpa)
    return ad.stack(initial_angles(Z, head), axis=1).value


def stability_bound(p: DimpaParams, head: HeadParams, A_s, A_s_hat, A_t, A_t_hat, X, X_hat):
    """Perturbation bound on the initial angles and the realized change.

    Returns ``(bound, lhs, parts)`` with ``bound = B_s eps_s + B_t eps_t + B_f eps_f``
    and ``lhs = ||r0 - r0_hat||_F``.
    """
    A_s, A_s_hat, A_t, A_t_hat = map(np.asarray, (A_s, A_s_hat, A_t, A_t_hat))
    X, X_hat = np.asarray(X, dtype=np.float64), np.asarray(X_hat, dtype=np.float64)
    if not (A_s.shape == A_s_hat.shape == A_t.shape == A_t_hat.shape):
        raise ValueError("adjacency shapes differ")
    if X.shape != X_hat.shape:
        raise ValueError("feature shapes differ")
    n = A_s.shape[0]
    I = np.eye(n)
    v = {node.name: node.value for node in p.nodes()}

    eps_s = _fro(A_s - A_s_hat)
    eps_t = _fro(A_t - A_t_hat)
    eps_f = _fro(X - X_hat)

    def relu(M):
        return np.maximum(M, 0.0)

    B_s0 = _fro((v["a_s1"] * I + v["a_s2"] * (A_s + A_s_hat))
                @ relu(X @ v["W_s0"]) @ v["W_s1"])
    B_t0 = _fro((v["a_t1"] * I + v["a_t2"] * (A_t + A_t_hat))
                @ relu(X @ v["W_t0"]) @ v["W_t1"])
    B_fs = (_fro(I + v["a_s1"] * A_s_hat + v["a_s2"] * A_s_hat @ A_s_hat)
            * _fro(v["W_s1"]) * _fro(v["W_s0"]))
    B_ft = (_fro(I + v["a_t1"] * A_t_hat + v["a_t2"] * A_t_hat @ A_t_hat)
            * _fro(v["W_t1"]) * _fro(v["W_t0"]))
    B_s, B_t, B_f = TWO_PI * B_s0, TWO_PI * B_t0, TWO_PI * (B_fs + B_ft)
    bound = B_s * eps_s + B_t * eps_t + B_f * eps_f

    r0 = initial_angles_numpy(p, head, A_s, A_t, X)
    r0_hat = initial_angles_numpy(p, head, A_s_hat, A_t_hat, X_hat)
    lhs = _fro(r0 - r0_hat)
    parts = {"eps_s": eps_s, "eps_t": eps_t, "eps_f": eps_f, "B_s": B_s, "B_t": B_t, "B_f": B_f}
    return bound, lhs, parts


# -- checkpoint format ----------------------------------------------------------
# text header (one "name dims" line per tensor, then "end"), followed by the
# tensors as little-endian float64 in header order.

_MAGIC = "angsync-checkpoint 1"


def save_checkpoint(tensors: dict, path):
    header = [_MAGIC, f"tensors {len(tensors)}"]
    blobs = []
    for name, val in tensors.items():
        arr = np.asarray(val, dtype="<f8")
        dims = "x".join(str(s) for s in arr.shape) or "scalar"
        header.append(f"{name} {dims}")
        blobs.append(arr.tobytes(order="C"))
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> dict:
    data = Path(path).read_bytes()
    out, pos = {}, 0
    lines = []
    while True:
        nl = data.index(b"\n", pos)
        line = data[pos:nl].decode("ascii")
        pos = nl + 1
        if line == "end":
            break
        lines.append(line)
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not an angsync checkpoint")
    count = int(lines[1].split()[1])
    for line in lines[2:2 + count]:
        name, dims = line.split()
        shape = () if dims == "scalar" else tuple(int(s) for s in dims.split("x"))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        out[name] = arr.astype(np.float64)
        pos += 8 * size
    return out


def load_into(model: GNNSync, tensors: dict):
    for node in model.parameters():
        if node.name not in tensors:
            raise KeyError(f"checkpoint lacks tensor {node.name!r}")
        val = np.asarray(tensors[node.name])
        if val.shape != node.value.shape:
            raise ValueError(f"shape mismatch for {node.name}")
        node.value = val.copy()
