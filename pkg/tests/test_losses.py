import itertools
import math

import numpy as np
import pytest

from angsync import autodiff as ad
from angsync.graph import TWO_PI, OffsetGraph, mod2pi
from angsync.losses import (assign_edges, combined_loss, confidence, cycle_loss, residual,
                            reweighted_skew, triangle_inconsistency, upset_loss)
from angsync.synth import SyntheticConfig, gen_offset_graph
from conftest import finite_diff, rel_err


def wrap(x):
    x = x % TWO_PI
    return min(x, TWO_PI - x)


def small_instance(seed, n=12, k=1, eta=0.4, p=0.6):
    g, gt = gen_offset_graph(SyntheticConfig(n=n, p=p, k=k, eta=eta, seed=seed))
    r = np.random.default_rng(seed).uniform(0, TWO_PI, (n, k))
    return g, gt, r


def scalar_residuals(g, r):
    """Per-layer residual matrices via plain loops."""
    n, k = r.shape
    A = g.dense()
    Ms = []
    for l in range(k):
        M = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if A[i, j] != 0:
                    T = (r[i, l] - r[j, l]) % TWO_PI
                    M[i, j] = min((T - A[i, j]) % TWO_PI, (A[i, j] - T) % TWO_PI)
        Ms.append(M)
    return Ms


def scalar_cycle_loss(g, r):
    """Cycle loss over ordered triples, written straight from the definitions."""
    n, k = r.shape
    A = g.dense()
    Ms = scalar_residuals(g, r)
    M = np.minimum.reduce(Ms)
    on = A != 0
    C = np.where(on, 1.0 / (1.0 + M), 0.0)
    Ct = C * A.sum() / (A * C).sum()
    lab = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            if on[i, j]:
                lab[i, j] = lab[j, i] = 1 + int(np.argmin([Ml[i, j] for Ml in Ms]))
    W = A * Ct
    At = (W - W.T) % TWO_PI
    total = 0.0
    for l in range(1, k + 1):
        Al = np.where(lab == l, At, 0.0)
        vals = [wrap(Al[i, j] + Al[j, q] + Al[q, i])
                for i, j, q in itertools.permutations(range(n), 3)
                if Al[i, j] * Al[j, q] * Al[q, i] > 0]
        total += np.mean(vals) if vals else 0.0
    return total / k


def test_residual_examples():
    g = OffsetGraph.from_edges(2, [(0, 1, 6.0)])
    res = residual(g, np.array([[1.0], [0.0]]))
    assert float(res.combined.value[0]) == pytest.approx(1.2831853, abs=1e-7)
    assert res.dense()[0, 1] == pytest.approx(1.2831853, abs=1e-7)
    with pytest.raises(ValueError):
        residual(g, np.zeros((2, 2)), k=1)


def test_residual_zero_at_noiseless_truth():
    g, gt = gen_offset_graph(SyntheticConfig(n=40, p=0.3, seed=1))
    res = residual(g, gt.theta)
    assert np.max(res.combined.value) <= 1e-12
    assert float(upset_loss(res).value) <= 1e-12


def test_residual_multi_layer_matches_loop():
    g, gt, r = small_instance(3, k=2)
    Ms = scalar_residuals(g, r)
    res = residual(g, r, 2)
    for l in range(2):
        np.testing.assert_allclose(res.dense(l + 1), Ms[l], atol=1e-12)
    np.testing.assert_allclose(res.dense(), np.minimum(Ms[0], Ms[1]), atol=1e-12)
    assert np.all((res.combined.value >= 0) & (res.combined.value <= math.pi + 1e-12))


def test_upset_examples():
    g = OffsetGraph.from_edges(2, [(0, 1, math.pi)])
    assert float(upset_loss(residual(g, np.zeros((2, 1)))).value) == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        residual(OffsetGraph(3, [], [], []), np.zeros((3, 1)))


def test_upset_scalar_and_gradient():
    for seed in range(3):
        g, _, r = small_instance(seed)
        Ms = scalar_residuals(g, r)
        ref = math.sqrt((Ms[0] ** 2).sum()) / g.t
        assert float(combined_loss(g, r, 1, "upset").value) == pytest.approx(ref, abs=1e-12)
        p = ad.param(r)
        ad.backward(combined_loss(g, p, 1, "upset"))
        fd = finite_diff(lambda v: float(combined_loss(g, v, 1, "upset").value), r)
        assert rel_err(p.grad, fd) <= 1e-4


def test_confidence_examples():
    g = OffsetGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    r = np.array([[1.0], [0.0], [-1.0 - math.pi]])  # residuals (0, pi)
    res = residual(g, r)
    np.testing.assert_allclose(res.combined.value, [0.0, math.pi], atol=1e-12)
    C = np.array([1.0, 1.0 / (1.0 + math.pi)])
    factor = 2.0 / C.sum()
    np.testing.assert_allclose(confidence(res).values.value, C * factor, atol=1e-12)

    g2, gt = gen_offset_graph(SyntheticConfig(n=20, p=0.5, seed=2))
    np.testing.assert_allclose(confidence(residual(g2, gt.theta)).values.value, 1.0, atol=1e-12)


def test_confidence_normalization_identity():
    for seed in range(5):
        g, _, r = small_instance(seed, n=20, k=2)
        C = confidence(residual(g, r, 2))
        assert (g.weight * C.values.value).sum() == pytest.approx(g.weight.sum(), abs=1e-9)
        assert np.all(C.dense() >= 0)


def test_assign_edges_examples():
    g, _, r = small_instance(0)
    assert np.all(assign_edges(residual(g, r, 1)).labels == 1)
    g = OffsetGraph.from_edges(2, [(0, 1, 1.0)])
    # layer 1 residual 0.1, layer 2 residual 0.9
    r = np.array([[1.1, 1.9], [0.0, 0.0]])
    assert assign_edges(residual(g, r, 2)).labels.tolist() == [1]
    r = np.array([[1.5, 0.5], [0.0, 0.0]])  # tie at 0.5
    a = assign_edges(residual(g, r, 2))
    assert a.labels.tolist() == [1]
    L = a.dense()
    assert L[0, 1] == L[1, 0] == 1


def test_assignment_recovers_hidden_labels():
    g, gt = gen_offset_graph(SyntheticConfig(n=60, p=0.4, k=2, seed=4))
    a = assign_edges(residual(g, gt.theta, 2))
    clean = gt.edge_layer > 0
    assert np.array_equal(a.labels[clean], gt.edge_layer[clean])


def test_reweighted_skew_examples():
    g, _, r = small_instance(5)
    ones = type(confidence(residual(g, r)))(g, ad.const(np.ones(g.m)))
    V = reweighted_skew(g, ones).dense()
    np.testing.assert_allclose(V[g.src, g.dst], g.weight)
    np.testing.assert_allclose(V[g.dst, g.src], mod2pi(-g.weight))
    c = np.ones(g.m)
    c[0] = 0.0
    V0 = reweighted_skew(g, type(ones)(g, ad.const(c))).dense()
    assert V0[g.src[0], g.dst[0]] == 0 and V0[g.dst[0], g.src[0]] == 0


def test_reweighted_skew_orientations_cancel():
    g, _, r = small_instance(6, n=20, k=2)
    V = reweighted_skew(g, confidence(residual(g, r, 2))).dense()
    s = mod2pi(V[g.src, g.dst] + V[g.dst, g.src])
    assert np.all(np.minimum(s, TWO_PI - s) < 1e-12)
    assert np.all((V >= 0) & (V < TWO_PI))


def test_cycle_loss_zero_at_noiseless_truth():
    for k in (1, 2):
        g, gt = gen_offset_graph(SyntheticConfig(n=40, p=0.4, k=k, seed=8))
        assert float(cycle_loss(g, gt.theta, k).value) <= 1e-9


def test_cycle_loss_single_triangle():
    a = math.pi / 3
    g = OffsetGraph.from_edges(3, [(0, 1, a), (1, 2, a), (2, 0, a)])
    assert float(cycle_loss(g, np.zeros((3, 1))).value) == pytest.approx(math.pi, abs=1e-12)


def test_cycle_loss_without_triangles_is_zero():
    g = OffsetGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 2.0)])
    assert float(cycle_loss(g, np.zeros((3, 1))).value) == 0.0


def test_cycle_loss_matches_triple_loop_and_fd():
    for seed in range(3):
        g, _, r = small_instance(seed, k=2)
        val = float(cycle_loss(g, r, 2).value)
        assert val == pytest.approx(scalar_cycle_loss(g, r), abs=1e-10)
        p = ad.param(r)
        ad.backward(cycle_loss(g, p, 2))
        fd = finite_diff(lambda v: float(cycle_loss(g, v, 2).value), r)
        assert rel_err(p.grad, fd) <= 1e-4


def test_losses_invariant_to_global_shift():
    g, _, r = small_instance(9, n=20, k=2)
    shifted = mod2pi(r + np.array([0.7, 2.9]))
    for kind in ("upset", "cycle"):
        a = float(combined_loss(g, r, 2, kind).value)
        b = float(combined_loss(g, shifted, 2, kind).value)
        assert a == pytest.approx(b, abs=1e-10)


def test_combined_variants():
    g, _, r = small_instance(2)
    u = float(combined_loss(g, r, 1, "upset").value)
    c = float(combined_loss(g, r, 1, "cycle").value)
    assert float(combined_loss(g, r, 1, "sum").value) == pytest.approx(u + c, abs=1e-12)
    assert float(combined_loss(g, r, 1, "weighted", tau=0.3).value) == pytest.approx(c + 0.3 * u)
    with pytest.raises(ValueError):
        combined_loss(g, r, 1, "nope")


def test_upset_gradient_descent_decreases_loss():
    ok = 0
    for seed in range(10):
        g, _, r = small_instance(seed, n=15, eta=0.2)
        p = ad.param(r)
        start = float(combined_loss(g, p, 1, "upset").value)
        for _ in range(50):
            loss = combined_loss(g, p, 1, "upset")
            ad.backward(loss)
            ad.sgd_step([p], lr=0.5)
        ok += float(combined_loss(g, p, 1, "upset").value) < start
    assert ok >= 9


def test_triangle_inconsistency_noiseless():
    g, _ = gen_offset_graph(SyntheticConfig(model="RGGO", n=60, p=0.2, seed=1))
    vals = triangle_inconsistency(g)
    assert vals.size > 0 and np.max(vals) <= 1e-9
