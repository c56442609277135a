import math

import numpy as np
import pytest

from angsync import autodiff as ad
from angsync.graph import TWO_PI, NormalizedPair, OffsetGraph, build_hermitian, mod2pi, row_normalize
from angsync.metrics import mse
from angsync.model import (PGDConfig, TrainConfig, TrainingDiverged, _uniform, build_model,
                           dimpa_embed, evaluate_losses, initial_angles, load_checkpoint,
                           load_into, parameter_init, post_process, projected_gradient,
                           save_checkpoint, stability_bound, train)
from angsync.spectral import projected_power_steps, spectral_rn_sync
from angsync.synth import SyntheticConfig, gen_offset_graph, substream
from conftest import finite_diff, rel_err


def instance(n=12, p=0.6, eta=0.3, k=1, seed=0):
    g, gt = gen_offset_graph(SyntheticConfig(n=n, p=p, eta=eta, k=k, seed=seed))
    return g, gt, spectral_rn_sync(g, k)


def test_parameter_init_deterministic_and_bounded():
    d1, h1 = parameter_init(3, 4, 1)
    d2, h2 = parameter_init(3, 4, 1)
    for a, b in zip(d1.nodes() + h1.nodes(), d2.nodes() + h2.nodes()):
        assert np.array_equal(a.value, b.value)
    assert np.all(np.abs(d1.W_s0.value) <= 0.5) and np.all(np.abs(d1.W_t0.value) <= 0.5)
    assert all(float(x.value) == 1.0 for x in (d1.a_s1, d1.a_s2, d1.a_t1, d1.a_t2))
    assert all(float(b.value) == 0.0 for b in h1.b)
    with pytest.raises(ValueError):
        parameter_init(0, 2, 1, d=7)


def test_uniform_init_moments():
    x = _uniform(substream(0, "moment"), 4, 10_000)
    sd = 0.5 / math.sqrt(3) / math.sqrt(x.size)
    assert abs(x.mean()) < 3 * sd


def test_dimpa_zero_weights_and_identity_graph(rng):
    g, _, X = instance()
    dimpa, _ = parameter_init(1, 1, 1)
    dimpa.W_s0.value = np.zeros_like(dimpa.W_s0.value)
    Z = dimpa_embed(row_normalize(g), X, dimpa).value
    assert np.all(Z[:, :4] == 0)

    dimpa, _ = parameter_init(2, 1, 1)
    dimpa.a_s1.value, dimpa.a_s2.value = np.array(0.7), np.array(-0.2)
    empty = OffsetGraph(12, [], [], [])
    norm = row_normalize(empty)
    Z = dimpa_embed(norm, X, dimpa).value
    base = np.maximum(X @ dimpa.W_s0.value, 0) @ dimpa.W_s1.value
    np.testing.assert_allclose(Z[:, :4], (1 + 0.7 - 0.2) * base, atol=1e-12)


def test_dimpa_matches_loop_oracle(rng):
    g, _, _ = instance(n=10)
    X = rng.standard_normal((10, 3))
    dimpa, _ = parameter_init(4, 3, 1)
    for node in (dimpa.a_s1, dimpa.a_s2, dimpa.a_t1, dimpa.a_t2):
        node.value = np.array(rng.uniform(-1, 1))
    norm = row_normalize(g)
    Z = dimpa_embed(norm, X, dimpa).value

    def side(A, W0, W1, a1, a2):
        n = A.shape[0]
        hid = [[max(0.0, sum(X[i, c] * W0[c, h] for c in range(X.shape[1])))
                for h in range(W0.shape[1])] for i in range(n)]
        Y = [[sum(hid[i][h] * W1[h, o] for h in range(W1.shape[0])) for o in range(W1.shape[1])]
             for i in range(n)]
        AY = [[sum(A[i, j] * Y[j][o] for j in range(n)) for o in range(len(Y[0]))] for i in range(n)]
        AAY = [[sum(A[i, j] * AY[j][o] for j in range(n)) for o in range(len(Y[0]))] for i in range(n)]
        return np.array([[Y[i][o] + a1 * AY[i][o] + a2 * AAY[i][o] for o in range(len(Y[0]))]
                         for i in range(n)])

    v = {nd.name: nd.value for nd in dimpa.nodes()}
    Zs = side(norm.source, v["W_s0"], v["W_s1"], float(v["a_s1"]), float(v["a_s2"]))
    Zt = side(norm.target, v["W_t0"], v["W_t1"], float(v["a_t1"]), float(v["a_t2"]))
    np.testing.assert_allclose(Z, np.hstack([Zs, Zt]), atol=1e-10)


def test_initial_angles_examples():
    _, head = parameter_init(0, 1, 1)
    r0 = initial_angles(np.zeros((5, 8)), head)[0].value
    np.testing.assert_allclose(r0, math.pi)
    head.b[0].value = np.array(30.0)
    r0 = initial_angles(np.zeros((5, 8)), head)[0].value
    assert np.all(np.abs(r0 - TWO_PI) < 1e-9)
    with pytest.raises(ValueError):
        initial_angles(np.zeros((5, 6)), head)


def test_initial_angles_layer_slicing(rng):
    _, head = parameter_init(0, 2, 2)
    Z = rng.standard_normal((6, 16))
    base = [c.value for c in initial_angles(Z, head)]
    Z2 = Z.copy()
    Z2[:, 8:] = 0.0  # columns of layer 2 only
    probe = [c.value for c in initial_angles(Z2, head)]
    np.testing.assert_array_equal(probe[0], base[0])
    assert not np.allclose(probe[1], base[1])
    assert all(np.all((c > 0) & (c < TWO_PI)) for c in base)


def test_projected_gradient_examples(rng):
    g, gt, _ = instance(n=100, p=0.2, eta=0.0)
    H = build_hermitian(g)
    r0 = [gt.theta[:, 0]]
    assert np.array_equal(projected_gradient(r0, H, PGDConfig(steps=0))[0].value, r0[0])
    out = projected_gradient(r0, H, PGDConfig())[0].value
    d = mod2pi(out - r0[0])
    assert np.max(np.minimum(d, TWO_PI - d)) <= 1e-9

    g, _, _ = instance(n=20, eta=0.5)
    H = build_hermitian(g)
    y = rng.uniform(0, TWO_PI, 20)
    cfg = PGDConfig(steps=2, alphas=(0.5, 2.0))
    np.testing.assert_allclose(projected_gradient([y], H, cfg)[0].value,
                               projected_power_steps(y, H, 2, [0.5, 2.0]), atol=1e-12)
    with pytest.raises(ValueError):
        PGDConfig(steps=2, alphas=(1.0,))


def test_full_forward_gradient_matches_fd():
    for seed in range(3):
        g, _, X = instance(seed=seed)
        norm, H = row_normalize(g), build_hermitian(g)
        model = build_model(1, 1, seed=seed)
        params = model.parameters()
        ad.backward(ad.frobenius_norm(model.forward(norm, X, H)) * 1.0)
        for p in params:
            analytic = p.grad.copy()
            orig = p.value.copy()

            def f(v, p=p):
                p.value = v
                return float(ad.frobenius_norm(model.forward(norm, X, H)).value)

            fd = finite_diff(f, orig)
            p.value = orig
            assert rel_err(analytic, fd) <= 1e-3, p.name


def test_train_noiseless_keeps_exact_features():
    g, gt = gen_offset_graph(SyntheticConfig(n=100, p=0.3, seed=0))
    res = train(g, None, 1, TrainConfig(max_epochs=100))
    assert mse(res.angles[:, 0], gt.theta[:, 0]) <= 1e-3
    assert all(b2 <= b1 for b1, b2 in zip(res.best_trace, res.best_trace[1:]))
    assert res.best_loss == min(res.loss_trace)


def test_train_without_pgd_and_with_trainable_alphas():
    g, _, X = instance(n=30, p=0.3)
    res = train(g, X, 1, TrainConfig(max_epochs=20), PGDConfig(steps=0))
    assert np.all((res.angles > 0) & (res.angles < TWO_PI))
    res = train(g, X, 1, TrainConfig(max_epochs=5, loss="sum"), PGDConfig(trainable=True))
    assert "alpha1" in res.model.named_tensors()


def test_train_k2_cycle_runs():
    g, _, X = instance(n=30, p=0.4, k=2, eta=0.0)
    res = train(g, X, 2, TrainConfig(max_epochs=10, loss="cycle"))
    assert res.angles.shape == (30, 2)


def test_train_aborts_on_nan():
    g, _, X = instance(n=15)
    model = build_model(1, 1)
    model.dimpa.W_s1.value = np.full_like(model.dimpa.W_s1.value, np.nan)
    with pytest.raises(TrainingDiverged):
        train(g, X, 1, TrainConfig(max_epochs=3), model=model)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="bogus")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    assert TrainConfig(max_epochs=10, patience=200).patience == 10


def test_post_process_and_loss_summary():
    g, gt, X = instance(n=40, p=0.3, eta=0.0)
    out = post_process(gt.theta, g)
    assert mse(out[:, 0], gt.theta[:, 0]) <= 1e-12
    u, c = evaluate_losses(g, gt.theta, 1)
    assert u <= 1e-12 and c <= 1e-9


def test_stability_bound_identical_inputs():
    g, _, X = instance()
    dimpa, head = parameter_init(0, 1, 1)
    nm = row_normalize(g)
    bound, lhs, parts = stability_bound(dimpa, head, nm.source, nm.source, nm.target,
                                        nm.target, X, X)
    assert bound == 0.0 and lhs == 0.0


def test_stability_bound_feature_perturbations(rng):
    g, _, X = instance(n=40, p=0.3)
    dimpa, head = parameter_init(1, 1, 1)
    nm = row_normalize(g)
    for delta in (1e-3, 1e-2, 1e-1):
        E = rng.standard_normal(X.shape)
        E /= np.linalg.norm(E)
        bound, lhs, parts = stability_bound(dimpa, head, nm.source, nm.source, nm.target,
                                            nm.target, X, X + delta * E)
        assert parts["eps_f"] == pytest.approx(delta)
        assert lhs <= bound


def test_stability_bound_adjacency_perturbations(rng):
    g, _, X = instance(n=30, p=0.3)
    dimpa, head = parameter_init(2, 1, 1)
    nm = row_normalize(g)
    for _ in range(10):
        S = nm.source * rng.uniform(0.5, 1.5, nm.source.shape)
        S /= S.sum(axis=1, keepdims=True)  # stays on the simplex
        bound, lhs, _ = stability_bound(dimpa, head, nm.source, S, nm.target, nm.target, X, X)
        assert lhs <= bound


def test_stability_bound_shape_errors():
    dimpa, head = parameter_init(0, 1, 1)
    with pytest.raises(ValueError):
        stability_bound(dimpa, head, np.eye(3), np.eye(4), np.eye(3), np.eye(3),
                        np.ones((3, 1)), np.ones((3, 1)))
    with pytest.raises(ValueError):
        stability_bound(dimpa, head, np.eye(3), np.eye(3), np.eye(3), np.eye(3),
                        np.ones((3, 1)), np.ones((3, 2)))


def test_checkpoint_round_trip(tmp_path):
    model = build_model(2, 2, seed=5)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model.named_tensors(), path)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(model.named_tensors())
    for name, val in model.named_tensors().items():
        assert np.array_equal(loaded[name], val) and loaded[name].shape == np.shape(val)
    other = build_model(2, 2, seed=6)
    load_into(other, loaded)
    for a, b in zip(other.parameters(), model.parameters()):
        assert np.array_equal(a.value, b.value)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope\n")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
