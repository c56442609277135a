import itertools
import os
import subprocess
import sys

import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

TWO_PI = 2 * np.pi


def brute_directed(mask):
    n = mask.shape[0]
    out = []
    for i, j, q in itertools.permutations(range(n), 3):
        if i < j and i < q and mask[i, j] and mask[j, q] and mask[q, i]:
            out.append((i, j, q))
    return sorted(out)


def brute_undirected(mask):
    n = mask.shape[0]
    return sorted((i, j, q) for i, j, q in itertools.combinations(range(n), 3)
                  if mask[i, j] and mask[j, q] and mask[i, q])


def random_mask(rng, n, p, symmetric):
    m = (rng.random((n, n)) < p).astype(np.uint8)
    np.fill_diagonal(m, 0)
    if symmetric:
        m = np.triu(m, 1)
        m = m | m.T
    return np.ascontiguousarray(m)


def test_directed_matches_brute_force(kernel_impl, rng):
    for n, p in [(1, 0.5), (5, 0.6), (12, 0.4), (20, 0.3)]:
        m = random_mask(rng, n, p, symmetric=False)
        got = sorted(map(tuple, kernel_impl.triangles_directed(m).tolist()))
        assert got == brute_directed(m)


def test_undirected_matches_brute_force(kernel_impl, rng):
    for n, p in [(2, 1.0), (6, 0.7), (15, 0.4), (25, 0.25)]:
        m = random_mask(rng, n, p, symmetric=True)
        got = kernel_impl.triangles_undirected(m)
        assert got.shape[1] == 3 and got.dtype == np.int64
        assert sorted(map(tuple, got.tolist())) == brute_undirected(m)


def test_triangle_examples(kernel_impl):
    cyc = np.zeros((3, 3), dtype=np.uint8)
    cyc[0, 1] = cyc[1, 2] = cyc[2, 0] = 1
    assert kernel_impl.triangles_directed(cyc).tolist() == [[0, 1, 2]]
    acyc = np.zeros((3, 3), dtype=np.uint8)
    acyc[0, 1] = acyc[1, 2] = acyc[0, 2] = 1
    assert kernel_impl.triangles_directed(acyc).shape == (0, 3)


def test_backends_agree_on_large_mask(rng):
    from angsync.kernels import backends
    impls = backends()
    m = random_mask(rng, 80, 0.2, symmetric=True)
    d = random_mask(rng, 80, 0.2, symmetric=False)
    outs = [(impl.triangles_undirected(m).tolist(), sorted(impl.triangles_directed(d).tolist()))
            for impl in impls.values()]
    for o in outs[1:]:
        assert sorted(o[0]) == sorted(outs[0][0])
        assert o[1] == outs[0][1]


def wrapped_sq_loop(delta, grid):
    out = []
    for g in grid:
        s = 0.0
        for d in delta:
            x = (d + g) % TWO_PI
            s += min(x, TWO_PI - x) ** 2
        out.append(s)
    return np.array(out)


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-20, 20)))
def test_wrapped_sq_grid_matches_loop(delta):
    from angsync.kernels import backends
    grid = np.linspace(0, TWO_PI, 37, endpoint=False)
    ref = wrapped_sq_loop(delta, grid)
    for impl in backends().values():
        got = impl.wrapped_sq_grid(np.ascontiguousarray(delta), grid)
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


def test_pure_python_env_switch():
    code = "import angsync.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, ANGSYNC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "python"
