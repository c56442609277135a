"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

TWO_PI = 2.0 * np.pi


def triangles_directed(mask):
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    out = []
    for i in range(n):
        js = np.nonzero(mask[i, i + 1:])[0] + i + 1
        if js.size == 0:
            continue
        # q must close the cycle back to i and exceed i
        qs = np.nonzero(mask[i + 1:, i])[0] + i + 1
        if qs.size == 0:
            continue
        sub = mask[np.ix_(js, qs)]
        a, b = np.nonzero(sub)
        for j, q in zip(js[a], qs[b]):
            if j != q:
                out.append((i, j, q))
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(out, dtype=np.int64)


def triangles_undirected(mask):
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    chunks = []
    for i in range(n):
        nb = np.nonzero(mask[i, i + 1:])[0] + i + 1
        if nb.size < 2:
            continue
        sub = np.triu(mask[np.ix_(nb, nb)], 1)
        a, b = np.nonzero(sub)
        if a.size:
            tri = np.empty((a.size, 3), dtype=np.int64)
            tri[:, 0] = i
            tri[:, 1] = nb[a]
            tri[:, 2] = nb[b]
            chunks.append(tri)
    if not chunks:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(chunks)


def wrapped_sq_grid(delta, grid, chunk=4096):
    delta = np.asarray(delta, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    out = np.empty(grid.size)
    for s in range(0, grid.size, chunk):
        x = np.mod(delta[None, :] + grid[s:s + chunk, None], TWO_PI)
        w = np.minimum(x, TWO_PI - x)
        out[s:s + chunk] = (w * w).sum(axis=1)
    return out
