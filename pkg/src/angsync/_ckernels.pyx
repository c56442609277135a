# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must stay behaviourally identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fmod, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cdef class _TriBuffer:
    """Growable (cap, 3) int64 buffer."""
    cdef cnp.int64_t[:, ::1] buf
    cdef Py_ssize_t cnt, cap

    def __cinit__(self):
        self.cap = 1024
        self.cnt = 0
        self.buf = np.empty((self.cap, 3), dtype=np.int64)

    cdef inline void push(self, Py_ssize_t i, Py_ssize_t j, Py_ssize_t q):
        if self.cnt == self.cap:
            self.cap *= 2
            grown = np.empty((self.cap, 3), dtype=np.int64)
            grown[:self.cnt] = self.buf[:self.cnt]
            self.buf = grown
        self.buf[self.cnt, 0] = i
        self.buf[self.cnt, 1] = j
        self.buf[self.cnt, 2] = q
        self.cnt += 1

    cdef object result(self):
        return np.asarray(self.buf[:self.cnt]).copy()


def triangles_directed(const unsigned char[:, ::1] mask):
    """Directed 3-cycles i->j->q->i, one row per cycle, smallest index first."""
    cdef Py_ssize_t n = mask.shape[0]
    cdef Py_ssize_t i, j, q
    cdef _TriBuffer out = _TriBuffer()
    for i in range(n):
        for j in range(i + 1, n):
            if not mask[i, j]:
                continue
            for q in range(i + 1, n):
                if q != j and mask[j, q] and mask[q, i]:
                    out.push(i, j, q)
    return out.result()


def triangles_undirected(const unsigned char[:, ::1] mask):
    """Triangles i<j<q of a symmetric mask."""
    cdef Py_ssize_t n = mask.shape[0]
    cdef Py_ssize_t i, j, q
    cdef _TriBuffer out = _TriBuffer()
    for i in range(n):
        for j in range(i + 1, n):
            if not mask[i, j]:
                continue
            for q in range(j + 1, n):
                if mask[j, q] and mask[i, q]:
                    out.push(i, j, q)
    return out.result()


cdef inline double _wrap(double x):
    x = fmod(x, TWO_PI)
    if x < 0:
        x += TWO_PI
    if x >= TWO_PI:
        x = 0.0
    return x


def wrapped_sq_grid(const double[::1] delta, const double[::1] grid):
    """For each shift g: sum_i min((d_i+g) mod 2pi, (-(d_i+g)) mod 2pi)^2."""
    cdef Py_ssize_t ng = grid.shape[0], nd = delta.shape[0]
    cdef Py_ssize_t a, b
    cdef double s, x, w, g
    cdef double[::1] d = np.empty(nd, dtype=np.float64)
    for b in range(nd):
        d[b] = _wrap(delta[b])
    out = np.empty(ng, dtype=np.float64)
    cdef double[::1] res = out
    for a in range(ng):
        g = _wrap(grid[a])
        s = 0.0
        # both terms lie in [0, 2pi), so one conditional subtraction wraps the sum
        for b in range(nd):
            x = d[b] + g
            if x >= TWO_PI:
                x -= TWO_PI
            w = TWO_PI - x
            if x < w:
                w = x
            s += w * w
        res[a] = s
    return out
