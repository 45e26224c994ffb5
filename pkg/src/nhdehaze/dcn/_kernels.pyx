# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled deformable sampling kernels.

Both passes parallelize over (batch, group) pairs. Each pair owns a disjoint
slice of every output and gradient buffer, so results do not depend on the
thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport ceil

cnp.import_array()


cdef inline void _corners(double y, double x, long *y0, long *x0, double *ly, double *lx) noexcept nogil:
    # lower corner ceil(c) - 1: left-sided derivative at integer coordinates
    cdef double fy = ceil(y) - 1.0
    cdef double fx = ceil(x) - 1.0
    y0[0] = <long>fy
    x0[0] = <long>fx
    ly[0] = y - fy
    lx[0] = x - fx


def deform_sample_forward(
    const double[:, :, :, ::1] x,
    const double[:, :, :, :, :, ::1] offsets,
    const double[:, :, :, :, ::1] mod,
    const double[:, ::1] grid,
    int num_threads=1,
):
    cdef Py_ssize_t n_batch = x.shape[0], channels = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t groups = offsets.shape[1], points = offsets.shape[2]
    cdef Py_ssize_t cg = channels // groups
    out_arr = np.zeros((n_batch, groups, cg, h, w), dtype=np.float64)
    cdef double[:, :, :, :, ::1] out = out_arr

    cdef Py_ssize_t job, n, g, k, i, j, c, ch
    cdef long y0, x0, yy, xx
    cdef double ly, lx, m, sy, sx, w00, w01, w10, w11, v
    cdef int in00, in01, in10, in11

    for job in prange(n_batch * groups, nogil=True, num_threads=num_threads, schedule="static"):
        n = job // groups
        g = job % groups
        for k in range(points):
            for i in range(h):
                for j in range(w):
                    m = mod[n, g, k, i, j]
                    sy = i + grid[k, 0] + offsets[n, g, k, 0, i, j]
                    sx = j + grid[k, 1] + offsets[n, g, k, 1, i, j]
                    _corners(sy, sx, &y0, &x0, &ly, &lx)
                    in00 = (y0 >= 0) & (y0 < h) & (x0 >= 0) & (x0 < w)
                    in01 = (y0 >= 0) & (y0 < h) & (x0 + 1 >= 0) & (x0 + 1 < w)
                    in10 = (y0 + 1 >= 0) & (y0 + 1 < h) & (x0 >= 0) & (x0 < w)
                    in11 = (y0 + 1 >= 0) & (y0 + 1 < h) & (x0 + 1 >= 0) & (x0 + 1 < w)
                    w00 = m * (1.0 - ly) * (1.0 - lx)
                    w01 = m * (1.0 - ly) * lx
                    w10 = m * ly * (1.0 - lx)
                    w11 = m * ly * lx
                    for c in range(cg):
                        ch = g * cg + c
                        v = 0.0
                        if in00:
                            v = v + w00 * x[n, ch, y0, x0]
                        if in01:
                            v = v + w01 * x[n, ch, y0, x0 + 1]
                        if in10:
                            v = v + w10 * x[n, ch, y0 + 1, x0]
                        if in11:
                            v = v + w11 * x[n, ch, y0 + 1, x0 + 1]
                        out[n, g, c, i, j] += v
    return out_arr


def deform_sample_backward(
    const double[:, :, :, :, ::1] grad,
    const double[:, :, :, ::1] x,
    const double[:, :, :, :, :, ::1] offsets,
    const double[:, :, :, :, ::1] mod,
    const double[:, ::1] grid,
    int num_threads=1,
):
    cdef Py_ssize_t n_batch = x.shape[0], channels = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t groups = offsets.shape[1], points = offsets.shape[2]
    cdef Py_ssize_t cg = channels // groups
    gx_arr = np.zeros((n_batch, channels, h, w), dtype=np.float64)
    goff_arr = np.zeros((n_batch, groups, points, 2, h, w), dtype=np.float64)
    gmod_arr = np.zeros((n_batch, groups, points, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, :, :, ::1] goff = goff_arr
    cdef double[:, :, :, :, ::1] gmod = gmod_arr

    cdef Py_ssize_t job, n, g, k, i, j, c, ch
    cdef long y0, x0
    cdef double ly, lx, m, sy, sx, go, v00, v01, v10, v11, samp, dy, dx, acc_m, acc_y, acc_x
    cdef int in00, in01, in10, in11

    for job in prange(n_batch * groups, nogil=True, num_threads=num_threads, schedule="static"):
        n = job // groups
        g = job % groups
        for k in range(points):
            for i in range(h):
                for j in range(w):
                    m = mod[n, g, k, i, j]
                    sy = i + grid[k, 0] + offsets[n, g, k, 0, i, j]
                    sx = j + grid[k, 1] + offsets[n, g, k, 1, i, j]
                    _corners(sy, sx, &y0, &x0, &ly, &lx)
                    in00 = (y0 >= 0) & (y0 < h) & (x0 >= 0) & (x0 < w)
                    in01 = (y0 >= 0) & (y0 < h) & (x0 + 1 >= 0) & (x0 + 1 < w)
                    in10 = (y0 + 1 >= 0) & (y0 + 1 < h) & (x0 >= 0) & (x0 < w)
                    in11 = (y0 + 1 >= 0) & (y0 + 1 < h) & (x0 + 1 >= 0) & (x0 + 1 < w)
                    acc_m = 0.0
                    acc_y = 0.0
                    acc_x = 0.0
                    for c in range(cg):
                        ch = g * cg + c
                        go = grad[n, g, c, i, j]
                        v00 = x[n, ch, y0, x0] if in00 else 0.0
                        v01 = x[n, ch, y0, x0 + 1] if in01 else 0.0
                        v10 = x[n, ch, y0 + 1, x0] if in10 else 0.0
                        v11 = x[n, ch, y0 + 1, x0 + 1] if in11 else 0.0
                        samp = (1.0 - ly) * ((1.0 - lx) * v00 + lx * v01) + ly * ((1.0 - lx) * v10 + lx * v11)
                        dy = (1.0 - lx) * (v10 - v00) + lx * (v11 - v01)
                        dx = (1.0 - ly) * (v01 - v00) + ly * (v11 - v10)
                        acc_m = acc_m + go * samp
                        acc_y = acc_y + go * dy
                        acc_x = acc_x + go * dx
                        go = go * m
                        if in00:
                            gx[n, ch, y0, x0] += go * (1.0 - ly) * (1.0 - lx)
                        if in01:
                            gx[n, ch, y0, x0 + 1] += go * (1.0 - ly) * lx
                        if in10:
                            gx[n, ch, y0 + 1, x0] += go * ly * (1.0 - lx)
                        if in11:
                            gx[n, ch, y0 + 1, x0 + 1] += go * ly * lx
                    gmod[n, g, k, i, j] = acc_m
                    goff[n, g, k, 0, i, j] = m * acc_y
                    goff[n, g, k, 1, i, j] = m * acc_x
    return gx_arr, goff_arr, gmod_arr
