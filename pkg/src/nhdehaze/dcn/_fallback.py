"""Pure-numpy deformable sampling, same contract as the compiled kernels."""

from __future__ import annotations

import numpy as np

from ..autodiff.functional import bilinear_corners


def _sample_positions(offsets: np.ndarray, grid: np.ndarray, k: int):
    n, g, _, _, h, w = offsets.shape
    ii = np.arange(h, dtype=np.float64)[:, None]
    jj = np.arange(w, dtype=np.float64)[None, :]
    sy = ii + grid[k, 0] + offsets[:, :, k, 0]
    sx = jj + grid[k, 1] + offsets[:, :, k, 1]
    return sy.reshape(n, g, h * w), sx.reshape(n, g, h * w)


def deform_sample_forward(x, offsets, mod, grid, num_threads=1):
    n, c, h, w = x.shape
    groups, points = offsets.shape[1], offsets.shape[2]
    cg = c // groups
    xg = x.reshape(n, groups, cg, h * w)
    out = np.zeros((n, groups, cg, h * w))
    for k in range(points):
        sy, sx = _sample_positions(offsets, grid, k)
        m = mod[:, :, k].reshape(n, groups, 1, h * w)
        for flat, valid, wt, _, _ in bilinear_corners(sy, sx, h, w):
            vals = np.take_along_axis(xg, flat[:, :, None, :], axis=3)
            out += vals * (m * (wt * valid)[:, :, None, :])
    return out.reshape(n, groups, cg, h, w)


def deform_sample_backward(grad, x, offsets, mod, grid, num_threads=1):
    n, c, h, w = x.shape
    groups, points = offsets.shape[1], offsets.shape[2]
    cg = c // groups
    hw = h * w
    xg = x.reshape(n, groups, cg, hw)
    gflat = grad.reshape(n, groups, cg, hw)
    gx = np.zeros(n * groups * cg * hw)
    goff = np.zeros(offsets.shape)
    gmod = np.zeros(mod.shape)
    base = (np.arange(n * groups * cg) * hw).reshape(n, groups, cg, 1)
    for k in range(points):
        sy, sx = _sample_positions(offsets, grid, k)
        m = mod[:, :, k].reshape(n, groups, hw)
        acc_m = np.zeros((n, groups, hw))
        acc_y = np.zeros((n, groups, hw))
        acc_x = np.zeros((n, groups, hw))
        for flat, valid, wt, dwy, dwx in bilinear_corners(sy, sx, h, w):
            vals = np.take_along_axis(xg, flat[:, :, None, :], axis=3)
            gv = (gflat * vals).sum(axis=2) * valid
            acc_m += gv * wt
            acc_y += gv * dwy
            acc_x += gv * dwx
            contrib = gflat * (m * wt * valid)[:, :, None, :]
            gx += np.bincount((base + flat[:, :, None, :]).ravel(), weights=contrib.ravel(), minlength=gx.size)
        gmod[:, :, k] = acc_m.reshape(n, groups, h, w)
        goff[:, :, k, 0] = (m * acc_y).reshape(n, groups, h, w)
        goff[:, :, k, 1] = (m * acc_x).reshape(n, groups, h, w)
    return gx.reshape(x.shape), goff, gmod
