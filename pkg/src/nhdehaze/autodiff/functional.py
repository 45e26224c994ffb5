"""Neural-network operators on ``[N, C, H, W]`` tensors."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .tensor import ArrayLike, Function, ShapeError, Tensor, as_tensor


class Conv2d(Function):
    """Cross-correlation with zero padding, integer stride and channel groups.

    Depthwise kernels accumulate shifted taps; everything else is im2col
    followed by a (batched) BLAS matmul.
    """

    def forward(self, x, w, b, stride, padding, groups):
        n, cin, h, wd = x.shape
        cout, cin_g, kh, kw = w.shape
        if cin != cin_g * groups:
            raise ShapeError(f"conv2d expects {cin_g * groups} input channels, got {cin}")
        if cout % groups:
            raise ShapeError("output channels must be divisible by groups")
        ho = (h + 2 * padding - kh) // stride + 1
        wo = (wd + 2 * padding - kw) // stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError(f"conv2d output would be empty for input {x.shape} and kernel {w.shape}")
        self.meta = (x.shape, stride, padding, groups, ho, wo)
        self.w = w
        self.has_bias = b is not None
        self.depthwise = cin_g == 1 and cout == groups
        self.pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0 and groups == 1

        if self.pointwise:
            self.x = x
            out = np.matmul(w[:, :, 0, 0], x.reshape(n, cin, h * wd)).reshape(n, cout, h, wd)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
            if self.depthwise:
                self.xp = xp
                out = np.zeros((n, cout, ho, wo))
                for i in range(kh):
                    for j in range(kw):
                        tap = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                        out += w[:, 0, i, j].reshape(1, -1, 1, 1) * tap
            else:
                win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
                # cols: [N, G, Ho*Wo, Cin_g*kh*kw]
                win = win.reshape(n, groups, cin_g, ho, wo, kh, kw).transpose(0, 1, 3, 4, 2, 5, 6)
                self.cols = np.ascontiguousarray(win).reshape(n, groups, ho * wo, cin_g * kh * kw)
                # wmat: [G, Cin_g*kh*kw, Cout_g]
                self.wmat = w.reshape(groups, cout // groups, cin_g * kh * kw).transpose(0, 2, 1)
                out = np.matmul(self.cols, self.wmat)  # [N, G, Ho*Wo, Cout_g]
                out = out.transpose(0, 1, 3, 2).reshape(n, cout, ho, wo)
        if b is not None:
            out = out + b.reshape(1, -1, 1, 1)
        return out

    def backward(self, g):
        xshape, stride, padding, groups, ho, wo = self.meta
        n, cin, h, wd = xshape
        w = self.w
        cout, cin_g, kh, kw = w.shape
        gb = g.sum(axis=(0, 2, 3)) if self.has_bias else None
        if self.pointwise:
            g2 = g.reshape(n, cout, h * wd)
            gw = np.matmul(g2, self.x.reshape(n, cin, h * wd).transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
            gx = np.matmul(w[:, :, 0, 0].T, g2).reshape(xshape)
            return gx, gw, gb
        hp, wp = h + 2 * padding, wd + 2 * padding
        gxp = np.zeros((n, cin, hp, wp))
        if self.depthwise:
            gw = np.zeros_like(w)
            for i in range(kh):
                for j in range(kw):
                    sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, self.xp[sl])
                    gxp[sl] += w[:, 0, i, j].reshape(1, -1, 1, 1) * g
        else:
            gg = g.reshape(n, groups, cout // groups, ho * wo)
            # [G, Cin_g*kh*kw, Cout_g] summed over the batch
            gw = np.matmul(self.cols.transpose(0, 1, 3, 2), gg.transpose(0, 1, 3, 2)).sum(axis=0)
            gw = gw.transpose(0, 2, 1).reshape(w.shape)
            gcols = np.matmul(self.wmat, gg)  # [N, G, Cin_g*kh*kw, Ho*Wo]
            gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        return gx, gw, gb


def conv2d(
    x: ArrayLike,
    weight: ArrayLike,
    bias: Optional[ArrayLike] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2D cross-correlation.

    Output spatial size is ``floor((H + 2*padding - kh) / stride) + 1``.
    """
    if bias is None:
        return _Conv2dNoBias.apply(x, weight, stride=stride, padding=padding, groups=groups)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding, groups=groups)


class _Conv2dNoBias(Conv2d):
    def forward(self, x, w, stride, padding, groups):
        return super().forward(x, w, None, stride, padding, groups)

    def backward(self, g):
        gx, gw, _ = super().backward(g)
        return gx, gw


class LayerNorm(Function):
    """Normalize over axis 1 (channels) independently at each location."""

    def forward(self, x, gamma, beta, eps):
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.rstd
        shape = (1, -1) + (1,) * (x.ndim - 2)
        self.gamma = gamma.reshape(shape)
        self.shape = shape
        return self.xhat * self.gamma + beta.reshape(shape)

    def backward(self, g):
        axes = (0,) + tuple(range(2, g.ndim))
        ggamma = (g * self.xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx_hat = g * self.gamma
        c = g.shape[1]
        gx = self.rstd * (
            gx_hat
            - gx_hat.sum(axis=1, keepdims=True) / c
            - self.xhat * (gx_hat * self.xhat).sum(axis=1, keepdims=True) / c
        )
        return gx, ggamma, gbeta


def layernorm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike, eps: float = 1e-6) -> Tensor:
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    return LayerNorm.apply(x, gamma, beta, eps=eps)


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Gelu(Function):
    """Exact GELU, ``x * Phi(x)``."""

    def forward(self, x):
        self.x = x
        self.cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
        return x * self.cdf

    def backward(self, g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * self.x * self.x)
        return (g * (self.cdf + self.x * pdf),)


def gelu(x: ArrayLike) -> Tensor:
    return Gelu.apply(x)


class Softmax(Function):
    def forward(self, x, axis):
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        self.out = e / e.sum(axis=axis, keepdims=True)
        self.axis = axis
        return self.out

    def backward(self, g):
        s = self.out
        return (s * (g - (g * s).sum(axis=self.axis, keepdims=True)),)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    return Softmax.apply(x, axis=axis)


# --- bilinear sampling ------------------------------------------------------


def bilinear_corners(y: np.ndarray, x: np.ndarray, h: int, w: int):
    """Corner indices, weights and validity masks for bilinear reads.

    The lower corner is ``ceil(c) - 1`` so that at exact integer coordinates
    the coordinate derivative is the left-sided one. Reads outside the image
    contribute zero.
    """
    y0 = np.ceil(y) - 1.0
    x0 = np.ceil(x) - 1.0
    ly = y - y0
    lx = x - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    corners = []
    for dy, wy, dwy in ((0, 1.0 - ly, -1.0), (1, ly, 1.0)):
        for dx, wx, dwx in ((0, 1.0 - lx, -1.0), (1, lx, 1.0)):
            yi = y0 + dy
            xi = x0 + dx
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            flat = np.where(valid, yi * w + xi, 0)
            # weight, d(weight)/dy, d(weight)/dx
            corners.append((flat, valid, wy * wx, dwy * wx, wy * dwx))
    return corners


class BilinearSample(Function):
    def forward(self, feat, coords):
        n, c, h, w = feat.shape
        if coords.ndim != 3 or coords.shape[0] != n or coords.shape[2] != 2:
            raise ShapeError(f"coords must be [N, P, 2], got {coords.shape}")
        self.feat = feat.reshape(n, c, h * w)
        self.corners = bilinear_corners(coords[..., 0], coords[..., 1], h, w)
        self.shape = feat.shape
        out = np.zeros((n, c, coords.shape[1]))
        for flat, valid, wt, _, _ in self.corners:
            vals = np.take_along_axis(self.feat, flat[:, None, :], axis=2)
            out += vals * (wt * valid)[:, None, :]
        return out

    def backward(self, g):
        n, c, h, w = self.shape
        gfeat = np.zeros((n, c, h * w))
        gy = np.zeros(g.shape[::2])
        gx = np.zeros(g.shape[::2])
        for flat, valid, wt, dwy, dwx in self.corners:
            vals = np.take_along_axis(self.feat, flat[:, None, :], axis=2)
            mvals = (g * vals).sum(axis=1) * valid
            gy += mvals * dwy
            gx += mvals * dwx
            contrib = g * (wt * valid)[:, None, :]
            base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
            idx = base + flat[:, None, :]
            gfeat += np.bincount(idx.ravel(), weights=contrib.ravel(), minlength=n * c * h * w).reshape(gfeat.shape)
        return gfeat.reshape(self.shape), np.stack([gy, gx], axis=-1)


def bilinear_sample(feature: ArrayLike, coords: ArrayLike) -> Tensor:
    """Sample ``feature[N, C, H, W]`` at ``coords[N, P, 2]`` given as ``(row, col)``.

    Returns ``[N, C, P]``. Points outside the image read zeros.
    """
    return BilinearSample.apply(feature, coords)


# --- Fourier transforms -------------------------------------------------------
#
# A complex tensor is carried as a "complex pair": real parts in the first
# half of axis 1, imaginary parts in the second half.


class FFT2(Function):
    def forward(self, x):
        self.m = x.shape[-2] * x.shape[-1]
        spec = np.fft.fft2(x)
        return np.concatenate([spec.real, spec.imag], axis=1)

    def backward(self, g):
        c = g.shape[1] // 2
        gz = g[:, :c] + 1j * g[:, c:]
        return (np.real(np.fft.ifft2(gz)) * self.m,)


class IFFT2(Function):
    def forward(self, pair):
        c = pair.shape[1]
        if c % 2:
            raise ShapeError("complex pair needs an even channel count")
        self.m = pair.shape[-2] * pair.shape[-1]
        z = np.fft.ifft2(pair[:, : c // 2] + 1j * pair[:, c // 2 :])
        return np.concatenate([z.real, z.imag], axis=1)

    def backward(self, g):
        c = g.shape[1] // 2
        gz = np.fft.fft2(g[:, :c] + 1j * g[:, c:]) / self.m
        return (np.concatenate([gz.real, gz.imag], axis=1),)


def fft2(x: ArrayLike) -> Tensor:
    """Real ``[N, C, H, W]`` -> complex pair ``[N, 2C, H, W]`` (unnormalized forward)."""
    return FFT2.apply(x)


def ifft2(pair: ArrayLike) -> Tensor:
    """Complex pair ``[N, 2C, H, W]`` -> complex pair, normalized by ``1/(H*W)``."""
    return IFFT2.apply(pair)


# --- resampling ---------------------------------------------------------------


class UpsampleNearest(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(self, g):
        f = self.factor
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


def upsample_nearest(x: ArrayLike, factor: int = 2) -> Tensor:
    return UpsampleNearest.apply(x, factor=factor)


class AvgPool2(Function):
    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        self.shape = x.shape
        return x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(self, g):
        n, c, h, w = self.shape
        out = np.zeros(self.shape)
        h2, w2 = g.shape[-2:]
        out[:, :, : 2 * h2, : 2 * w2] = 0.25 * g.repeat(2, axis=-2).repeat(2, axis=-1)
        return (out,)


def avg_pool2(x: ArrayLike) -> Tensor:
    """2x2 average pooling, stride 2; a trailing odd row/column is dropped."""
    return AvgPool2.apply(x)
