"""Deformable aggregation with learned offsets and modulation scalars.

For every output location ``p0`` the operator gathers ``K`` bilinearly
interpolated samples per channel group at ``p0 + p_k + dp_gk``, weights them
by modulation scalars ``m_gk`` and projects each group with a
location-independent matrix ``w_g``::

    y(p0) = sum_g sum_k w_g * m_gk * x_g(p0 + p_k + dp_gk)

In ``v3`` mode the modulation scalars are softmax-normalized over the ``K``
points; in ``v4`` mode they are used raw and are unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..autodiff import Function, ShapeError, Tensor, conv2d, gelu, matmul, reshape, softmax, transpose
from ..nn import Module, Parameter, uniform_init
from . import backend

MODES = ("v3", "v4")


def sampling_grid(kernel: int = 3) -> np.ndarray:
    """Fixed unit-spaced ``kernel x kernel`` offsets ``p_k`` as ``(dy, dx)`` rows."""
    r = kernel // 2
    return np.array([(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)], dtype=np.float64)


class DeformSample(Function):
    """``A[n, g, c, p] = sum_k m[n, g, k, p] * x_g[n, c](p + p_k + off[n, g, k, :, p])``."""

    def forward(self, x, offsets, mod, grid):
        n, c, h, w = x.shape
        if offsets.ndim != 6 or offsets.shape[0] != n or offsets.shape[3] != 2 or offsets.shape[4:] != (h, w):
            raise ShapeError(f"offsets must be [N, G, K, 2, H, W], got {offsets.shape}")
        groups, points = offsets.shape[1], offsets.shape[2]
        if mod.shape != (n, groups, points, h, w):
            raise ShapeError(f"modulation must be {(n, groups, points, h, w)}, got {mod.shape}")
        if c % groups:
            raise ShapeError(f"{c} channels not divisible into {groups} groups")
        if grid.shape != (points, 2):
            raise ShapeError(f"grid must be [{points}, 2], got {grid.shape}")
        self.saved = tuple(np.ascontiguousarray(a) for a in (x, offsets, mod, grid))
        return backend.get().deform_sample_forward(*self.saved, num_threads=backend.get_num_threads())

    def backward(self, g):
        gx, goff, gmod = backend.get().deform_sample_backward(
            np.ascontiguousarray(g), *self.saved, num_threads=backend.get_num_threads()
        )
        return gx, goff, gmod


@dataclass
class DcnOutput:
    value: Tensor
    offsets: Tensor
    modulation: Tensor


class DcnParams(Module):
    """Per-layer deformable-convolution state.

    Holds the offset/modulation predictor (3x3 depthwise conv, GELU, 1x1
    projection to ``3*G*K`` channels) and the group projection weights
    ``w_g`` of shape ``[G, C/G, C_out]``.

    The predictor's projection starts at zero with offset bias 0 and
    modulation bias ``1/K``, so both modes begin from uniform aggregation.
    ``zero_init_output`` zeroes ``w_g`` (used inside residual blocks).
    """

    def __init__(
        self,
        channels: int,
        groups: int = 1,
        out_channels: Optional[int] = None,
        mode: str = "v4",
        kernel: int = 3,
        rng: Optional[np.random.Generator] = None,
        zero_init_output: bool = False,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if groups < 1 or channels % groups:
            raise ValueError(f"channels ({channels}) must be divisible by groups ({groups})")
        rng = rng if rng is not None else np.random.default_rng(0)
        out_channels = channels if out_channels is None else out_channels
        self.channels, self.groups, self.mode = channels, groups, mode
        self.points = kernel * kernel
        self.grid = sampling_grid(kernel)
        gk = groups * self.points

        self.dw_weight = Parameter(uniform_init(rng, (channels, 1, 3, 3), 9))
        self.dw_bias = Parameter(np.zeros(channels))
        self.proj_weight = Parameter(np.zeros((3 * gk, channels, 1, 1)))
        bias = np.zeros(3 * gk)
        bias[2 * gk :] = 1.0 / self.points
        self.proj_bias = Parameter(bias)
        cg = channels // groups
        if zero_init_output:
            w = np.zeros((groups, cg, out_channels))
        else:
            w = uniform_init(rng, (groups, cg, out_channels), channels)
        self.group_weights = Parameter(w)

    @property
    def out_channels(self) -> int:
        return self.group_weights.shape[2]

    def forward(self, x: Tensor) -> Tensor:
        offsets, modulation = predict_offsets_modulation(x, self)
        return dcn_aggregate(x, offsets, modulation, self).value


def predict_offsets_modulation(x: Tensor, params: DcnParams) -> Tuple[Tensor, Tensor]:
    """Predict offsets ``[N, G, K, 2, H, W]`` and modulation ``[N, G, K, H, W]``.

    Modulation is softmax-normalized over ``K`` in ``v3`` mode and returned
    raw in ``v4`` mode.
    """
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"expected {params.channels} channels, got {c}")
    g, k = params.groups, params.points
    feat = gelu(conv2d(x, params.dw_weight, params.dw_bias, padding=1, groups=c))
    raw = conv2d(feat, params.proj_weight, params.proj_bias)
    offsets = reshape(raw[:, : 2 * g * k], (n, g, k, 2, h, w))
    modulation = reshape(raw[:, 2 * g * k :], (n, g, k, h, w))
    if params.mode == "v3":
        modulation = softmax(modulation, axis=2)
    return offsets, modulation


def dcn_aggregate(x: Tensor, offsets: Tensor, modulation: Tensor, params: DcnParams) -> DcnOutput:
    """Apply the deformable aggregation with the given offsets and modulation as-is."""
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"expected {params.channels} channels, got {c}")
    agg = DeformSample.apply(x, offsets, modulation, grid=params.grid)
    flat = reshape(agg, (n, c, h * w))
    w2 = transpose(reshape(params.group_weights, (c, params.out_channels)))
    y = reshape(matmul(w2, flat), (n, params.out_channels, h, w))
    return DcnOutput(y, offsets, modulation)
