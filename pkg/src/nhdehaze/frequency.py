"""Auxiliary frequency-aware branch: Haar wavelets and Fourier convolution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .autodiff import Function, ShapeError, Tensor, concat, fft2, gelu, ifft2
from .config import ModelConfig
from .nn import Conv2d, Module


def _check_even(shape) -> None:
    if shape[-2] % 2 or shape[-1] % 2:
        raise ShapeError(f"Haar transform needs even height and width, got {shape[-2:]}")


def _dwt(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return np.concatenate(
        [(a + b + c + d) * 0.5, (a - b + c - d) * 0.5, (a + b - c - d) * 0.5, (a - b - c + d) * 0.5], axis=1
    )


def _idwt(bands: np.ndarray) -> np.ndarray:
    n, c4, h, w = bands.shape
    c = c4 // 4
    ll, lh, hl, hh = (bands[:, i * c : (i + 1) * c] for i in range(4))
    out = np.empty((n, c, 2 * h, 2 * w))
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


class HaarDWT(Function):
    """Orthonormal one-level Haar analysis, bands stacked ``[LL, LH, HL, HH]`` on axis 1."""

    def forward(self, x):
        _check_even(x.shape)
        return _dwt(x)

    def backward(self, g):
        return (_idwt(g),)


class HaarIDWT(Function):
    def forward(self, bands):
        if bands.shape[1] % 4:
            raise ShapeError("band stack must have a multiple of 4 channels")
        return _idwt(bands)

    def backward(self, g):
        return (_dwt(g),)


@dataclass
class WaveletBands:
    LL: Tensor
    LH: Tensor
    HL: Tensor
    HH: Tensor

    def stacked(self) -> Tensor:
        return concat([self.LL, self.LH, self.HL, self.HH], axis=1)


def haar_dwt2(x: Tensor) -> WaveletBands:
    stacked = HaarDWT.apply(x)
    c = stacked.shape[1] // 4
    return WaveletBands(*(stacked[:, i * c : (i + 1) * c] for i in range(4)))


def haar_idwt2(bands: WaveletBands) -> Tensor:
    return HaarIDWT.apply(bands.stacked())


class FFCBlock(Module):
    """Residual block with a local 3x3 path and a global spectral path.

    The channel split is 50/50. The global half goes through fft2, a 1x1
    real mixing of the stacked real/imaginary channels, ifft2, and keeps the
    real part; it is linear in its input.
    """

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, zero_init: bool = True) -> None:
        if channels % 2:
            raise ValueError(f"FFC block needs an even channel count, got {channels}")
        half = channels // 2
        self.half = half
        self.local = Conv2d(half, half, 3, rng=rng, zero_init=zero_init)
        self.spectral = Conv2d(channels, channels, 1, bias=False, rng=rng, zero_init=zero_init)

    def global_path(self, xg: Tensor) -> Tensor:
        spec = self.spectral(fft2(xg))
        return ifft2(spec)[:, : self.half]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != 2 * self.half:
            raise ShapeError(f"expected {2 * self.half} channels, got {x.shape[1]}")
        local = self.local(x[:, : self.half])
        glob = self.global_path(x[:, self.half :])
        return concat([local, glob], axis=1) + x


class FrequencyBranch(Module):
    """Per-stage features aligned with the main encoder.

    Stage 0 applies two Haar levels to the image (stride 4); every later
    stage applies one more level to the previous stage output. A 1x1 conv
    maps the band stack to the stage width, followed by GELU and one FFC
    block.
    """

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None) -> None:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.projections = []
        self.blocks = []
        cin = 3 * 16
        for d in config.stage_dims:
            self.projections.append(Conv2d(cin, d, 1, rng=rng))
            self.blocks.append(FFCBlock(d, rng=rng))
            cin = 4 * d

    def forward(self, img: Tensor) -> List[Tensor]:
        feats = []
        x = HaarDWT.apply(HaarDWT.apply(img))
        for i, (proj, block) in enumerate(zip(self.projections, self.blocks)):
            if i > 0:
                x = HaarDWT.apply(feats[-1])
            feats.append(block(gelu(proj(x))))
        return feats


def frequency_branch_forward(img: Tensor, branch: Optional[FrequencyBranch]) -> List[Tensor]:
    """Run the branch; a disabled (``None``) branch yields no features."""
    if branch is None:
        return []
    return branch(img)
