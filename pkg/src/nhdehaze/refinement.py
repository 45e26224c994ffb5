"""Retinex-style refinement stage and the end-to-end composition."""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from .autodiff import (
    NonFiniteError,
    ShapeError,
    Tensor,
    clamp,
    concat,
    gelu,
    matmul,
    mean,
    reshape,
    softmax,
    softplus,
    sqrt,
    transpose,
)
from .config import ModelConfig
from .network import DehazeNetwork, Mlp
from .nn import Conv2d, LayerNorm2d, Module, Parameter

ILLUMINATION_EPS = 1e-3


def channel_mean(img: Tensor) -> Tensor:
    """Per-pixel mean over the colour channels, ``[N, 3, H, W] -> [N, 1, H, W]``."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"expected [N, 3, H, W], got {img.shape}")
    return mean(img, axis=1, keepdims=True)


class IlluminationEstimator(Module):
    """Predicts a positive illumination map and a light-up feature.

    The illumination is ``softplus(z) + eps`` with ``z`` starting at the
    constant that makes the map exactly 1.
    """

    def __init__(self, channels: int, rng: np.random.Generator) -> None:
        self.embed = Conv2d(4, channels, 1, rng=rng)
        self.spread = Conv2d(channels, channels, 5, groups=channels, rng=rng)
        self.to_map = Conv2d(channels, 3, 1, rng=rng, zero_init=True)
        self.to_map.bias.data[:] = math.log(math.expm1(1.0 - ILLUMINATION_EPS))

    def forward(self, img: Tensor, mean_map: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        feature = self.spread(self.embed(concat([img, mean_map], axis=1)))
        illumination = softplus(self.to_map(feature)) + ILLUMINATION_EPS
        return img * illumination, feature, illumination


def _l2_normalize(x: Tensor) -> Tensor:
    return x / sqrt((x * x).sum(axis=-1, keepdims=True) + 1e-12)


class GuidedAttention(Module):
    """Channel self-attention whose values are modulated by the light-up feature."""

    def __init__(self, channels: int, rng: np.random.Generator) -> None:
        self.q = Conv2d(channels, channels, 1, bias=False, rng=rng)
        self.k = Conv2d(channels, channels, 1, bias=False, rng=rng)
        self.v = Conv2d(channels, channels, 1, bias=False, rng=rng)
        self.temperature = Parameter(np.ones(1))
        self.proj = Conv2d(channels, channels, 1, rng=rng, zero_init=True)

    def forward(self, x: Tensor, light: Tensor) -> Tensor:
        n, c, h, w = x.shape
        q = _l2_normalize(reshape(self.q(x), (n, c, h * w)))
        k = _l2_normalize(reshape(self.k(x), (n, c, h * w)))
        v = reshape(self.v(x) * light, (n, c, h * w))
        attn = softmax(matmul(q, transpose(k, (0, 2, 1))) * self.temperature, axis=-1)
        return self.proj(reshape(matmul(attn, v), (n, c, h, w)))


class GuidedBlock(Module):
    def __init__(self, channels: int, rng: np.random.Generator) -> None:
        self.norm1 = LayerNorm2d(channels)
        self.attn = GuidedAttention(channels, rng)
        self.norm2 = LayerNorm2d(channels)
        self.mlp = Mlp(channels, 2, rng)

    def forward(self, x: Tensor, light: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x), light)
        return x + self.mlp(self.norm2(x))


class Refinement(Module):
    """Two-argument refinement ``phi(img, mean(img))``.

    Output is ``clamp(lit + restorer(lit, light_feature), 0, 1)`` where the
    restorer's last convolution starts at zero.
    """

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None) -> None:
        rng = rng if rng is not None else np.random.default_rng(config.seed + 1)
        c = config.refine_channels
        self.illumination = IlluminationEstimator(c, rng)
        self.embed = Conv2d(3, c, 3, rng=rng)
        self.blocks = [GuidedBlock(c, rng) for _ in range(config.refine_blocks)]
        self.out = Conv2d(c, 3, 3, rng=rng, zero_init=True)

    def forward(self, img: Tensor, mean_map: Tensor) -> Tensor:
        if mean_map.shape != (img.shape[0], 1) + img.shape[2:]:
            raise ShapeError(f"mean map shape {mean_map.shape} does not match image {img.shape}")
        lit, light, _ = self.illumination(img, mean_map)
        h = self.embed(lit)
        for block in self.blocks:
            h = block(h, light)
        out = clamp(lit + self.out(gelu(h)), 0.0, 1.0)
        if not out.is_finite():
            raise NonFiniteError("refinement output contains NaN/Inf")
        return out


def illumination_estimate(img: Tensor, mean_map: Tensor, module: Refinement) -> Tuple[Tensor, Tensor]:
    lit, light, _ = module.illumination(img, mean_map)
    return lit, light


def refine_forward(img: Tensor, module: Refinement) -> Tensor:
    return module(img, channel_mean(img))


class DehazePipeline(Module):
    """Dehazing module followed by the optional refinement stage."""

    def __init__(self, config: ModelConfig) -> None:
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.theta = DehazeNetwork(config, rng)
        self.phi = Refinement(config, rng) if config.refinement_enabled else None

    def forward(self, img: Tensor, knockout: Optional[str] = None, skip_dehaze: bool = False) -> Tensor:
        x = img if skip_dehaze else self.theta(img, knockout)
        if self.phi is None:
            return x
        return self.phi(x, channel_mean(x))


def full_forward(img: Tensor, model: DehazePipeline) -> Tensor:
    return model(img)
