"""The dehazing module: stem, DCNFormer encoder, branch fusion and decoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .autodiff import NonFiniteError, ShapeError, Tensor, clamp, concat, gelu, upsample_nearest
from .config import ModelConfig
from .dcn import DcnParams
from .frequency import FrequencyBranch, frequency_branch_forward
from .nn import Conv2d, LayerNorm2d, Module

KNOCKOUTS = (None, "main", "frequency")


@dataclass
class StageFeatures:
    features: List[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> Tensor:
        return self.features[i]

    def shapes(self) -> list:
        return [f.shape for f in self.features]


class Mlp(Module):
    def __init__(self, dim: int, ratio: int, rng: np.random.Generator) -> None:
        self.fc1 = Conv2d(dim, dim * ratio, 1, rng=rng)
        self.fc2 = Conv2d(dim * ratio, dim, 1, rng=rng, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class DCNFormerBlock(Module):
    """Pre-norm transformer block with deformable aggregation in place of attention."""

    def __init__(self, dim: int, groups: int, mode: str, mlp_ratio: int, rng: np.random.Generator) -> None:
        self.norm1 = LayerNorm2d(dim)
        self.dcn = DcnParams(dim, groups, mode=mode, rng=rng, zero_init_output=True)
        self.norm2 = LayerNorm2d(dim)
        self.mlp = Mlp(dim, mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.dcn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def dcnformer_block(x: Tensor, params: DCNFormerBlock) -> Tensor:
    return params(x)


class Stem(Module):
    """Two stride-2 3x3 convolutions: exactly 4x spatial reduction."""

    def __init__(self, dim: int, rng: np.random.Generator) -> None:
        self.conv1 = Conv2d(3, dim // 2, 3, stride=2, rng=rng)
        self.conv2 = Conv2d(dim // 2, dim, 3, stride=2, rng=rng)

    def forward(self, img: Tensor) -> Tensor:
        h, w = img.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"image size {h}x{w} is not divisible by 4; pad the input first")
        return self.conv2(gelu(self.conv1(img)))


class Encoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        self.downsamples = []
        self.stages = []
        dims = config.stage_dims
        for i, (d, depth, g) in enumerate(zip(dims, config.stage_depths, config.groups)):
            if i > 0:
                self.downsamples.append(Conv2d(dims[i - 1], d, 3, stride=2, rng=rng))
            self.stages.append([DCNFormerBlock(d, g, config.dcn_mode, config.mlp_ratio, rng) for _ in range(depth)])

    def forward(self, x: Tensor) -> StageFeatures:
        feats = []
        for i, blocks in enumerate(self.stages):
            if i > 0:
                h, w = x.shape[-2:]
                if h < 2 or w < 2 or h % 2 or w % 2:
                    raise ShapeError(f"cannot downsample a {h}x{w} feature map at stage {i}")
                x = self.downsamples[i - 1](x)
            for block in blocks:
                x = block(x)
            feats.append(x)
        return StageFeatures(feats)


class Fusion(Module):
    """Per-stage channel concatenation followed by a 1x1 projection."""

    def __init__(self, dims, rng: np.random.Generator) -> None:
        self.projections = [Conv2d(2 * d, d, 1, rng=rng) for d in dims]

    def forward(self, main: StageFeatures, freq: StageFeatures) -> StageFeatures:
        if len(main) != len(freq):
            raise ShapeError(f"stage count mismatch: {len(main)} vs {len(freq)}")
        out = []
        for proj, m, f in zip(self.projections, main.features, freq.features):
            if m.shape != f.shape:
                raise ShapeError(f"branch shapes differ: {m.shape} vs {f.shape}")
            out.append(proj(concat([m, f], axis=1)))
        return StageFeatures(out)


def fuse_branches(main: StageFeatures, freq: StageFeatures, fusion: Optional[Fusion]) -> StageFeatures:
    """Fuse the two branches; when one branch is absent the other passes through."""
    if len(freq) == 0:
        return main
    if len(main) == 0:
        return freq
    if fusion is None:
        raise ValueError("two branches given but no fusion module")
    return fusion(main, freq)


class Decoder(Module):
    """Nearest-neighbour upsampling ladder with additive skips.

    The last convolution is zero-initialised so the decoder outputs zeros
    at initialisation.
    """

    def __init__(self, dims, rng: np.random.Generator) -> None:
        self.ups = [Conv2d(dims[i + 1], dims[i], 3, rng=rng) for i in range(len(dims) - 1)]
        d0 = dims[0]
        self.head1 = Conv2d(d0, d0, 3, rng=rng)
        self.head2 = Conv2d(d0, d0 // 2, 3, rng=rng)
        self.out = Conv2d(d0 // 2, 3, 3, rng=rng, zero_init=True)

    def forward(self, features: StageFeatures) -> Tensor:
        x = features[len(features) - 1]
        for i in range(len(features) - 2, -1, -1):
            x = gelu(self.ups[i](upsample_nearest(x))) + features[i]
        x = gelu(self.head1(upsample_nearest(x)))
        x = gelu(self.head2(upsample_nearest(x)))
        return self.out(x)


class DehazeNetwork(Module):
    """The dehazing module: ``clamp(img + decoder(fused features), 0, 1)``."""

    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None) -> None:
        config.validate()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        dims = config.stage_dims
        self.stem = Stem(dims[0], rng) if config.main_branch_enabled else None
        self.encoder = Encoder(config, rng) if config.main_branch_enabled else None
        self.frequency = FrequencyBranch(config, rng) if config.frequency_branch_enabled else None
        both = config.main_branch_enabled and config.frequency_branch_enabled
        self.fusion = Fusion(dims, rng) if both else None
        self.decoder = Decoder(dims, rng)

    def check_input(self, img: Tensor) -> None:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"expected [N, 3, H, W], got {img.shape}")
        s = self.config.total_stride
        h, w = img.shape[-2:]
        if h % s or w % s:
            raise ShapeError(f"image size {h}x{w} must be divisible by the network stride {s}")

    def features(self, img: Tensor, knockout: Optional[str] = None) -> StageFeatures:
        """Fused stage features; ``knockout`` zeroes one branch's features."""
        if knockout not in KNOCKOUTS:
            raise ValueError(f"knockout must be one of {KNOCKOUTS}")
        self.check_input(img)
        main = encoder_forward(self.stem(img), self.encoder) if self.encoder is not None else StageFeatures()
        freq = StageFeatures(frequency_branch_forward(img, self.frequency))
        if knockout == "main" and len(main) and len(freq):
            main = StageFeatures([Tensor(np.zeros(f.shape)) for f in main.features])
        if knockout == "frequency" and len(freq) and len(main):
            freq = StageFeatures([Tensor(np.zeros(f.shape)) for f in freq.features])
        return fuse_branches(main, freq, self.fusion)

    def forward(self, img: Tensor, knockout: Optional[str] = None) -> Tensor:
        residual = self.decoder(self.features(img, knockout))
        out = clamp(img + residual, 0.0, 1.0)
        if not out.is_finite():
            raise NonFiniteError("dehazing output contains NaN/Inf")
        return out


def stem_downsample(img: Tensor, net: DehazeNetwork) -> Tensor:
    return net.stem(img)


def encoder_forward(stem_out: Tensor, encoder: Encoder) -> StageFeatures:
    return encoder(stem_out)


def decoder_forward(features: StageFeatures, net: DehazeNetwork) -> Tensor:
    return net.decoder(features)


def dehaze_forward(img: Tensor, net: DehazeNetwork) -> Tensor:
    return net(img)
