"""Composite training loss, its components and the patch discriminator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .autodiff import ShapeError, Tensor, abs, avg_pool2, clamp, conv2d, exp, leaky_relu, log, mean, relu
from .nn import Conv2d, Module

# canonical 5-scale MS-SSIM weights; the first ``scales`` are used, renormalised
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.4
    beta: float = 0.01
    gamma: float = 0.0005

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossComponents:
    l1: Tensor
    ssim: Tensor
    perceptual: Tensor
    adversarial: Optional[Tensor] = None

    def as_floats(self) -> dict:
        out = {"l1": self.l1.item(), "ms_ssim": self.ssim.item(), "percep": self.perceptual.item()}
        if self.adversarial is not None:
            out["adv"] = self.adversarial.item()
        return out


def _same_shape(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape(pred, target)
    return mean(abs(pred - target))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter(x: Tensor, win1d: np.ndarray) -> Tensor:
    # separable valid-mode Gaussian, applied per channel
    c = x.shape[1]
    size = win1d.size
    wh = np.tile(win1d.reshape(1, 1, size, 1), (c, 1, 1, 1))
    ww = np.tile(win1d.reshape(1, 1, 1, size), (c, 1, 1, 1))
    return conv2d(conv2d(x, wh, groups=c), ww, groups=c)


def ssim_components(x: Tensor, y: Tensor, peak: float = 1.0, win: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """Mean SSIM and mean contrast-structure term over the valid window area."""
    win = gaussian_window() if win is None else win
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_x = _filter(x, win)
    mu_y = _filter(y, win)
    sxx = _filter(x * x, win) - mu_x * mu_x
    syy = _filter(y * y, win) - mu_y * mu_y
    sxy = _filter(x * y, win) - mu_x * mu_y
    cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    return mean(lum * cs_map), mean(cs_map)


def ms_ssim(pred: Tensor, target: Tensor, scales: int = 3, peak: float = 1.0) -> Tensor:
    """Multi-scale SSIM with ``scales`` levels of 2x2 average pooling.

    Negative per-scale terms are floored at 1e-6 before the weighted
    geometric mean so the result stays in ``[0, 1]``.
    """
    _same_shape(pred, target)
    min_side = 11 * 2 ** (scales - 1)
    if min(pred.shape[-2:]) < min_side:
        raise ShapeError(f"{scales}-scale MS-SSIM needs images of at least {min_side}px, got {pred.shape[-2:]}")
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    total = None
    x, y = pred, target
    for s in range(scales):
        ssim_val, cs_val = ssim_components(x, y, peak)
        term = ssim_val if s == scales - 1 else cs_val
        logged = log(clamp(term, 1e-6, None)) * float(weights[s])
        total = logged if total is None else total + logged
        if s < scales - 1:
            x, y = avg_pool2(x), avg_pool2(y)
    return exp(total)


def ms_ssim_loss(pred: Tensor, target: Tensor, scales: int = 3) -> Tensor:
    return 1.0 - ms_ssim(pred, target, scales)


class ProxyFeatureExtractor(Module):
    """Frozen random-weight 6-layer conv stack standing in for VGG-16 features.

    Features are taken after layers 2, 4 and 6.
    """

    WIDTHS = (3, 8, 8, 16, 16, 32, 32)
    STRIDES = (1, 1, 2, 1, 2, 1)
    TAPS = (1, 3, 5)

    def __init__(self, seed: int = 1234) -> None:
        rng = np.random.default_rng(seed)
        self.layers = [
            Conv2d(cin, cout, 3, stride=s, rng=rng)
            for cin, cout, s in zip(self.WIDTHS[:-1], self.WIDTHS[1:], self.STRIDES)
        ]
        for layer in self.layers:
            # scale so activations keep roughly unit variance through the stack
            layer.weight.data *= np.sqrt(3.0)
        self.requires_grad_(False)

    def forward(self, x: Tensor) -> List[Tensor]:
        feats = []
        for i, layer in enumerate(self.layers):
            x = relu(layer(x))
            if i in self.TAPS:
                feats.append(x)
        return feats


_PROXY: Optional[ProxyFeatureExtractor] = None


def proxy_extractor() -> ProxyFeatureExtractor:
    global _PROXY
    if _PROXY is None:
        _PROXY = ProxyFeatureExtractor()
    return _PROXY


def perceptual_proxy_loss(pred: Tensor, target: Tensor, extractor: Optional[ProxyFeatureExtractor] = None) -> Tensor:
    _same_shape(pred, target)
    extractor = extractor or proxy_extractor()
    total = None
    fp = extractor(pred)
    ft = extractor(target)
    for a, b in zip(fp, ft):
        d = a - b.detach()
        term = mean(d * d)
        total = term if total is None else total + term
    return total * (1.0 / len(fp))


class Discriminator(Module):
    """Four stride-2 convolutions producing a grid of patch logits.

    A 64x64 input yields a 4x4 grid.
    """

    def __init__(self, width: int = 16, seed: int = 7) -> None:
        rng = np.random.default_rng(seed)
        self.convs = [
            Conv2d(3, width, 4, stride=2, padding=1, rng=rng),
            Conv2d(width, 2 * width, 4, stride=2, padding=1, rng=rng),
            Conv2d(2 * width, 4 * width, 4, stride=2, padding=1, rng=rng),
            Conv2d(4 * width, 1, 4, stride=2, padding=1, rng=rng),
        ]

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs[:-1]:
            x = leaky_relu(conv(x), 0.2)
        return self.convs[-1](x)


def lsgan_losses(d_real: Tensor, d_fake_for_disc: Tensor, d_fake_for_gen: Tensor) -> Tuple[Tensor, Tensor]:
    """Least-squares objectives from discriminator outputs.

    ``disc = 0.5 * mean((D(real) - 1)^2 + D(fake)^2)``,
    ``gen = mean((D(fake) - 1)^2)``.
    """
    disc = 0.5 * (mean((d_real - 1.0) ** 2) + mean(d_fake_for_disc**2))
    gen = mean((d_fake_for_gen - 1.0) ** 2)
    return gen, disc


def adversarial_losses(disc: Discriminator, real: Tensor, fake: Tensor) -> Tuple[Tensor, Tensor]:
    """``(gen_loss, disc_loss)``; the discriminator loss sees a detached fake."""
    return lsgan_losses(disc(real.detach()), disc(fake.detach()), disc(fake))


def combine_losses(components: LossComponents, weights: LossWeights = LossWeights(), include_adv: bool = True):
    """``L1 + alpha*SSIM + beta*Percep (+ gamma*Adv)``.

    Works on tensors or plain floats.
    """
    total = components.l1 + weights.alpha * components.ssim + weights.beta * components.perceptual
    if include_adv:
        if components.adversarial is None:
            raise ValueError("include_adv requested but no adversarial component supplied")
        total = total + weights.gamma * components.adversarial
    return total


def loss_components(
    pred: Tensor, target: Tensor, disc: Optional[Discriminator] = None, scales: int = 3
) -> LossComponents:
    adv = None
    if disc is not None:
        adv = mean((disc(pred) - 1.0) ** 2)
    return LossComponents(
        l1_loss(pred, target), ms_ssim_loss(pred, target, scales), perceptual_proxy_loss(pred, target), adv
    )


def composite_loss(
    pred: Tensor,
    target: Tensor,
    weights: LossWeights = LossWeights(),
    include_adv: bool = False,
    disc: Optional[Discriminator] = None,
) -> Tensor:
    if include_adv and disc is None:
        raise ValueError("include_adv needs a discriminator")
    comps = loss_components(pred, target, disc if include_adv else None)
    return combine_losses(comps, weights, include_adv)
