"""Synthetic non-homogeneous haze from the atmospheric scattering model.

``I = J * t + A * (1 - t)`` with ``t = exp(-beta * d)``, where ``beta`` is a
smooth random field rather than a constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

DEPTH_KINDS = ("ramp", "radial", "noise")


@dataclass
class HazeParams:
    atmospheric_light: np.ndarray  # [3], each in [0.6, 1.0]
    beta_field: np.ndarray  # [H, W], >= 0
    depth_map: np.ndarray  # [H, W], in (0, d_max]
    seed: int = 0

    def transmission(self) -> np.ndarray:
        return transmission_map(self.beta_field, self.depth_map)


def gen_beta_field(h: int, w: int, smoothness: float, amplitude: float, seed: int) -> np.ndarray:
    """Gaussian-blurred uniform noise rescaled to span ``[0, amplitude]``."""
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    if amplitude == 0:
        return np.zeros((h, w))
    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.uniform(size=(h, w)), sigma=smoothness, mode="reflect")
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((h, w), amplitude)
    return np.clip((field - lo) / (hi - lo), 0.0, 1.0) * amplitude


def gen_depth_map(h: int, w: int, kind: str = "ramp", seed: int = 0) -> np.ndarray:
    """Synthetic depth in ``(0, 1]``; ``ramp`` increases strictly down the rows."""
    if kind == "ramp":
        rows = (np.arange(h, dtype=np.float64) + 1.0) / h
        return np.repeat(rows[:, None], w, axis=1)
    if kind == "radial":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        r = np.hypot((yy - (h - 1) / 2) / max(h, 1), (xx - (w - 1) / 2) / max(w, 1))
        d = 0.1 + r
        return d / d.max()
    if kind == "noise":
        rng = np.random.default_rng(seed)
        f = gaussian_filter(rng.uniform(size=(h, w)), sigma=max(h, w) / 8.0, mode="reflect")
        f = (f - f.min()) / max(f.max() - f.min(), 1e-12)
        return 0.1 + 0.9 * f
    raise ValueError(f"unknown depth kind {kind!r}; choose from {DEPTH_KINDS}")


def transmission_map(beta_field: np.ndarray, depth_map: np.ndarray) -> np.ndarray:
    if np.any(beta_field < 0):
        raise ValueError("scattering coefficients must be non-negative")
    if np.any(depth_map <= 0):
        raise ValueError("depth must be positive")
    return np.exp(-beta_field * depth_map)


def apply_asm(clean: np.ndarray, params: HazeParams) -> np.ndarray:
    """Composite haze onto ``clean`` (``[N, 3, H, W]`` or ``[3, H, W]``)."""
    t = params.transmission()
    a = np.asarray(params.atmospheric_light, dtype=np.float64).reshape(3, 1, 1)
    return clean * t + a * (1.0 - t)


def invert_asm(hazy: np.ndarray, params: HazeParams) -> np.ndarray:
    """Recover ``J = (I - A (1 - t)) / t`` given the true scene parameters."""
    t = params.transmission()
    a = np.asarray(params.atmospheric_light, dtype=np.float64).reshape(3, 1, 1)
    return (hazy - a * (1.0 - t)) / t


# --- procedural clean scenes --------------------------------------------------


def procedural_image(h: int, w: int, seed: int) -> np.ndarray:
    """Textured RGB scene in ``[0, 1]``: checkerboard, gradients and value noise blended."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cell = int(rng.integers(4, 12))
    checker = ((yy // cell + xx // cell) % 2)[None]
    angle = rng.uniform(0, 2 * np.pi)
    grad = (np.cos(angle) * xx / w + np.sin(angle) * yy / h)
    grad = ((grad - grad.min()) / max(np.ptp(grad), 1e-12))[None]
    noise = np.stack([gaussian_filter(rng.uniform(size=(h, w)), sigma=s) for s in rng.uniform(1.5, 4.0, 3)])
    noise = (noise - noise.min(axis=(1, 2), keepdims=True)) / np.maximum(np.ptp(noise, axis=(1, 2), keepdims=True), 1e-12)
    colors = rng.uniform(0.05, 0.95, size=(3, 3, 1, 1))
    img = colors[0] * checker + colors[1] * grad + colors[2] * noise
    img = img / img.max(axis=(1, 2), keepdims=True).clip(min=1e-12)
    return np.clip(0.05 + 0.9 * img, 0.0, 1.0)


@dataclass
class HazeRange:
    amplitude: Tuple[float, float] = (1.0, 2.0)
    smoothness: Tuple[float, float] = (4.0, 10.0)
    light: Tuple[float, float] = (0.6, 1.0)
    depth_kinds: Sequence[str] = DEPTH_KINDS


def sample_haze_params(h: int, w: int, seed: int, ranges: HazeRange = HazeRange()) -> Tuple[HazeParams, dict]:
    rng = np.random.default_rng(seed)
    amplitude = float(rng.uniform(*ranges.amplitude))
    smoothness = float(rng.uniform(*ranges.smoothness))
    light = rng.uniform(*ranges.light, size=3)
    kind = str(ranges.depth_kinds[int(rng.integers(len(ranges.depth_kinds)))])
    beta = gen_beta_field(h, w, smoothness, amplitude, seed + 1)
    depth = gen_depth_map(h, w, kind, seed + 2)
    info = {"amplitude": amplitude, "smoothness": smoothness, "light": light, "depth": kind}
    return HazeParams(light, beta, depth, seed), info


def make_pair(clean: np.ndarray, seed: int, ranges: HazeRange = HazeRange()) -> Tuple[np.ndarray, dict]:
    h, w = clean.shape[-2:]
    params, info = sample_haze_params(h, w, seed, ranges)
    return np.clip(apply_asm(clean, params), 0.0, 1.0), info


def synth_pairs(
    count: int, size: int = 64, seed: int = 0, ranges: HazeRange = HazeRange(), clean_images: Optional[list] = None
):
    """Generate ``count`` (hazy, clean, info) triples in memory, 8-bit quantised."""
    out = []
    for i in range(count):
        item_seed = seed * 1000 + i
        if clean_images:
            clean = np.asarray(clean_images[i % len(clean_images)], dtype=np.float64)
        else:
            clean = procedural_image(size, size, item_seed)
        clean = np.round(clean * 255.0) / 255.0
        hazy, info = make_pair(clean, item_seed, ranges)
        hazy = np.round(hazy * 255.0) / 255.0
        info["seed"] = item_seed
        out.append((hazy, clean, info))
    return out
