"""Forward-time benchmark of the deformable operator, v3 against v4."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor, no_grad
from . import backend as _backend
from .operator import MODES, DcnParams

Shape = Tuple[int, int, int, int]

DEFAULT_SHAPES: Tuple[Shape, ...] = ((1, 16, 32, 32), (2, 32, 32, 32), (2, 64, 16, 16))


@dataclass
class BenchRow:
    shape: Shape
    mode: str
    backend: str
    groups: int
    median_ms: float
    iqr_ms: float
    repetitions: int

    def format(self) -> str:
        n, c, h, w = self.shape
        return (
            f"shape={n}x{c}x{h}x{w} groups={self.groups} mode={self.mode} backend={self.backend} "
            f"median_ms={self.median_ms:.3f} iqr_ms={self.iqr_ms:.3f} reps={self.repetitions}"
        )


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)

    def lookup(self, shape: Shape, mode: str, backend: Optional[str] = None) -> BenchRow:
        for r in self.rows:
            if tuple(r.shape) == tuple(shape) and r.mode == mode and (backend is None or r.backend == backend):
                return r
        raise KeyError((shape, mode, backend))

    def ratios(self) -> List[Tuple[Shape, str, float]]:
        """``(shape, backend, v4_median / v3_median)`` for every pair present."""
        out = []
        for r in self.rows:
            if r.mode != "v4":
                continue
            try:
                v3 = self.lookup(r.shape, "v3", r.backend)
            except KeyError:
                continue
            out.append((r.shape, r.backend, r.median_ms / v3.median_ms))
        return out

    def format(self) -> str:
        lines = [r.format() for r in self.rows]
        for shape, be, ratio in self.ratios():
            n, c, h, w = shape
            lines.append(f"shape={n}x{c}x{h}x{w} backend={be} v4_over_v3={ratio:.3f}")
        return "\n".join(lines)


def _default_groups(channels: int) -> int:
    for g in (4, 2, 1):
        if channels % g == 0 and channels // g >= 4:
            return g
    return 1


def dcn_bench(
    shapes: Iterable[Shape] = DEFAULT_SHAPES,
    modes: Sequence[str] = MODES,
    repetitions: int = 20,
    warmup: int = 3,
    backends: Optional[Sequence[str]] = None,
    groups: Optional[int] = None,
    seed: int = 0,
) -> BenchReport:
    """Median and interquartile range of full operator forward time.

    Each timed call predicts offsets/modulation and aggregates. Modes are
    interleaved within every repetition so slow drift affects both equally.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown mode {m!r}; choose from {MODES}")
    backends = list(backends) if backends else [_backend.active_backend()]
    previous = _backend.active_backend()
    report = BenchReport()
    rng = np.random.default_rng(seed)
    try:
        for shape in shapes:
            n, c, h, w = shape
            g = groups or _default_groups(c)
            x = Tensor(rng.normal(size=shape))
            ops = {}
            for m in modes:
                ops[m] = DcnParams(c, groups=g, mode=m, rng=np.random.default_rng(seed))
                # random projection so offsets are non-trivial
                ops[m].proj_weight.data = rng.normal(scale=0.1, size=ops[m].proj_weight.shape)
            for be in backends:
                _backend.set_backend(be)
                times = {m: [] for m in modes}
                with no_grad():
                    for i in range(warmup + repetitions):
                        for m in modes:
                            t0 = time.perf_counter()
                            ops[m](x)
                            dt = time.perf_counter() - t0
                            if i >= warmup:
                                times[m].append(dt * 1e3)
                for m in modes:
                    q1, med, q3 = np.percentile(times[m], [25, 50, 75])
                    report.rows.append(BenchRow(tuple(shape), m, be, g, float(med), float(q3 - q1), repetitions))
    finally:
        _backend.set_backend(previous)
    return report
