"""Finite-difference gradient suite over every differentiable operation.

Atomic operators are held to 1e-5 relative error, whole modules to 1e-3.
Outputs are reduced to scalars with a fixed random projection so every
output element contributes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, grad_check, module_grad_check
from .config import ModelConfig
from .dcn import DcnParams, dcn_aggregate, predict_offsets_modulation, sampling_grid
from .dcn.operator import DeformSample
from .frequency import FFCBlock, HaarDWT, HaarIDWT
from .losses import ms_ssim, perceptual_proxy_loss
from .refinement import DehazePipeline, channel_mean

ATOMIC_TOL = 1e-5
COMPOSITE_TOL = 1e-3


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed

    def format(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"check={self.name} status={status} max_rel_err={self.report.max_rel_error:.3e} "
            f"tol={self.report.tol:.0e} entries={self.report.checked} seconds={self.seconds:.2f}"
        )


def _projected(out: Tensor, rng_seed: int = 99) -> Tensor:
    r = np.random.default_rng(rng_seed).normal(size=out.shape)
    return (out * r).sum()


def _fractional(rng, shape, lo, hi):
    # keep sample coordinates away from integer kinks of bilinear interpolation
    v = rng.uniform(lo, hi, size=shape)
    frac = v - np.floor(v)
    return np.floor(v) + 0.1 + 0.8 * frac


def _perturb(module, rng, scale=0.05) -> None:
    # zero-initialised layers would make many parameter gradients vanish
    for p in module.parameters():
        p.data = p.data + rng.normal(scale=scale, size=p.shape)


def atomic_cases(rng: np.random.Generator) -> List[tuple]:
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 3, 4))
    pos = rng.uniform(0.5, 2.0, size=(2, 3, 4))
    away = np.sign(a) * (np.abs(a) + 0.1)
    img = rng.normal(size=(2, 4, 6, 6))
    feat = rng.normal(size=(2, 4, 6, 6))
    coords = _fractional(rng, (2, 10, 2), -0.8, 5.8)
    cases = [
        ("add", lambda x, y: _projected(x + y[0]), [a, b]),
        ("sub", lambda x, y: _projected(x - y), [a, b]),
        ("mul", lambda x, y: _projected(x * y), [a, b]),
        ("div", lambda x, y: _projected(x / y), [a, pos]),
        ("power", lambda x: _projected(x**3), [a]),
        ("exp", lambda x: _projected(ad.exp(x)), [a]),
        ("log", lambda x: _projected(ad.log(x)), [pos]),
        ("sqrt", lambda x: _projected(ad.sqrt(x)), [pos]),
        ("abs", lambda x: _projected(ad.abs(x)), [away]),
        ("sigmoid", lambda x: _projected(ad.sigmoid(x)), [a]),
        ("softplus", lambda x: _projected(ad.softplus(x)), [a]),
        ("leaky_relu", lambda x: _projected(ad.leaky_relu(x, 0.2)), [away]),
        ("sum_mean", lambda x: _projected(ad.mean(x, axis=(0, 2))) + x.sum(), [a]),
        ("reshape_transpose", lambda x: _projected(ad.transpose(ad.reshape(x, (6, 4)))), [a]),
        ("getitem", lambda x: _projected(x[:, 1:, ::2]), [a]),
        ("concat", lambda x, y: _projected(ad.concat([x, y], axis=1)), [a, b]),
        ("matmul", lambda x, y: _projected(ad.matmul(x, ad.transpose(y, (0, 2, 1)))), [a, b]),
        ("pad_reflect", lambda x: _projected(ad.pad2d(x, (2, 1, 1, 2), "reflect")), [img]),
        ("conv2d", lambda x, w, bb: _projected(ad.conv2d(x, w, bb, padding=1)), [img, rng.normal(size=(5, 4, 3, 3)), rng.normal(size=5)]),
        ("conv2d_strided_grouped", lambda x, w: _projected(ad.conv2d(x, w, stride=2, padding=1, groups=2)), [img, rng.normal(size=(4, 2, 3, 3))]),
        ("conv2d_depthwise", lambda x, w: _projected(ad.conv2d(x, w, padding=2, groups=4)), [img, rng.normal(size=(4, 1, 5, 5))]),
        ("conv2d_pointwise", lambda x, w: _projected(ad.conv2d(x, w)), [img, rng.normal(size=(3, 4, 1, 1))]),
        ("layernorm", lambda x, g, bb: _projected(ad.layernorm(x, g, bb)), [img, rng.normal(size=4), rng.normal(size=4)]),
        ("gelu", lambda x: _projected(ad.gelu(x)), [img]),
        ("softmax", lambda x: _projected(ad.softmax(x, axis=1)), [img]),
        ("upsample_nearest", lambda x: _projected(ad.upsample_nearest(x)), [img]),
        ("avg_pool2", lambda x: _projected(ad.avg_pool2(x)), [img]),
        ("bilinear_values", lambda f: _projected(ad.bilinear_sample(f, coords)), [img]),
        ("bilinear_coords", lambda c: _projected(ad.bilinear_sample(feat, c)), [coords]),
        ("fft2", lambda x: _projected(ad.fft2(x)), [img]),
        ("ifft2", lambda x: _projected(ad.ifft2(x)), [rng.normal(size=(2, 4, 6, 6))]),
        ("haar_dwt", lambda x: _projected(HaarDWT.apply(x)), [img]),
        ("haar_idwt", lambda x: _projected(HaarIDWT.apply(x)), [rng.normal(size=(2, 8, 3, 3))]),
    ]
    return cases


def dcn_cases(rng: np.random.Generator) -> List[tuple]:
    n, c, h, w, g = 2, 8, 6, 6, 2
    params = DcnParams(c, groups=g, out_channels=6, mode="v4", rng=rng)
    k = params.points
    x = rng.normal(size=(n, c, h, w))
    off = _fractional(rng, (n, g, k, 2, h, w), -1.5, 1.5)
    mod = rng.normal(size=(n, g, k, h, w))

    def agg(xx, oo, mm):
        return _projected(dcn_aggregate(xx, oo, mm, params).value)

    def full_op(xx):
        o, m = predict_offsets_modulation(xx, params)
        return _projected(dcn_aggregate(xx, o, m, params).value)

    v3 = DcnParams(c, groups=g, mode="v3", rng=np.random.default_rng(5))
    for p in (params, v3):
        p.proj_weight.data = rng.normal(scale=0.05, size=p.proj_weight.shape)

    def full_v3(xx):
        return _projected(v3(xx))

    return [
        ("deform_sample", lambda xx, oo, mm: _projected(DeformSample.apply(xx, oo, mm, grid=sampling_grid(3))), [x, off, mod], None),
        ("dcn_aggregate_input", lambda xx: agg(xx, off, mod), [x], None),
        ("dcn_aggregate_offsets", lambda oo: agg(x, oo, mod), [off], None),
        ("dcn_aggregate_modulation", lambda mm: agg(x, off, mm), [mod], None),
        ("dcn_aggregate_weights", lambda xx: agg(xx, off, mod), [x], [params.group_weights]),
        ("dcn_v4_predictor", full_op, [x], [params.dw_weight, params.proj_weight, params.proj_bias]),
        ("dcn_v3_predictor", full_v3, [x], [v3.proj_weight, v3.group_weights]),
    ]


def tiny_model_config() -> ModelConfig:
    """Single-stage configuration whose stride (4) admits 8x8 inputs."""
    return ModelConfig(stage_dims=(8,), stage_depths=(1,), groups=(2,), refine_channels=8, refine_blocks=1, seed=3)


def composite_cases(rng: np.random.Generator) -> List[tuple]:
    model = DehazePipeline(tiny_model_config())
    _perturb(model, np.random.default_rng(11), scale=0.02)
    img = rng.uniform(0.35, 0.65, size=(1, 3, 8, 8))
    theta_params = [model.theta.decoder.out.weight] + list(model.theta.parameters())[::17]
    phi_params = list(model.phi.parameters())[::5]
    ffc = FFCBlock(8, rng=rng, zero_init=False)
    target = rng.uniform(0.2, 0.8, size=(1, 3, 44, 44))
    # correlated with the target so no MS-SSIM term sits on its floor
    lossimg = np.clip(target + rng.normal(scale=0.1, size=target.shape), 0.0, 1.0)
    return [
        ("ffc_block", lambda x: _projected(ffc(x)), [rng.normal(size=(1, 8, 6, 6))], list(ffc.parameters())),
        ("theta_8x8", lambda x: _projected(model.theta(x)), [img], theta_params),
        ("phi_8x8", lambda x: _projected(model.phi(x, channel_mean(x))), [img], phi_params),
        ("full_model_8x8", lambda x: _projected(model(x)), [img], None),
        ("ms_ssim_3_scales", lambda x: ms_ssim(x, Tensor(target), scales=3), [lossimg], None),
        ("perceptual_proxy", lambda x: perceptual_proxy_loss(x, Tensor(target)), [lossimg], None),
    ]


def run_suite(on_result: Optional[Callable[[SuiteResult], None]] = None, seed: int = 0) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    results = []

    def record(name, report, t0):
        res = SuiteResult(name, report, time.perf_counter() - t0)
        results.append(res)
        if on_result:
            on_result(res)

    for name, fn, inputs in atomic_cases(rng):
        t0 = time.perf_counter()
        record(name, grad_check(fn, inputs, tol=ATOMIC_TOL), t0)
    for name, fn, inputs, params in dcn_cases(rng):
        t0 = time.perf_counter()
        if params:
            rep = module_grad_check(fn, inputs, params, tol=ATOMIC_TOL, max_elements=None)
        else:
            rep = grad_check(fn, inputs, tol=ATOMIC_TOL)
        record(name, rep, t0)
    for name, fn, inputs, params in composite_cases(rng):
        t0 = time.perf_counter()
        if params:
            rep = module_grad_check(fn, inputs, params, tol=COMPOSITE_TOL, max_elements=6)
        else:
            rep = grad_check(fn, inputs, tol=COMPOSITE_TOL, max_elements=48)
        record(name, rep, t0)
    return results
