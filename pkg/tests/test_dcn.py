"""Deformable aggregation: oracles, mode relationship, kernels, benchmark."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhdehaze import autodiff as ad
from nhdehaze.autodiff import ShapeError, Tensor, grad_check, module_grad_check
from nhdehaze.dcn import (
    DcnParams,
    available_backends,
    dcn_aggregate,
    dcn_bench,
    predict_offsets_modulation,
    sampling_grid,
    set_backend,
)
from nhdehaze.dcn import backend as dcn_backend
from nhdehaze.dcn.operator import DeformSample


def dense_kernel(params, tap_scale):
    """Dense 3x3 kernel equivalent to G=1, zero offsets, per-tap constant modulation."""
    w = params.group_weights.data[0]  # [C, Cout]
    kernel = np.zeros((w.shape[1], w.shape[0], 3, 3))
    for k, (dy, dx) in enumerate(sampling_grid(3)):
        kernel[:, :, int(dy) + 1, int(dx) + 1] = tap_scale[k] * w.T
    return kernel


def random_inputs(rng, n=2, c=8, h=6, w=5, g=2, k=9):
    x = rng.normal(size=(n, c, h, w))
    off = rng.uniform(-2, 2, size=(n, g, k, 2, h, w))
    mod = rng.normal(size=(n, g, k, h, w))
    return x, off, mod


class TestPredictor:
    @pytest.mark.parametrize("mode", ["v3", "v4"])
    def test_init_contract(self, rng, mode):
        p = DcnParams(8, groups=2, mode=mode, rng=rng)
        off, mod = predict_offsets_modulation(Tensor(rng.normal(size=(1, 8, 5, 5))), p)
        assert off.shape == (1, 2, 9, 2, 5, 5) and mod.shape == (1, 2, 9, 5, 5)
        np.testing.assert_array_equal(off.data, 0.0)
        np.testing.assert_allclose(mod.data, 1.0 / 9.0, rtol=0, atol=1e-16)

    def test_predictor_channel_count(self):
        for g in (1, 2, 4):
            p = DcnParams(8, groups=g)
            assert p.proj_weight.shape[0] == 3 * g * 9

    def test_v3_modulation_sums_to_one(self, rng):
        p = DcnParams(8, groups=4, mode="v3", rng=rng)
        p.proj_weight.data = rng.normal(size=p.proj_weight.shape)
        _, mod = predict_offsets_modulation(Tensor(rng.normal(size=(2, 8, 4, 4))), p)
        np.testing.assert_allclose(mod.data.sum(axis=2), 1.0, rtol=0, atol=1e-12)

    def test_groups_must_divide(self):
        with pytest.raises(ValueError):
            DcnParams(6, groups=4)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            DcnParams(4, mode="v5")

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            predict_offsets_modulation(Tensor(np.zeros((1, 4, 3, 3))), DcnParams(8))


class TestAggregate:
    @pytest.mark.parametrize("trial", range(20))
    def test_reduces_to_dense_conv(self, trial):
        rng = np.random.default_rng(1000 + trial)
        c, cout = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        p = DcnParams(c, groups=1, out_channels=cout, rng=rng)
        p.group_weights.data = rng.normal(size=p.group_weights.shape)
        x = rng.normal(size=(2, c, h, w))
        off = np.zeros((2, 1, 9, 2, h, w))
        out = dcn_aggregate(Tensor(x), Tensor(off), Tensor(np.ones((2, 1, 9, h, w))), p).value.data
        ref = ad.conv2d(x, dense_kernel(p, np.ones(9)), padding=1).data
        assert np.abs(out - ref).max() < 1e-9

    def test_per_tap_modulation_reduces_to_conv(self, rng):
        p = DcnParams(3, groups=1, out_channels=4, rng=rng)
        x = rng.normal(size=(1, 3, 6, 6))
        scale = rng.normal(size=9)
        mod = np.broadcast_to(scale.reshape(1, 1, 9, 1, 1), (1, 1, 9, 6, 6)).copy()
        out = dcn_aggregate(Tensor(x), Tensor(np.zeros((1, 1, 9, 2, 6, 6))), Tensor(mod), p).value.data
        ref = ad.conv2d(x, dense_kernel(p, scale), padding=1).data
        assert np.abs(out - ref).max() < 1e-12

    def test_zero_modulation(self, rng):
        p = DcnParams(8, groups=2, rng=rng)
        x, off, mod = random_inputs(rng)
        out = dcn_aggregate(Tensor(x), Tensor(off), Tensor(np.zeros_like(mod)), p).value.data
        np.testing.assert_array_equal(out, 0.0)

    def test_v4_with_softmax_equals_v3(self, rng):
        v3 = DcnParams(8, groups=2, mode="v3", rng=np.random.default_rng(4))
        v4 = DcnParams(8, groups=2, mode="v4", rng=np.random.default_rng(4))
        w = rng.normal(scale=0.3, size=v3.proj_weight.shape)
        v3.proj_weight.data = w.copy()
        v4.proj_weight.data = w.copy()
        x = Tensor(rng.normal(size=(2, 8, 6, 6)))
        off3, mod3 = predict_offsets_modulation(x, v3)
        off4, logits = predict_offsets_modulation(x, v4)
        y3 = dcn_aggregate(x, off3, mod3, v3).value.data
        y4 = dcn_aggregate(x, off4, ad.softmax(logits, axis=2), v4).value.data
        assert np.abs(y3 - y4).max() < 1e-12

    def test_group_permutation_invariance(self, rng):
        c, g, h, w = 8, 4, 5, 5
        p = DcnParams(c, groups=g, out_channels=3, rng=rng)
        x, off, mod = random_inputs(rng, c=c, g=g, h=h, w=w)
        y = dcn_aggregate(Tensor(x), Tensor(off), Tensor(mod), p).value.data
        perm = np.array([2, 0, 3, 1])
        cg = c // g
        xp = x.reshape(2, g, cg, h, w)[:, perm].reshape(2, c, h, w)
        q = DcnParams(c, groups=g, out_channels=3, rng=rng)
        q.group_weights.data = p.group_weights.data[perm]
        yp = dcn_aggregate(Tensor(xp), Tensor(off[:, perm]), Tensor(mod[:, perm]), q).value.data
        assert np.abs(y - yp).max() < 1e-12

    def test_shape_errors(self, rng):
        p = DcnParams(8, groups=2)
        x, off, mod = random_inputs(rng)
        with pytest.raises(ShapeError):
            dcn_aggregate(Tensor(x), Tensor(off[:, :, :, :1]), Tensor(mod), p)
        with pytest.raises(ShapeError):
            dcn_aggregate(Tensor(x), Tensor(off), Tensor(mod[:, :, :4]), p)


class TestGradients:
    @pytest.fixture
    def setup(self, rng):
        p = DcnParams(8, groups=2, out_channels=5, rng=rng)
        x, off, mod = random_inputs(rng, h=5, w=5)
        # non-integer sample positions
        off = np.floor(off) + 0.15 + 0.7 * (off - np.floor(off))
        r = rng.normal(size=(2, 5, 5, 5))
        return p, x, off, mod, r

    def test_all_argument_groups(self, setup):
        p, x, off, mod, r = setup

        def f(xx, oo, mm):
            return (dcn_aggregate(xx, oo, mm, p).value * r).sum()

        rep = module_grad_check(f, [x, off, mod], [p.group_weights], tol=1e-4, max_elements=None)
        assert rep.passed, str(rep)

    @pytest.mark.parametrize("mode", ["v3", "v4"])
    def test_through_predictor(self, rng, mode):
        p = DcnParams(4, groups=2, mode=mode, rng=rng)
        p.proj_weight.data = rng.normal(scale=0.05, size=p.proj_weight.shape)
        x = rng.normal(size=(1, 4, 5, 5))
        rep = module_grad_check(lambda xx: (p(xx) ** 2).sum(), [x], [p.proj_weight, p.dw_weight], tol=1e-4)
        assert rep.passed, str(rep)


class TestBackends:
    def test_fallback_always_available(self):
        assert "python" in available_backends()

    @pytest.mark.skipif("compiled" not in available_backends(), reason="extension not built")
    def test_backends_agree(self, rng):
        x, off, mod = random_inputs(rng, c=8, g=2)
        grid = sampling_grid(3)
        g = rng.normal(size=(2, 2, 4, 6, 5))
        comp, pyth = dcn_backend.get("compiled"), dcn_backend.get("python")
        np.testing.assert_allclose(
            comp.deform_sample_forward(x, off, mod, grid), pyth.deform_sample_forward(x, off, mod, grid), rtol=0, atol=1e-12
        )
        for a, b in zip(comp.deform_sample_backward(g, x, off, mod, grid), pyth.deform_sample_backward(g, x, off, mod, grid)):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    @pytest.mark.skipif("compiled" not in available_backends(), reason="extension not built")
    def test_thread_count_does_not_change_result(self, rng):
        x, off, mod = random_inputs(rng, n=3, c=8, g=4)
        kern = dcn_backend.get("compiled")
        a = kern.deform_sample_forward(x, off, mod, sampling_grid(3), num_threads=1)
        b = kern.deform_sample_forward(x, off, mod, sampling_grid(3), num_threads=3)
        np.testing.assert_array_equal(a, b)

    def test_set_backend_roundtrip(self):
        prev = dcn_backend.active_backend()
        try:
            set_backend("python")
            assert dcn_backend.active_backend() == "python"
            with pytest.raises(ValueError):
                set_backend("cuda")
        finally:
            set_backend(prev)

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_fallback_sampling_matches_bilinear(self, dy, dx):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 2, 4, 4))
        off = np.zeros((1, 1, 9, 2, 4, 4))
        off[:, :, :, 0], off[:, :, :, 1] = dy, dx
        mod = np.zeros((1, 1, 9, 4, 4))
        mod[:, :, 4] = 1.0  # centre tap only
        out = dcn_backend.get("python").deform_sample_forward(x, off, mod, sampling_grid(3))
        yy, xx = np.mgrid[0:4, 0:4]
        coords = np.stack([yy.ravel() + dy, xx.ravel() + dx], axis=-1)[None]
        ref = ad.bilinear_sample(x, coords).data.reshape(1, 1, 2, 4, 4)
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


class TestBench:
    def test_report_contains_both_modes(self):
        rep = dcn_bench([(1, 16, 32, 32)], repetitions=2, warmup=1)
        modes = {r.mode for r in rep.rows}
        assert modes == {"v3", "v4"}
        assert all(r.median_ms > 0 and r.iqr_ms >= 0 for r in rep.rows)
        assert "v4_over_v3" in rep.format()

    def test_zero_repetitions(self):
        with pytest.raises(ValueError):
            dcn_bench([(1, 4, 8, 8)], repetitions=0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            dcn_bench([(1, 4, 8, 8)], modes=("v2",), repetitions=1)
