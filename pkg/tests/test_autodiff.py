"""Tensor library: forward values, gradients, graph rules."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nhdehaze import autodiff as ad
from nhdehaze.autodiff import (
    Function,
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    grad_check,
    no_grad,
)

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def naive_dft2(x):
    # O(n^2) reference: explicit double sum for every frequency bin
    m, n = x.shape
    out = np.zeros((m, n), dtype=complex)
    rows, cols = np.arange(m)[:, None], np.arange(n)[None, :]
    for k in range(m):
        for l in range(n):
            out[k, l] = np.sum(x * np.exp(-2j * np.pi * (k * rows / m + l * cols / n)))
    return out


class TestTensorBasics:
    def test_shape_matches_data(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert t.shape == (2, 3, 4) and t.size == 24 and t.ndim == 3

    def test_grad_shape_matches_data(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        (x * x).sum().backward()
        assert x.grad.shape == x.shape

    def test_nan_is_detectable(self):
        t = Tensor(np.array([1.0, np.nan]))
        assert not t.is_finite()
        with pytest.raises(NonFiniteError):
            t.check_finite()

    def test_float64_storage(self):
        assert Tensor(np.arange(3, dtype=np.int32)).data.dtype == np.float64


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(ad.ops.add([1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])

    def test_mul_zero_annihilates(self, rng):
        x = Tensor(rng.normal(size=5), requires_grad=True)
        out = x * 0.0
        out.sum().backward()
        np.testing.assert_array_equal(out.data, np.zeros(5))
        np.testing.assert_array_equal(x.grad, np.zeros(5))

    def test_exp_zero(self):
        x = Tensor(np.array([0.0]), requires_grad=True)
        y = ad.exp(x)
        y.sum().backward()
        assert y.data[0] == 1.0 and x.grad[0] == 1.0

    def test_log_domain_error(self):
        with pytest.raises(FloatingPointError):
            ad.log(Tensor([0.0, 1.0]))

    def test_div_by_zero(self):
        with pytest.raises(ZeroDivisionError):
            Tensor([1.0]) / Tensor([0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_clamp_values_and_grad(self):
        x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
        y = ad.clamp(x, 0.0, 1.0)
        y.sum().backward()
        np.testing.assert_array_equal(y.data, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    @given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
    def test_broadcast_matches_loop(self, a, b):
        out = (Tensor(a) * Tensor(b) + Tensor(b)).data
        ref = np.empty((3, 4))
        for i in range(3):
            for j in range(4):
                ref[i, j] = a[i, j] * b[j] + b[j]
        np.testing.assert_array_equal(out, ref)

    @given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (3,), elements=finite))
    def test_broadcast_gradient_sums_back(self, a, b):
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        (ta * tb).sum().backward()
        np.testing.assert_allclose(tb.grad, a.sum(axis=0), rtol=0, atol=1e-12)
        np.testing.assert_allclose(ta.grad, np.broadcast_to(b, (2, 3)), rtol=0, atol=0)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_power_rule(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x**2).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_conv_gelu_sum_matches_fd(self, rng):
        w = rng.normal(size=(2, 3, 3, 3))
        rep = grad_check(lambda x: ad.gelu(ad.conv2d(x, w, padding=1)).sum(), [rng.normal(size=(1, 3, 5, 5))])
        assert rep.passed, str(rep)

    def test_second_backward_is_error(self, rng):
        x = Tensor(rng.normal(size=3), requires_grad=True)
        loss = (ad.exp(x) * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError):
            backward(x * 2.0)

    def test_reverse_execution_order(self):
        order = []

        class Tag(Function):
            def forward(self, a, name):
                self.name = name
                return a.copy()

            def backward(self, g):
                order.append(self.name)
                return (g,)

        x = Tensor(np.ones(2), requires_grad=True)
        a = Tag.apply(x, name="a")
        b = Tag.apply(a, name="b")
        c = Tag.apply(x, name="c")  # independent branch recorded last
        (b + c).sum().backward()
        assert order == ["c", "b", "a"]

    def test_diamond_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * 2.0
        (y * y + y).sum().backward()
        # d/dx (4x^2 + 2x) = 8x + 2
        assert x.grad[0] == 26.0

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert y.is_leaf and not y.requires_grad

    def test_unreached_input_gets_zero_grad(self):
        x = Tensor(np.ones(2), requires_grad=True)
        z = Tensor(np.ones(3), requires_grad=True)
        backward((x * 2.0).sum(), [x, z])
        np.testing.assert_array_equal(z.grad, np.zeros(3))


class TestConv2d:
    def test_box_filter_center(self):
        out = ad.conv2d(np.ones((1, 1, 3, 3)), np.full((1, 1, 3, 3), 1.0 / 9.0), padding=1)
        assert abs(out.data[0, 0, 1, 1] - 1.0) < 1e-15

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 5, 6))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        np.testing.assert_array_equal(ad.conv2d(x, w, padding=1).data, x)

    def test_stride_two_pointwise(self, rng):
        x = rng.normal(size=(1, 1, 4, 4))
        out = ad.conv2d(x, np.ones((1, 1, 1, 1)), stride=2).data
        np.testing.assert_array_equal(out[0, 0], x[0, 0, ::2, ::2])

    @pytest.mark.parametrize("cin,cout,k,stride,pad,groups", [(4, 6, 3, 1, 1, 1), (4, 4, 3, 2, 1, 2), (4, 4, 5, 1, 2, 4), (3, 2, 4, 2, 1, 1)])
    def test_matches_loop_oracle(self, rng, cin, cout, k, stride, pad, groups):
        x = rng.normal(size=(2, cin, 7, 6))
        w = rng.normal(size=(cout, cin // groups, k, k))
        b = rng.normal(size=cout)
        out = ad.conv2d(x, w, b, stride=stride, padding=pad, groups=groups).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        cg, og = cin // groups, cout // groups
        ref = np.zeros_like(out)
        for n in range(2):
            for o in range(cout):
                g = o // og
                for i in range(out.shape[2]):
                    for j in range(out.shape[3]):
                        patch = xp[n, g * cg : (g + 1) * cg, i * stride : i * stride + k, j * stride : j * stride + k]
                        ref[n, o, i, j] = np.sum(patch * w[o]) + b[o]
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ad.conv2d(np.ones((1, 3, 4, 4)), np.ones((2, 2, 3, 3)))


class TestNormAndActivations:
    def test_layernorm_constant_vector(self):
        out = ad.layernorm(np.full((1, 4, 2, 2), 3.0), np.ones(4), np.zeros(4)).data
        np.testing.assert_array_equal(out, np.zeros((1, 4, 2, 2)))

    def test_layernorm_plus_minus_one(self):
        x = np.array([1.0, -1.0]).reshape(1, 2, 1, 1)
        eps = 1e-6
        out = ad.layernorm(x, np.ones(2), np.zeros(2), eps=eps).data.ravel()
        np.testing.assert_allclose(out, np.array([1.0, -1.0]) / np.sqrt(1.0 + eps), rtol=0, atol=1e-15)

    @given(arrays(np.float64, (2, 5, 3, 3), elements=finite))
    def test_layernorm_mean_is_beta(self, x):
        beta = np.linspace(-1, 1, 5)
        out = ad.layernorm(x, np.full(5, 2.0), beta).data
        np.testing.assert_allclose(out.mean(axis=1), np.full((2, 3, 3), beta.mean()), atol=1e-9)

    def test_layernorm_eps_positive(self):
        with pytest.raises(ValueError):
            ad.layernorm(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), eps=0.0)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(ad.softmax(np.zeros(3)).data, np.full(3, 1 / 3), rtol=0, atol=1e-16)

    @given(arrays(np.float64, (4, 6), elements=finite), st.floats(-50, 50))
    def test_softmax_shift_invariant_and_normalized(self, x, c):
        a = ad.softmax(x, axis=1).data
        b = ad.softmax(x + c, axis=1).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.sum(axis=1), np.ones(4), rtol=0, atol=1e-12)

    def test_softmax_bad_axis(self):
        with pytest.raises((ValueError, ShapeError)):
            ad.softmax(np.zeros((2, 2)), axis=3)

    def test_gelu_zero(self):
        assert ad.gelu(np.zeros(1)).data[0] == 0.0


class TestBilinear:
    def test_integer_coordinate(self):
        f = np.arange(16.0).reshape(1, 1, 4, 4)
        out = ad.bilinear_sample(f, np.array([[[1.0, 1.0]]])).data
        assert out[0, 0, 0] == f[0, 0, 1, 1]

    def test_midpoint(self):
        f = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        assert ad.bilinear_sample(f, np.array([[[0.5, 0.5]]])).data[0, 0, 0] == 2.5

    def test_far_outside_is_zero(self):
        f = np.ones((1, 2, 3, 3))
        out = ad.bilinear_sample(f, np.array([[[50.0, -40.0]]])).data
        np.testing.assert_array_equal(out, np.zeros((1, 2, 1)))

    def test_coordinate_gradient_at_random_points(self, rng):
        f = rng.normal(size=(1, 2, 5, 5))
        coords = rng.uniform(-0.5, 4.5, size=(1, 7, 2))
        coords = np.floor(coords) + 0.2 + 0.6 * (coords - np.floor(coords))
        assert grad_check(lambda c: (ad.bilinear_sample(f, c) ** 2).sum(), [coords]).passed


class TestFourier:
    def test_delta_has_flat_magnitude(self):
        x = np.zeros((1, 1, 8, 8))
        x[0, 0, 0, 0] = 1.0
        spec = ad.fft2(x).data
        mag = np.hypot(spec[:, :1], spec[:, 1:])
        np.testing.assert_allclose(mag, np.ones_like(mag), rtol=0, atol=1e-15)

    def test_constant_energy_in_dc(self):
        spec = ad.fft2(np.full((1, 1, 6, 6), 2.0)).data
        mag = np.hypot(spec[0, 0], spec[0, 1])
        assert abs(mag[0, 0] - 72.0) < 1e-12
        mag[0, 0] = 0.0
        assert mag.max() < 1e-12

    @pytest.mark.parametrize("h,w", [(8, 8), (5, 7), (16, 12), (3, 16)])
    def test_matches_naive_dft(self, rng, h, w):
        x = rng.normal(size=(1, 1, h, w))
        spec = ad.fft2(x).data
        ref = naive_dft2(x[0, 0])
        np.testing.assert_allclose(spec[0, 0] + 1j * spec[0, 1], ref, rtol=0, atol=1e-9)

    @pytest.mark.parametrize("h,w", [(8, 8), (6, 10), (13, 4)])
    def test_roundtrip_and_parseval(self, rng, h, w):
        x = rng.normal(size=(2, 3, h, w))
        spec = ad.fft2(x).data
        back = ad.ifft2(spec).data
        np.testing.assert_allclose(back[:, :3], x, rtol=0, atol=1e-9)
        np.testing.assert_allclose(back[:, 3:], 0.0, rtol=0, atol=1e-9)
        energy = np.sum(spec**2) / (h * w)
        assert abs(energy - np.sum(x**2)) < 1e-9 * max(1.0, np.sum(x**2))


class TestGradCheck:
    def test_linear_is_exact(self, rng):
        a = rng.normal(size=(3, 3))
        rep = grad_check(lambda x: (x * a).sum(), [rng.normal(size=(3, 3))])
        assert rep.max_rel_error < 1e-9

    def test_gelu_random_points(self, rng):
        assert grad_check(lambda x: ad.gelu(x).sum(), [rng.uniform(-2, 2, size=(4, 5))], tol=1e-5).passed

    def test_wrong_adjoint_fails(self, rng):
        class BadSquare(Function):
            def forward(self, a):
                self.a = a
                return a * a

            def backward(self, g):
                return (g * self.a,)  # missing factor 2

        rep = grad_check(lambda x: BadSquare.apply(x).sum(), [rng.normal(size=4) + 3.0])
        assert not rep.passed

    def test_report_string(self, rng):
        rep = grad_check(lambda x: (x * x).sum(), [rng.normal(size=3)])
        assert "max_rel_error" in str(rep) or "rel" in str(rep)
