import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhdehaze.autodiff import ShapeError, Tensor
from nhdehaze.config import ModelConfig
from nhdehaze.refinement import DehazePipeline, Refinement, channel_mean, illumination_estimate, refine_forward

SMALL = ModelConfig(stage_dims=(8,), stage_depths=(1,), groups=(2,), refine_channels=8, refine_blocks=1, seed=2)


class TestChannelMean:
    def test_value(self):
        img = np.empty((1, 3, 2, 2))
        img[0, 0], img[0, 1], img[0, 2] = 0.3, 0.6, 0.9
        np.testing.assert_allclose(channel_mean(Tensor(img)).data, 0.6, atol=1e-15)

    @given(st.floats(0.01, 10))
    def test_scales_linearly(self, s):
        img = np.random.default_rng(0).uniform(size=(1, 3, 3, 3))
        np.testing.assert_allclose(channel_mean(Tensor(s * img)).data, s * channel_mean(Tensor(img)).data, rtol=1e-12)

    def test_shape(self):
        assert channel_mean(Tensor(np.zeros((2, 3, 4, 5)))).shape == (2, 1, 4, 5)
        with pytest.raises(ShapeError):
            channel_mean(Tensor(np.zeros((2, 4, 4, 5))))


class TestIllumination:
    def test_unit_map_at_init(self, rng):
        mod = Refinement(SMALL, rng)
        img = Tensor(rng.uniform(size=(1, 3, 6, 6)))
        _, _, illum = mod.illumination(img, channel_mean(img))
        np.testing.assert_allclose(illum.data, 1.0, atol=1e-12)

    def test_positive_for_any_weights(self, rng):
        mod = Refinement(SMALL, rng)
        for p in mod.illumination.parameters():
            p.data = rng.normal(scale=3.0, size=p.shape)
        img = Tensor(rng.uniform(size=(1, 3, 6, 6)))
        _, _, illum = mod.illumination(img, channel_mean(img))
        assert illum.data.min() > 0

    def test_black_image_stays_black(self, rng):
        mod = Refinement(SMALL, rng)
        for p in mod.illumination.parameters():
            p.data = rng.normal(size=p.shape)
        img = Tensor(np.zeros((1, 3, 6, 6)))
        lit, _ = illumination_estimate(img, channel_mean(img), mod)
        np.testing.assert_array_equal(lit.data, 0.0)


class TestRefinement:
    def test_identity_at_init(self, rng):
        mod = Refinement(SMALL, rng)
        img = rng.uniform(size=(2, 3, 8, 8))
        np.testing.assert_allclose(refine_forward(Tensor(img), mod).data, img, atol=1e-12)

    def test_mean_map_shape_checked(self, rng):
        mod = Refinement(SMALL, rng)
        with pytest.raises(ShapeError):
            mod(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 1, 2, 4))))

    def test_output_range(self, rng):
        mod = Refinement(SMALL, rng)
        for p in mod.parameters():
            p.data = p.data + rng.normal(scale=0.5, size=p.shape)
        out = refine_forward(Tensor(rng.uniform(size=(1, 3, 8, 8))), mod).data
        assert out.min() >= 0 and out.max() <= 1


class TestComposition:
    def test_disabled_refinement_equals_theta(self, rng):
        model = DehazePipeline(dataclasses.replace(SMALL, refinement_enabled=False))
        for p in model.parameters():
            p.data = p.data + rng.normal(scale=0.05, size=p.shape)
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        assert model.phi is None
        np.testing.assert_array_equal(model(img).data, model.theta(img).data)

    def test_full_is_phi_of_theta(self, rng):
        model = DehazePipeline(SMALL)
        for p in model.parameters():
            p.data = p.data + rng.normal(scale=0.02, size=p.shape)
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        d = model.theta(img)
        np.testing.assert_array_equal(model(img).data, model.phi(d, channel_mean(d)).data)

    def test_identity_at_init(self, rng):
        img = rng.uniform(size=(1, 3, 8, 8))
        np.testing.assert_allclose(DehazePipeline(SMALL)(Tensor(img)).data, img, atol=1e-12)

    def test_skip_dehaze(self, rng):
        model = DehazePipeline(SMALL)
        img = Tensor(rng.uniform(size=(1, 3, 8, 8)))
        np.testing.assert_array_equal(model(img, skip_dehaze=True).data, model.phi(img, channel_mean(img)).data)
