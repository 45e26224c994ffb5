import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhdehaze.haze import (
    HazeParams,
    HazeRange,
    apply_asm,
    gen_beta_field,
    gen_depth_map,
    invert_asm,
    make_pair,
    procedural_image,
    transmission_map,
)
from nhdehaze.io import make_dataset, read_manifest
from nhdehaze.metrics import psnr


def params_from(light, beta, depth):
    return HazeParams(np.asarray(light, dtype=float), np.asarray(beta, dtype=float), np.asarray(depth, dtype=float))


class TestBetaField:
    @given(st.floats(0.01, 5), st.floats(0.5, 8), st.integers(0, 1000))
    def test_range_and_determinism(self, amp, smooth, seed):
        f = gen_beta_field(16, 12, smooth, amp, seed)
        assert f.shape == (16, 12)
        assert f.min() >= 0 and f.max() <= amp + 1e-12
        np.testing.assert_array_equal(f, gen_beta_field(16, 12, smooth, amp, seed))

    def test_zero_amplitude(self):
        np.testing.assert_array_equal(gen_beta_field(8, 8, 2.0, 0.0, 1), 0.0)

    def test_negative_amplitude(self):
        with pytest.raises(ValueError):
            gen_beta_field(8, 8, 2.0, -1.0, 1)


class TestTransmission:
    def test_beta_zero(self):
        np.testing.assert_array_equal(transmission_map(np.zeros((3, 3)), np.ones((3, 3))), 1.0)

    def test_ln2(self):
        np.testing.assert_allclose(transmission_map(np.full((2, 2), math.log(2)), np.ones((2, 2))), 0.5, atol=1e-15)

    def test_monotone_in_depth(self):
        t = transmission_map(np.full((1, 5), 0.7), np.linspace(0.1, 1.0, 5)[None])
        assert np.all(np.diff(t[0]) < 0)

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            transmission_map(np.full((2, 2), -0.1), np.ones((2, 2)))

    def test_generated_fields_in_unit_interval(self):
        for seed in range(5):
            _, info = make_pair(procedural_image(16, 16, seed), seed)
            from nhdehaze.haze import sample_haze_params

            p, _ = sample_haze_params(16, 16, seed)
            t = p.transmission()
            assert t.min() > 0 and t.max() <= 1


class TestAsm:
    def test_no_haze(self, rng):
        clean = rng.uniform(size=(1, 3, 4, 4))
        p = params_from([0.8, 0.9, 1.0], np.zeros((4, 4)), np.ones((4, 4)))
        np.testing.assert_array_equal(apply_asm(clean, p), clean)

    def test_full_haze(self, rng):
        clean = rng.uniform(size=(3, 4, 4))
        p = params_from([0.6, 0.7, 0.8], np.full((4, 4), 800.0), np.ones((4, 4)))
        out = apply_asm(clean, p)
        np.testing.assert_allclose(out, np.array([0.6, 0.7, 0.8]).reshape(3, 1, 1) * np.ones((3, 4, 4)), atol=1e-15)

    def test_half_transmission(self):
        p = params_from([0.0, 0.0, 0.0], np.full((2, 2), math.log(2)), np.ones((2, 2)))
        np.testing.assert_allclose(apply_asm(np.ones((3, 2, 2)), p), 0.5, atol=1e-15)

    def test_inversion_oracle(self, rng):
        clean = rng.uniform(size=(2, 3, 24, 24))
        p = params_from(rng.uniform(0.6, 1.0, 3), gen_beta_field(24, 24, 3.0, 2.0, 4), gen_depth_map(24, 24, "radial"))
        t = p.transmission()
        mask = np.broadcast_to(t > 0.05, clean.shape)
        assert mask.any()
        rec = invert_asm(apply_asm(clean, p), p)
        assert np.abs(rec - clean)[mask].max() < 1e-9

    def test_output_range(self, rng):
        clean = rng.uniform(size=(3, 8, 8))
        p = params_from(rng.uniform(0.6, 1.0, 3), rng.uniform(0, 3, (8, 8)), rng.uniform(0.1, 1, (8, 8)))
        out = apply_asm(clean, p)
        assert out.min() >= 0 and out.max() <= 1


class TestDepth:
    def test_ramp_strict(self):
        d = gen_depth_map(10, 7, "ramp")
        assert np.all(d[0] < d[-1])
        assert np.all(np.diff(d[:, 0]) > 0)

    @pytest.mark.parametrize("kind", ["ramp", "radial", "noise"])
    def test_range_and_determinism(self, kind):
        d = gen_depth_map(12, 9, kind, seed=3)
        assert d.min() > 0 and d.max() <= 1
        np.testing.assert_array_equal(d, gen_depth_map(12, 9, kind, seed=3))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gen_depth_map(4, 4, "fog")


def tree_digest(path):
    h = hashlib.sha256()
    for f in sorted(path.iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


class TestDataset:
    def test_byte_identical_rerun(self, tmp_path):
        make_dataset(None, 4, HazeRange(), tmp_path / "a", seed=7, size=32)
        make_dataset(None, 4, HazeRange(), tmp_path / "b", seed=7, size=32)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_manifest_count(self, tmp_path):
        recs = make_dataset(None, 4, HazeRange(), tmp_path, seed=1, size=16)
        assert len(recs) == 4 == len(read_manifest(tmp_path))
        assert {"seed", "amplitude", "smoothness", "light", "depth"} <= set(read_manifest(tmp_path)[0])

    def test_hazy_psnr_below_30(self):
        from nhdehaze.haze import synth_pairs

        for hazy, clean, info in synth_pairs(6, 64, seed=3, ranges=HazeRange(amplitude=(1.0, 2.0))):
            assert info["amplitude"] >= 1.0
            assert psnr(hazy, clean) < 30.0

    def test_haze_monotonicity(self):
        clean = procedural_image(32, 32, 5)
        base = gen_beta_field(32, 32, 5.0, 1.0, 9)
        depth = gen_depth_map(32, 32, "ramp")
        values = [psnr(apply_asm(clean, params_from([0.9, 0.9, 0.9], a * base, depth)), clean) for a in (0.25, 0.5, 1, 2, 4)]
        assert all(b <= a for a, b in zip(values, values[1:]))
