"""Augmentation pipeline: geometry consistency, determinism, mask soundness."""

import numpy as np
import pytest

from depthfusion import augment, data
from depthfusion.augment import AugmentSpec
from depthfusion.data import Sample, SyntheticSceneSpec
from depthfusion.errors import ConfigError


def _plane_sample(h=32, w=32):
    spec = SyntheticSceneSpec(height=h, width=w, primitives=0, noise=0.0)
    return spec, data.generate_scene(spec, 0)


def _spec(**kw):
    base = dict(scale_range=(1.0, 1.0), rotation_deg=(0.0, 0.0),
                jitter_range=(1.0, 1.0), flip_prob=0.0,
                mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
    base.update(kw)
    return AugmentSpec(**base)


class TestNormalize:
    def test_identity_params(self):
        img = np.random.default_rng(0).random((3, 4, 4)).astype(np.float32)
        out = augment.normalize(img, (0, 0, 0), (1, 1, 1))
        np.testing.assert_array_equal(out, img)

    def test_constant_image_at_mean_is_zero(self):
        img = np.full((3, 4, 4), 0.5, dtype=np.float32)
        out = augment.normalize(img, (0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
        np.testing.assert_array_equal(out, np.zeros_like(img))

    def test_denormalize_roundtrip(self):
        img = np.random.default_rng(1).random((3, 5, 5)).astype(np.float32)
        mean, std = (0.4, 0.5, 0.6), (0.2, 0.3, 0.1)
        back = augment.denormalize(augment.normalize(img, mean, std), mean, std)
        np.testing.assert_allclose(back, img, atol=1e-6)

    def test_zero_std_rejected(self):
        with pytest.raises(ConfigError):
            augment.normalize(np.zeros((3, 2, 2), dtype=np.float32), (0, 0, 0), (0, 1, 1))


class TestIdentityDraw:
    def test_identity_spec_is_normalize_only(self):
        _, s = _plane_sample()
        rng = np.random.default_rng(0)
        out = augment.apply(s, _spec(mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)), rng)
        want = augment.normalize(s.image, (0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
        np.testing.assert_array_equal(out.image, want)
        np.testing.assert_array_equal(out.depth, s.depth)
        np.testing.assert_array_equal(out.mask, s.mask)


class TestFlip:
    def test_flip_applied_twice_is_identity(self):
        _, s = _plane_sample()
        spec = _spec(flip_prob=1.0)
        once = augment.apply(s, spec, np.random.default_rng(0))
        twice = augment.apply(once, spec, np.random.default_rng(0))
        np.testing.assert_array_equal(twice.image, s.image)
        np.testing.assert_array_equal(twice.depth, s.depth)
        np.testing.assert_array_equal(twice.mask, s.mask)

    def test_flip_mirrors_columns(self):
        rng = np.random.default_rng(2)
        img = rng.random((3, 4, 6)).astype(np.float32)
        depth = rng.uniform(1, 5, (4, 6)).astype(np.float32)
        s = Sample(img, depth, np.ones((4, 6), bool), "x")
        out = augment.apply(s, _spec(flip_prob=1.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out.depth, depth[:, ::-1])
        np.testing.assert_array_equal(out.image, img[:, :, ::-1])


class TestScale:
    def test_scale_divides_depth_pinhole(self):
        # analytic plane scene: crop depth == plane(source row) / s, within
        # one nearest-neighbour quantum of the plane's row step
        scene_spec, s = _plane_sample(32, 32)
        spec = _spec(scale_range=(1.5, 1.5))
        out = augment.apply(s, spec, np.random.default_rng(0))
        h, w = 32, 32
        nh = int(round(h * 1.5))
        off = (nh - h) // 2
        rows = np.linspace(scene_spec.d_max, scene_spec.d_min, h)
        quantum = abs(rows[1] - rows[0]) / 1.5
        for i in range(h):
            src = np.clip(np.rint((i + off + 0.5) * (h / nh) - 0.5), 0, h - 1)
            want = rows[int(src)] / 1.5
            got = out.depth[i, 0]
            assert abs(got - want) <= quantum + 1e-6, (i, got, want)

    def test_scale_preserves_shape(self):
        _, s = _plane_sample(32, 32)
        out = augment.apply(s, _spec(scale_range=(1.37, 1.37)), np.random.default_rng(0))
        assert out.image.shape == (3, 32, 32)
        assert out.depth.shape == (32, 32)

    def test_scaled_depths_are_scaled_values(self):
        # every output depth is an original depth divided by s
        _, s = _plane_sample(16, 16)
        out = augment.apply(s, _spec(scale_range=(1.5, 1.5)), np.random.default_rng(0))
        originals = np.unique(s.depth) / np.float32(1.5)
        for v in np.unique(out.depth):
            assert np.min(np.abs(originals - v)) < 1e-6


class TestRotation:
    def test_zero_rotation_is_identity(self):
        _, s = _plane_sample()
        out = augment.apply(s, _spec(rotation_deg=(0.0, 0.0)), np.random.default_rng(0))
        np.testing.assert_array_equal(out.depth, s.depth)

    def test_rotation_invalidates_border(self):
        _, s = _plane_sample()
        out = augment.apply(s, _spec(rotation_deg=(5.0, 5.0)), np.random.default_rng(0))
        assert out.mask.sum() < s.mask.sum()
        assert out.mask.sum() > 0.8 * s.mask.size  # only the border goes

    def test_rotation_keeps_geometry_aligned(self):
        # depth stays an analytic function of the source position: after a
        # small rotation every valid depth must still be one of the plane's
        # row values, and the (image, depth) pairing must stay consistent
        scene_spec, s = _plane_sample(32, 32)
        out = augment.apply(s, _spec(rotation_deg=(4.0, 4.0)), np.random.default_rng(0))
        rows = np.linspace(scene_spec.d_max, scene_spec.d_min, 32).astype(np.float32)
        valid_depths = out.depth[out.mask]
        for v in np.unique(valid_depths):
            assert np.min(np.abs(rows - v)) < 1e-6

    def test_rotation_depth_uses_nearest_neighbour(self):
        # no new depth values may be invented by interpolation
        rng = np.random.default_rng(3)
        depth = rng.choice([1.0, 5.0, 9.0], size=(16, 16)).astype(np.float32)
        s = Sample(np.zeros((3, 16, 16), np.float32), depth, np.ones((16, 16), bool), "x")
        out = augment.apply(s, _spec(rotation_deg=(5.0, 5.0)), np.random.default_rng(0))
        assert set(np.unique(out.depth[out.mask])) <= {1.0, 5.0, 9.0}


class TestJitter:
    def test_jitter_touches_colour_only(self):
        _, s = _plane_sample()
        out = augment.apply(s, _spec(jitter_range=(0.6, 1.4)), np.random.default_rng(5))
        np.testing.assert_array_equal(out.depth, s.depth)
        np.testing.assert_array_equal(out.mask, s.mask)
        assert not np.array_equal(out.image, s.image)


class TestMaskSoundness:
    def test_no_invalid_pixel_becomes_valid(self):
        # poisoned depth on invalid pixels must never leak into valid output
        _, s = _plane_sample(24, 24)
        mask = s.mask.copy()
        mask[5:12, 3:9] = False
        depth = s.depth.copy()
        depth[~mask] = 777.0
        poisoned = Sample(s.image, depth, mask, "p")
        spec = AugmentSpec(scale_range=(1.0, 1.5), rotation_deg=(-5.0, 5.0),
                           jitter_range=(0.6, 1.4), flip_prob=0.5,
                           mean=(0, 0, 0), std=(1, 1, 1))
        for seed in range(30):
            out = augment.apply(poisoned, spec, np.random.default_rng(seed))
            valid_values = out.depth[out.mask]
            assert valid_values.size > 0
            # poison would show up as 777/s which always exceeds the range
            assert valid_values.max() < 300.0

    def test_all_invalid_stays_all_invalid(self):
        _, s = _plane_sample(16, 16)
        dead = Sample(s.image, s.depth, np.zeros((16, 16), bool), "d")
        out = augment.apply(dead, AugmentSpec(mean=(0, 0, 0), std=(1, 1, 1)),
                            np.random.default_rng(0))
        assert out.mask.sum() == 0


class TestDeterminism:
    def test_same_rng_same_stream(self):
        _, s = _plane_sample()
        spec = AugmentSpec(mean=(0, 0, 0), std=(1, 1, 1))
        a = augment.apply(s, spec, np.random.default_rng(123))
        b = augment.apply(s, spec, np.random.default_rng(123))
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_different_rng_differs(self):
        _, s = _plane_sample()
        spec = AugmentSpec(mean=(0, 0, 0), std=(1, 1, 1))
        a = augment.apply(s, spec, np.random.default_rng(1))
        b = augment.apply(s, spec, np.random.default_rng(2))
        assert not np.array_equal(a.depth, b.depth)


class TestSpecValidation:
    def test_shrinking_scale_rejected(self):
        with pytest.raises(ConfigError):
            AugmentSpec(scale_range=(0.5, 1.0))

    def test_bad_flip_prob_rejected(self):
        with pytest.raises(ConfigError):
            AugmentSpec(flip_prob=1.5)

    def test_defaults_match_recipe(self):
        spec = AugmentSpec()
        assert spec.scale_range == (1.0, 1.5)
        assert spec.rotation_deg == (-5.0, 5.0)
        assert spec.jitter_range == (0.6, 1.4)
        assert spec.flip_prob == 0.5
