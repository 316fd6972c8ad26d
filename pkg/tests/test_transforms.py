import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vtss import transforms as T
from vtss.errors import GeometryError, ShapeError, SpecError
from vtss.transforms import CropFrame

from test_interp import scalar_bilinear


def distinct(side, channels=1):
    return np.arange(channels * side * side, dtype=np.float64).reshape(channels, side, side)


class TestEncoding:
    @pytest.mark.parametrize("text", ["id", "rot:90", "rot:180", "rot:270", "trans:up:5",
                                      "trans:right:1", "scale:2", "rot-interp:45",
                                      "rot-interp:22.5"])
    def test_round_trip(self, text):
        assert T.parse(text).encode() == text

    @pytest.mark.parametrize("bad", ["rot:45", "rot:360", "trans:north:5", "scale:x", "shear:3"])
    def test_rejects(self, bad):
        with pytest.raises(SpecError):
            T.parse(bad)

    def test_identity_has_no_params(self):
        with pytest.raises(SpecError):
            T.Transformation("identity", 1)


class TestRotate90:
    def test_zero_turns(self, rng):
        img = rng.uniform(size=(3, 5, 5))
        assert T.rotate90(img, 0).tobytes() == img.tobytes()

    def test_clockwise_2x2(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        img = np.array([[[a, b], [c, d]]])
        np.testing.assert_array_equal(T.rotate90(img, 1)[0], [[c, a], [d, b]])

    def test_four_turns(self, rng):
        img = rng.uniform(size=(2, 1, 7, 7)).astype(np.float32)
        out = img
        for _ in range(4):
            out = T.rotate90(out, 1)
        assert out.tobytes() == img.tobytes()

    @given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**31))
    def test_composition_law(self, a, b, seed):
        img = np.random.default_rng(seed).uniform(size=(3, 6, 6)).astype(np.float32)
        assert T.rotate90(T.rotate90(img, a), b).tobytes() == T.rotate90(img, (a + b) % 4).tobytes()

    def test_energy_preserving(self, rng):
        img = rng.uniform(size=(1, 9, 9))
        assert np.sort(T.rotate90(img, 3).ravel()).tobytes() == np.sort(img.ravel()).tobytes()

    def test_non_square(self):
        with pytest.raises(ShapeError):
            T.rotate90(np.zeros((1, 2, 3)), 1)


class TestCrops:
    def test_center_crop_side(self):
        assert T.center_crop(np.zeros((1, 32, 32)), 5).shape == (1, 22, 22)

    def test_center_crop_zero_margin(self, rng):
        img = rng.uniform(size=(1, 6, 6))
        np.testing.assert_array_equal(T.center_crop(img, 0), img)

    def test_center_crop_ramp(self):
        img = distinct(7)
        out = T.center_crop(img, 2)
        expected = [[img[0, r, c] for c in range(2, 5)] for r in range(2, 5)]
        np.testing.assert_array_equal(out[0], expected)

    def test_center_crop_too_large(self):
        with pytest.raises(GeometryError):
            T.center_crop(np.zeros((1, 4, 4)), 2)

    @pytest.mark.parametrize("direction", ["up", "down", "left", "right"])
    def test_zero_shift_is_center(self, direction, rng):
        img = rng.uniform(size=(1, 12, 12))
        np.testing.assert_array_equal(T.translate_crop(img, direction, 0, 3), T.center_crop(img, 3))

    def test_up_window(self):
        img = distinct(32)
        out = T.translate_crop(img, "up", 5, 5)
        np.testing.assert_array_equal(out, img[:, 0:22, 5:27])

    def test_right_window(self):
        img = distinct(7)
        out = T.translate_crop(img, "right", 1, 2)
        expected = [[img[0, r, c] for c in range(3, 6)] for r in range(2, 5)]
        np.testing.assert_array_equal(out[0], expected)

    def test_shift_beyond_margin(self):
        with pytest.raises(GeometryError):
            T.translate_crop(np.zeros((1, 32, 32)), "left", 6, 5)

    @given(st.sampled_from(T.DIRECTIONS), st.integers(0, 4), st.integers(4, 6))
    def test_sub_window_membership(self, direction, pixels, margin):
        img = distinct(16, 2)
        out = T.translate_crop(img, direction, min(pixels, margin), margin)
        assert np.isin(out, img).all()
        assert out.shape == (2, 16 - 2 * margin, 16 - 2 * margin)

    @given(st.sampled_from(T.DIRECTIONS), st.integers(1, 5))
    def test_shift_content_matches_window(self, direction, pixels):
        img = distinct(20)
        np.testing.assert_array_equal(T.center_crop(T.shift_content(img, direction, pixels), 5),
                                      T.translate_crop(img, direction, pixels, 5))


class TestScale:
    def test_zero_zoom(self, rng):
        img = rng.uniform(size=(1, 8, 8))
        np.testing.assert_array_equal(T.scale_zoom(img, 0), img)

    def test_constant(self):
        out = T.scale_zoom(np.full((3, 22, 22), 0.37, np.float32), 2)
        np.testing.assert_allclose(out, 0.37, atol=1e-6)

    def test_against_scalar_oracle(self, rng):
        img = rng.uniform(size=(1, 22, 22))
        out = T.scale_zoom(img, 2)
        inner = img[0, 2:20, 2:20]
        for i, j in [(0, 0), (0, 21), (21, 21), (10, 3)]:
            assert abs(out[0, i, j] - scalar_bilinear(inner, i, j, 22, 22)) < 1e-5

    @given(st.integers(1, 5), st.integers(0, 2**31))
    def test_shape_and_range(self, zoom, seed):
        img = np.random.default_rng(seed).uniform(size=(2, 1, 12, 12)).astype(np.float32)
        out = T.scale_zoom(img, zoom)
        assert out.shape == img.shape and out.dtype == img.dtype
        assert out.min() >= 0 and out.max() <= 1

    def test_too_large(self):
        with pytest.raises(GeometryError):
            T.scale_zoom(np.zeros((1, 8, 8)), 4)


class TestRotateInterp:
    def test_right_angle_matches_exact(self, rng):
        img = rng.uniform(size=(1, 9, 9))
        np.testing.assert_allclose(T.rotate_interp(img, 90), T.rotate90(img, 1), atol=1e-9)

    def test_zero_angle(self, rng):
        img = rng.uniform(size=(1, 6, 6))
        np.testing.assert_allclose(T.rotate_interp(img, 0), img, atol=1e-12)


class TestApply:
    def test_identity_center_crop(self, rng):
        img = rng.uniform(size=(1, 32, 32))
        out = T.apply(T.IDENTITY, img, CropFrame(5))
        np.testing.assert_array_equal(out, img[:, 5:27, 5:27])

    def test_identity_full(self, rng):
        img = rng.uniform(size=(3, 8, 8))
        assert T.apply(T.IDENTITY, img).tobytes() == img.tobytes()

    def test_rot_dispatch(self, rng):
        img = rng.uniform(size=(3, 32, 32))
        np.testing.assert_array_equal(T.apply(T.parse("rot:90"), img), T.rotate90(img, 1))

    @pytest.mark.parametrize("text", ["id", "rot:180", "trans:down:5", "scale:4"])
    def test_uniform_crop_side(self, text, rng):
        img = rng.uniform(size=(4, 1, 32, 32))
        assert T.apply(T.parse(text), img, CropFrame(5)).shape == (4, 1, 22, 22)

    def test_crop_frame_too_large(self):
        with pytest.raises(GeometryError):
            CropFrame(16).crop_side(32)


class TestAugment:
    class Forced:
        def __init__(self, offsets, flip_draw):
            self.offsets, self.flip_draw = offsets, flip_draw

        def integers(self, lo, hi, size):
            return np.array(self.offsets)

        def random(self):
            return self.flip_draw

    def test_centered_no_flip(self, rng):
        img = rng.uniform(size=(1, 8, 8))
        np.testing.assert_array_equal(T.augment_standard(img, self.Forced((2, 2), 0.9)), img)

    def test_flip_only(self, rng):
        img = rng.uniform(size=(3, 8, 8))
        np.testing.assert_array_equal(T.augment_standard(img, self.Forced((2, 2), 0.1)),
                                      img[..., ::-1])

    def test_corner_offset_pads_zero(self):
        img = np.ones((1, 6, 6))
        out = T.augment_standard(img, self.Forced((0, 0), 0.9))
        assert not out[0, :2].any() and not out[0, :, :2].any() and out[0, 2:, 2:].all()

    def test_deterministic_sequence(self, rng):
        img = rng.uniform(size=(1, 8, 8))
        runs = []
        for _ in range(2):
            g = np.random.Generator(np.random.PCG64(5))
            runs.append(np.stack([T.augment_standard(img, g) for _ in range(100)]))
        assert runs[0].tobytes() == runs[1].tobytes()
        assert len({a.tobytes() for a in runs[0]}) > 1
