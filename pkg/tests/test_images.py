import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guided_deblur import images
from guided_deblur.images import (
    ImageError,
    downsample,
    from_model_range,
    load_image,
    save_image,
    to_grayscale,
    to_model_range,
)


def _const(value, h=16, w=16, c=3):
    return np.full((h, w, c), value, dtype=np.float64)


class TestPngIO:
    def test_black_png_roundtrip(self, tmp_path):
        path = tmp_path / "black.png"
        save_image(_const(0.0), path)
        assert np.array_equal(load_image(path), _const(0.0))

    def test_white_png_roundtrip(self, tmp_path):
        path = tmp_path / "white.png"
        save_image(_const(1.0), path)
        assert np.array_equal(load_image(path), _const(1.0))

    def test_byte_128_is_exact_division(self, tmp_path):
        # Oracle: integer division semantics, byte/255 exactly.
        from PIL import Image as PILImage

        path = tmp_path / "mid.png"
        PILImage.fromarray(np.full((16, 16, 3), 128, dtype=np.uint8)).save(path)
        loaded = load_image(path)
        assert np.array_equal(loaded, _const(128 / 255))

    def test_half_rounds_up_to_128(self, tmp_path):
        # Quantization oracle: round(0.5*255) = round-half-up(127.5) = 128.
        path = tmp_path / "half.png"
        save_image(_const(0.5), path)
        assert np.array_equal(load_image(path), _const(128 / 255))

    def test_grayscale_roundtrip(self, tmp_path):
        path = tmp_path / "gray.png"
        save_image(_const(0.25, c=1), path)
        loaded = load_image(path)
        assert loaded.shape == (16, 16, 1)
        assert np.array_equal(loaded, _const(np.floor(0.25 * 255 + 0.5) / 255, c=1))

    def test_roundtrip_error_bound(self, tmp_path):
        rng = np.random.default_rng(42)
        img = rng.uniform(0, 1, (16, 16, 3))
        path = tmp_path / "rand.png"
        save_image(img, path)
        assert np.abs(load_image(path) - img).max() <= 1 / (2 * 255)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageError, match="no such file"):
            load_image(tmp_path / "absent.png")

    def test_rejects_non_png(self, tmp_path):
        from PIL import Image as PILImage

        path = tmp_path / "img.bmp"
        PILImage.fromarray(np.zeros((16, 16, 3), dtype=np.uint8)).save(path, format="BMP")
        with pytest.raises(ImageError, match="expected PNG"):
            load_image(path)

    def test_rejects_alpha_and_16bit(self, tmp_path):
        from PIL import Image as PILImage

        rgba = tmp_path / "rgba.png"
        PILImage.fromarray(np.zeros((16, 16, 4), dtype=np.uint8), mode="RGBA").save(rgba)
        with pytest.raises(ImageError, match="unsupported mode"):
            load_image(rgba)
        deep = tmp_path / "deep.png"
        PILImage.fromarray(np.zeros((16, 16), dtype=np.uint16)).save(deep)
        with pytest.raises(ImageError, match="unsupported mode"):
            load_image(deep)

    def test_rejects_bad_dimensions(self, tmp_path):
        from PIL import Image as PILImage

        path = tmp_path / "odd.png"
        PILImage.fromarray(np.zeros((15, 16, 3), dtype=np.uint8)).save(path)
        with pytest.raises(ImageError, match="divisible by 8"):
            load_image(path)

    def test_save_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ImageError, match=r"\[0, 1\]"):
            save_image(_const(1.5), tmp_path / "over.png")


class TestGrayscale:
    def test_white_pixel(self):
        assert to_grayscale(_const(1.0))[0, 0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_black_pixel(self):
        assert to_grayscale(_const(0.0))[0, 0, 0] == 0.0

    def test_red_weight(self):
        # Direct weight-vector oracle for a pure red pixel.
        img = np.zeros((8, 8, 3))
        img[:, :, 0] = 1.0
        assert to_grayscale(img)[0, 0, 0] == pytest.approx(0.299, abs=1e-15)

    def test_rejects_single_channel(self):
        with pytest.raises(ImageError, match="3 channels"):
            to_grayscale(_const(0.5, c=1))

    @given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    def test_gray_of_gray_is_identity(self, v):
        out = to_grayscale(_const(v, h=8, w=8))
        assert np.allclose(out, v, atol=1e-12)


class TestDownsample:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_constant_is_preserved(self, k):
        out = downsample(_const(0.37, 16, 16), k)
        assert out.shape == (16 // 2**k, 16 // 2**k, 3)
        assert np.allclose(out, 0.37, atol=1e-12)

    def test_two_by_two_block_mean(self):
        # Block-mean oracle: every [0,0;1,1] block averages to exactly 0.5.
        block = np.array([[0.0, 0.0], [1.0, 1.0]])[:, :, None]
        img = np.tile(block, (4, 4, 1))
        out = downsample(img, 1)
        assert out.shape == (4, 4, 1)
        assert np.array_equal(out, np.full((4, 4, 1), block.mean()))

    def test_checkerboard_k3_global_mean(self):
        yy, xx = np.mgrid[0:8, 0:8]
        board = ((yy + xx) % 2).astype(np.float64)[:, :, None]
        out = downsample(board, 3)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == pytest.approx(board.mean(), abs=1e-15) == 0.5

    def test_pooling_composes(self, rng):
        img = rng.uniform(0, 1, (32, 32, 3))
        once_twice = downsample(downsample(img, 1), 1)
        assert np.allclose(once_twice, downsample(img, 2), atol=1e-12)
        thrice = downsample(downsample(downsample(img, 1), 1), 1)
        assert np.allclose(thrice, downsample(img, 3), atol=1e-12)

    def test_rejects_non_divisible(self):
        with pytest.raises(ImageError, match="not divisible"):
            downsample(np.zeros((12, 12, 3)), 3)


class TestModelRange:
    def test_endpoints(self):
        assert to_model_range(np.array([[[0.0]]]))[0, 0, 0] == -1.0
        assert to_model_range(np.array([[[1.0]]]))[0, 0, 0] == 1.0
        assert from_model_range(np.array([[[-1.0]]]))[0, 0, 0] == 0.0
        assert from_model_range(np.array([[[1.0]]]))[0, 0, 0] == 1.0

    def test_overshoot_clamps(self):
        assert from_model_range(np.array([[[1.5]]]))[0, 0, 0] == 1.0
        assert from_model_range(np.array([[[-2.0]]]))[0, 0, 0] == 0.0

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_roundtrip_identity_randomized(self, seed):
        img = np.random.default_rng(seed).uniform(0, 1, (4, 4, 1))
        back = from_model_range(to_model_range(img))
        assert np.allclose(back, img, atol=1e-15)


class TestCheckImage:
    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ImageError, match="channels"):
            images.check_image(np.zeros((8, 8, 2)))

    def test_rejects_nonfinite(self):
        bad = np.zeros((8, 8, 3))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ImageError, match="non-finite"):
            images.check_image(bad)

    def test_rejects_small_dims(self):
        with pytest.raises(ImageError, match="divisible by 8"):
            images.check_image(np.zeros((4, 8, 3)))
