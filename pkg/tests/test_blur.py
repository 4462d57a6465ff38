import numpy as np
import pytest

from guided_deblur import blur, images, metrics
from guided_deblur.blur import (
    SHIFTED_CONFIG,
    TRAIN_CONFIG,
    GenerationConfig,
    apply_blur,
    gen_motion_kernel,
    gen_sharp_image,
    load_dataset,
    make_dataset,
    regenerate_dataset,
    save_dataset,
)


def _reflect_correlate(channel: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Direct convolution oracle: explicit symmetric padding + window sums."""
    half = weights.shape[0] // 2
    padded = np.pad(channel, half, mode="symmetric")
    out = np.zeros_like(channel)
    for i in range(channel.shape[0]):
        for j in range(channel.shape[1]):
            win = padded[i : i + weights.shape[0], j : j + weights.shape[1]]
            out[i, j] = float((win * weights).sum())
    return out


class TestSharpImages:
    def test_determinism(self):
        assert np.array_equal(gen_sharp_image(3, 64), gen_sharp_image(3, 64))

    def test_seeds_differ(self):
        # Pixel-diff oracle: different seeds disagree on >= 1% of pixels.
        a, b = gen_sharp_image(1, 64), gen_sharp_image(2, 64)
        frac = np.mean(np.any(a != b, axis=2))
        assert frac >= 0.01

    def test_shape_and_range(self):
        img = gen_sharp_image(0, 64)
        assert img.shape == (64, 64, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_edges_at_multiple_orientations(self):
        # Gradient energy along both axes so deblurring is observable.
        img = images.to_grayscale(gen_sharp_image(5, 64))[:, :, 0]
        gy = np.abs(np.diff(img, axis=0)).sum()
        gx = np.abs(np.diff(img, axis=1)).sum()
        assert gx > 1.0 and gy > 1.0

    def test_rejects_bad_size(self):
        with pytest.raises(ValueError):
            gen_sharp_image(0, 20)


class TestMotionKernel:
    def test_length_one_is_identity(self):
        for angle in (0.0, 0.7, 2.4):
            k = gen_motion_kernel(1, angle)
            assert k.size == 1
            assert np.array_equal(k.weights, np.array([[1.0]]))

    def test_horizontal_five_tap(self):
        # Line-rasterization oracle: 5 taps at unit spacing, 0.2 each.
        k = gen_motion_kernel(5, 0.0)
        mid = k.size // 2
        expected = np.zeros_like(k.weights)
        expected[mid, mid - 2 : mid + 3] = 0.2
        assert np.allclose(k.weights, expected, atol=1e-15)

    def test_vertical_five_tap(self):
        k = gen_motion_kernel(5, np.pi / 2)
        mid = k.size // 2
        col = k.weights[:, mid]
        assert np.allclose(sorted(col[col > 1e-12]), [0.2] * 5, atol=1e-9)

    @pytest.mark.parametrize("length,angle", [(3, 0.3), (7.2, 1.1), (11, 2.8), (4.6, 0.0)])
    def test_weights_normalized_and_nonnegative(self, length, angle):
        k = gen_motion_kernel(length, angle)
        assert k.size % 2 == 1
        assert k.weights.min() >= 0.0
        assert k.weights.sum() == pytest.approx(1.0, abs=1e-6)

    def test_explicit_size_too_small(self):
        with pytest.raises(ValueError, match="exceeds kernel support"):
            gen_motion_kernel(9, 0.0, size=5)

    def test_rejects_sub_unit_length(self):
        with pytest.raises(ValueError):
            gen_motion_kernel(0.5, 0.0)


class TestApplyBlur:
    def test_identity_kernel_noiseless(self):
        img = gen_sharp_image(4, 32)
        k = gen_motion_kernel(1, 0.0)
        assert np.allclose(apply_blur(img, k), img, atol=1e-12)

    def test_constant_image_preserved(self):
        img = np.full((16, 16, 3), 0.42)
        k = gen_motion_kernel(5, 0.9)
        assert np.allclose(apply_blur(img, k), img, atol=1e-12)

    def test_step_edge_becomes_linear_ramp(self):
        # Direct convolution oracle on a vertical step edge.
        img = np.zeros((16, 16, 1))
        img[:, 8:, 0] = 1.0
        k = gen_motion_kernel(5, 0.0)
        out = apply_blur(img, k)
        oracle = _reflect_correlate(img[:, :, 0], k.weights)
        assert np.allclose(out[:, :, 0], oracle, atol=1e-12)
        row = out[4, :, 0]
        assert np.allclose(row[6:10], [0.2, 0.4, 0.6, 0.8], atol=1e-12)
        assert np.allclose(np.diff(row[5:11]), 0.2, atol=1e-12)

    def test_matches_oracle_on_random_content(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        k = gen_motion_kernel(4.3, 1.2)
        out = apply_blur(img, k)
        for c in range(3):
            assert np.allclose(out[:, :, c], _reflect_correlate(img[:, :, c], k.weights), atol=1e-12)

    def test_mean_preserved_over_corpus(self):
        # Mass-1 kernels with reflect padding keep the image mean; checked
        # empirically on noise-free draws from the in-domain corpus config.
        cfg = TRAIN_CONFIG
        for i in range(8):
            seed = cfg.seed ^ i
            prng = np.random.default_rng([seed, 1])
            length = prng.uniform(*cfg.length_range)
            angle = prng.uniform(*cfg.angle_range)
            img = gen_sharp_image(seed, cfg.size)
            blurred = apply_blur(img, gen_motion_kernel(length, angle))
            assert abs(blurred.mean() - img.mean()) <= 1e-5

    def test_noise_requires_rng(self):
        img = gen_sharp_image(0, 16)
        with pytest.raises(ValueError, match="rng"):
            apply_blur(img, gen_motion_kernel(3, 0.0), noise_std=0.01)

    def test_kernel_must_fit(self):
        img = gen_sharp_image(0, 8)
        with pytest.raises(ValueError, match="fit"):
            apply_blur(img, gen_motion_kernel(15, 0.0))


class TestDataset:
    def test_singleton_reproducible(self):
        cfg = GenerationConfig(seed=9, size=16, length_range=(3, 4))
        a = make_dataset(cfg, 1)
        b = make_dataset(cfg, 1)
        assert len(a) == 1
        assert np.array_equal(a.pairs[0][0], b.pairs[0][0])
        assert np.array_equal(a.pairs[0][1], b.pairs[0][1])

    def test_train_config_shapes(self, train_dataset):
        assert len(train_dataset) == 8
        for sharp, blurred in train_dataset.pairs:
            assert sharp.shape == (64, 64, 3)
            assert blurred.shape == (64, 64, 3)

    def test_blur_degrades_with_finite_psnr(self, train_dataset):
        for sharp, blurred in train_dataset.pairs:
            p = metrics.psnr(blurred, sharp)
            assert np.isfinite(p)
            assert p < metrics.PSNR_CAP_DB

    def test_shifted_domain_is_harder(self, train_dataset):
        # Compute both corpora; the shifted config must score lower mean PSNR.
        shifted = make_dataset(SHIFTED_CONFIG, 8)
        mean_train = np.mean([metrics.psnr(b, s) for s, b in train_dataset.pairs])
        mean_shifted = np.mean([metrics.psnr(b, s) for s, b in shifted.pairs])
        assert mean_shifted < mean_train

    def test_manifest_regeneration_bit_identical(self, train_dataset):
        regen = regenerate_dataset(train_dataset.manifest, train_dataset.seed, train_dataset.size)
        for (s0, b0), (s1, b1) in zip(train_dataset.pairs, regen.pairs):
            assert np.array_equal(s0, s1)
            assert np.array_equal(b0, b1)

    def test_save_load_roundtrip_bit_exact(self, tmp_path, train_dataset):
        save_dataset(train_dataset, tmp_path)
        loaded = load_dataset(tmp_path)
        assert loaded.seed == train_dataset.seed
        assert loaded.manifest == train_dataset.manifest
        for (s0, b0), (s1, b1) in zip(train_dataset.pairs, loaded.pairs):
            assert np.array_equal(s0, s1)
            assert np.array_equal(b0, b1)

    def test_layout_on_disk(self, tmp_path):
        ds = make_dataset(GenerationConfig(seed=2, size=16, length_range=(3, 4)), 2)
        save_dataset(ds, tmp_path)
        assert (tmp_path / "manifest.json").exists()
        assert (tmp_path / "pairs" / "0000_sharp.png").exists()
        assert (tmp_path / "pairs" / "0001_blur.png").exists()

    def test_noise_config_applies_noise(self):
        noisy_cfg = GenerationConfig(seed=3, size=16, length_range=(3, 4), noise_std=0.05)
        clean_cfg = GenerationConfig(seed=3, size=16, length_range=(3, 4), noise_std=0.0)
        noisy = make_dataset(noisy_cfg, 1).pairs[0][1]
        clean = make_dataset(clean_cfg, 1).pairs[0][1]
        assert not np.array_equal(noisy, clean)

    def test_rejects_invalid_config(self):
        with pytest.raises(ValueError):
            make_dataset(GenerationConfig(seed=0, size=16, length_range=(0.2, 3)), 1)
        with pytest.raises(ValueError):
            make_dataset(GenerationConfig(seed=0, size=16, length_range=(3, 9)), 1)
        with pytest.raises(ValueError):
            make_dataset(TRAIN_CONFIG, 0)
