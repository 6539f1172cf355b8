"""PSNR and MS-SSIM behavior, cross-checked against scikit-image, plus timing."""

import numpy as np
import pytest

from splat2d.metrics import (
    CSV_FIELDS,
    QualityReport,
    ms_ssim,
    ms_ssim_scales,
    psnr,
    time_decode,
    write_csv,
)


class TestPsnr:
    def test_identical_images_hit_the_sentinel(self):
        img = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(img, img) == float("inf")

    def test_uniform_difference_closed_form(self):
        a = np.full((16, 16, 3), 0.6)
        b = np.full((16, 16, 3), 0.5)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_black_vs_white(self):
        assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_monotone_degradation_under_noise(self, astronaut_crop_128):
        rng = np.random.default_rng(1)
        values = []
        for sigma in (0.01, 0.05, 0.1):
            noisy = np.clip(astronaut_crop_128 + rng.normal(scale=sigma, size=astronaut_crop_128.shape), 0, 1)
            values.append(psnr(astronaut_crop_128, noisy))
        assert values[0] > values[1] > values[2]


class TestMsSsim:
    def test_identity_is_exactly_one(self, astronaut_crop_128):
        assert ms_ssim(astronaut_crop_128, astronaut_crop_128) == 1.0

    def test_symmetry(self, astronaut_crop_128):
        rng = np.random.default_rng(2)
        other = np.clip(astronaut_crop_128 + rng.normal(scale=0.1, size=astronaut_crop_128.shape), 0, 1)
        assert abs(ms_ssim(astronaut_crop_128, other) - ms_ssim(other, astronaut_crop_128)) < 1e-12

    def test_structural_inversion_scores_low(self):
        rng = np.random.default_rng(3)
        # mid-gray-free image: values pushed away from 0.5
        a = np.where(rng.random((64, 64, 3)) > 0.5, 0.9, 0.1)
        a = a + rng.uniform(-0.05, 0.05, a.shape)
        assert ms_ssim(a, 1.0 - a) < 0.5

    def test_range(self, astronaut_crop_128):
        rng = np.random.default_rng(4)
        noisy = np.clip(astronaut_crop_128 + rng.normal(scale=0.2, size=astronaut_crop_128.shape), 0, 1)
        value = ms_ssim(astronaut_crop_128, noisy)
        assert 0.0 <= value <= 1.0

    def test_scale_count_rules(self):
        assert ms_ssim_scales(11, 11) == 1
        assert ms_ssim_scales(10, 300) == 0
        assert ms_ssim_scales(44, 44) == 3
        assert ms_ssim_scales(176, 176) == 5
        assert ms_ssim_scales(512, 768) == 5

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_single_scale_matches_skimage(self):
        skimage_metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(5)
        a = rng.random((20, 20, 3))
        b = np.clip(a + rng.normal(scale=0.15, size=a.shape), 0, 1)
        assert ms_ssim_scales(20, 20) == 1  # forces the pure-SSIM path
        ours = ms_ssim(a, b)
        reference = np.mean(
            [
                skimage_metrics.structural_similarity(
                    a[:, :, ch],
                    b[:, :, ch],
                    win_size=11,
                    gaussian_weights=True,
                    sigma=1.5,
                    use_sample_covariance=False,
                    data_range=1.0,
                    K1=0.01,
                    K2=0.03,
                )
                for ch in range(3)
            ]
        )
        assert ours == pytest.approx(reference, rel=1e-6)

    def test_weights_renormalized_for_few_scales(self):
        #  a mild perturbation must not score lower on a 3-scale image than
        #  total disagreement does
        rng = np.random.default_rng(6)
        a = rng.random((44, 44, 3))
        near = np.clip(a + rng.normal(scale=0.02, size=a.shape), 0, 1)
        assert ms_ssim(a, near) > ms_ssim(a, 1.0 - a)


class TestQualityReport:
    def test_csv_roundtrip(self, tmp_path):
        report = QualityReport(psnr=31.5, ms_ssim=0.97, bpp=1.08, encode_seconds=12.0, decode_fps=44.0)
        row = report.csv_row("kodim01", 5000, 50_000, "direct", "d3+caf")
        assert tuple(row) == CSV_FIELDS
        path = tmp_path / "out.csv"
        write_csv(path, [row])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(CSV_FIELDS)
        assert "kodim01" in lines[1]

    def test_optional_fields_blank(self):
        row = QualityReport(psnr=30.0, ms_ssim=0.9).csv_row("x", 10, 10, "rs", "")
        assert row["bpp"] == "" and row["encode_s"] == "" and row["decode_fps"] == ""


class TestTimeDecode:
    def _stream(self):
        from splat2d.bitstream import encode
        from splat2d.quantizer import QuantizerBank, calibrate_bank
        from conftest import make_random_cloud

        cloud = make_random_cloud(np.random.default_rng(7), 200, 64, 64)
        return encode(cloud, calibrate_bank(QuantizerBank.default(), cloud), 64, 64)

    def test_single_repeat(self):
        fps, img = time_decode(self._stream(), repeats=1)
        assert np.isfinite(fps) and fps > 0
        assert img.shape == (64, 64, 3)

    def test_median_stability(self):
        data = self._stream()
        time_decode(data, repeats=1)  # warm the kernels
        medians = [time_decode(data, repeats=9)[0] for _ in range(4)]
        cv = np.std(medians) / np.mean(medians)
        assert cv < 0.2

    def test_rejects_bad_repeats(self):
        with pytest.raises(ValueError):
            time_decode(self._stream(), repeats=0)
