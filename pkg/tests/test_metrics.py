import math

import numpy as np
import pytest

from irnet import metrics
from irnet.data import DatasetManifest, ImagePair
from irnet.errors import ShapeError
from irnet.metrics import (analyze_luminance, luma, normalize_mean_maps,
                           profile_ratio, psnr, ssim)

from toydata import write_pair_pngs
from oracles import ssim_windowed


class TestPSNR:
    def test_identical_images_hit_sentinel(self, rng):
        x = rng.random((1, 3, 8, 8), dtype=np.float32)
        assert psnr(x, x) == math.inf

    def test_uniform_error_closed_form(self):
        gt = np.full((1, 3, 10, 10), 0.25, dtype=np.float64)
        pred = gt + 0.1
        assert abs(psnr(pred, gt) - 20.0) < 1e-6

    def test_matches_direct_formula(self, rng):
        a = rng.random((1, 3, 6, 6), dtype=np.float32)
        b = rng.random((1, 3, 6, 6), dtype=np.float32)
        mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
        assert abs(psnr(a, b) - 10 * math.log10(1 / mse)) < 1e-6

    def test_translation_covariance(self, rng):
        # values on the 1/256 grid make the +c shift exact in float32
        x = (rng.integers(0, 128, (1, 3, 6, 6)) / 256.0).astype(np.float32)
        y = (rng.integers(0, 128, (1, 3, 6, 6)) / 256.0).astype(np.float32)
        c = np.float32(0.25)
        assert abs(psnr(x, y) - psnr(x + c, y + c)) < 1e-9

    def test_symmetry(self, rng):
        x = rng.random((1, 3, 6, 6), dtype=np.float32)
        y = rng.random((1, 3, 6, 6), dtype=np.float32)
        assert psnr(x, y) == pytest.approx(psnr(y, x), abs=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            psnr(rng.random((1, 3, 4, 4), dtype=np.float32),
                 rng.random((1, 3, 4, 5), dtype=np.float32))


class TestSSIM:
    def test_self_similarity_is_one(self, rng):
        x = rng.random((1, 3, 16, 16), dtype=np.float32)
        assert abs(ssim(x, x) - 1.0) < 1e-9

    def test_constant_shift_equals_luminance_term(self):
        gt = np.full((1, 1, 12, 12), 0.4, dtype=np.float32)
        pred = np.full((1, 1, 12, 12), 0.5, dtype=np.float32)
        got = ssim(pred, gt)
        c1 = 0.01 ** 2
        lum = (2 * 0.5 * 0.4 + c1) / (0.5 ** 2 + 0.4 ** 2 + c1)
        assert got < 1.0
        assert got == pytest.approx(lum, rel=1e-5)
        assert got == pytest.approx(ssim_windowed(pred, gt), abs=1e-6)

    def test_matches_windowed_oracle_on_random_pairs(self, rng):
        for _ in range(20):
            a = rng.random((1, 2, 13, 14), dtype=np.float32)
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1).astype(np.float32)
            assert abs(ssim(a, b) - ssim_windowed(a, b)) < 1e-6

    def test_independent_noise_scores_low(self, rng):
        a = rng.random((1, 1, 32, 32), dtype=np.float32)
        b = rng.random((1, 1, 32, 32), dtype=np.float32)
        assert ssim(a, b) < 0.2

    def test_range(self, rng):
        a = rng.random((1, 1, 16, 16), dtype=np.float32)
        b = 1.0 - a
        val = ssim(a, b)
        assert -1.0 < val <= 1.0

    def test_too_small_image_rejected(self, rng):
        x = rng.random((1, 1, 8, 8), dtype=np.float32)
        with pytest.raises(ShapeError):
            ssim(x, x)


class TestLuma:
    def test_white_is_one_under_both_standards(self):
        white = np.ones((1, 3, 2, 2), dtype=np.float32)
        for std in ("rec709", "rec2020"):
            assert np.allclose(luma(white, std), 1.0, atol=1e-6)

    def test_pure_green_rec2020(self):
        green = np.zeros((1, 3, 2, 2), dtype=np.float32)
        green[0, 1] = 1.0
        assert np.allclose(luma(green, "rec2020"), 0.6780, atol=1e-6)

    def test_matches_dot_product(self, rng):
        x = rng.random((1, 3, 4, 4), dtype=np.float32)
        got = luma(x, "rec709")[0, 0]
        ref = 0.2126 * x[0, 0] + 0.7152 * x[0, 1] + 0.0722 * x[0, 2]
        assert np.allclose(got, ref, atol=1e-6)

    def test_channel_count_checked(self, rng):
        with pytest.raises(ShapeError):
            luma(rng.random((1, 1, 2, 2), dtype=np.float32))


class TestAnalyzeLuminance:
    def make_manifest(self, tmp_path, pairs):
        entries = []
        for i, (sdr, hdr) in enumerate(pairs):
            sp, hp = tmp_path / f"s{i}.png", tmp_path / f"h{i}.png"
            write_pair_pngs(sdr, hdr, sp, hp)
            entries.append(ImagePair(str(sp), str(hp)))
        return DatasetManifest(entries=entries)

    def test_identical_content_same_standard_zero_gaps(self, tmp_path, rng):
        base = (rng.integers(0, 256, (1, 3, 8, 8)) / 255.0).astype(np.float32)
        manifest = self.make_manifest(tmp_path, [(base, base)])
        recs = analyze_luminance(manifest, sdr_standard="rec2020",
                                 hdr_standard="rec2020")
        r = recs[0]
        assert r.hdr_max_luma - r.sdr_luma_at_hdr_argmax == 0.0
        assert r.hdr_min_luma - r.sdr_luma_at_hdr_argmin == 0.0

    def test_constructed_extrema_found(self, tmp_path):
        hdr = np.full((1, 3, 32, 32), 0.5, dtype=np.float32)
        hdr[0, :, 10, 20] = 1.0   # bright site
        hdr[0, :, 3, 4] = 0.0     # dark site
        sdr = np.full((1, 3, 32, 32), 0.25, dtype=np.float32)
        manifest = self.make_manifest(tmp_path, [(sdr, hdr)])
        r = analyze_luminance(manifest)[0]
        assert r.hdr_max_luma == pytest.approx(1.0, abs=1e-4)
        assert r.hdr_min_luma == pytest.approx(0.0, abs=1e-4)
        assert r.sdr_luma_at_hdr_argmax == pytest.approx(0.25, abs=1e-3)

    def test_row_major_tie_break(self, tmp_path):
        hdr = np.zeros((1, 3, 4, 4), dtype=np.float32)
        hdr[0, :, 1, 2] = 1.0
        hdr[0, :, 2, 1] = 1.0  # tie; first in row-major order wins
        sdr = np.zeros((1, 3, 4, 4), dtype=np.float32)
        sdr[0, :, 1, 2] = 0.5
        manifest = self.make_manifest(tmp_path, [(sdr, hdr)])
        r = analyze_luminance(manifest)[0]
        assert r.sdr_luma_at_hdr_argmax == pytest.approx(128 / 255, abs=1e-6)

    def test_ordering_matches_manifest_and_reruns_identically(self, tmp_path, rng):
        pairs = []
        for _ in range(3):
            hdr = rng.random((1, 3, 8, 8), dtype=np.float32)
            sdr = (hdr * 0.8).astype(np.float32)
            pairs.append((sdr, hdr))
        manifest = self.make_manifest(tmp_path, pairs)
        a = analyze_luminance(manifest)
        b = analyze_luminance(manifest)
        assert [r.name for r in a] == [f"s{i}" for i in range(3)]
        assert a == b

    def test_csv_output(self, tmp_path, rng):
        hdr = rng.random((1, 3, 8, 8), dtype=np.float32)
        manifest = self.make_manifest(tmp_path, [((hdr * 0.7).astype(np.float32), hdr)])
        recs = analyze_luminance(manifest)
        out = tmp_path / "lum.csv"
        metrics.write_luminance_csv(recs, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == ("name,hdr_max_luma,sdr_luma_at_hdr_argmax,"
                            "hdr_min_luma,sdr_luma_at_hdr_argmin")
        assert len(lines) == 2


class TestProfileRatio:
    def test_identical_images_ratio_one(self, rng):
        img = rng.random((1, 3, 8, 16), dtype=np.float32) + 0.1
        img = np.clip(img, 0, 1).astype(np.float32)
        a, b, ratio = profile_ratio(img, img, row=3, x0=2, x1=12)
        assert len(a) == 10
        assert np.allclose(ratio, 1.0)

    def test_halved_image_gives_ratio_two(self, rng):
        img = (rng.random((1, 3, 8, 16), dtype=np.float32) * 0.5 + 0.25).astype(np.float32)
        half = (img * 0.5).astype(np.float32)
        _, _, ratio = profile_ratio(img, half, row=0, x0=0, x1=16)
        assert np.allclose(ratio, 2.0, atol=1e-5)

    def test_matches_per_pixel_oracle(self, rng):
        a = rng.random((1, 3, 6, 10), dtype=np.float32)
        b = rng.random((1, 3, 6, 10), dtype=np.float32)
        la, lb, ratio = profile_ratio(a, b, row=2, x0=1, x1=9)
        for i, x in enumerate(range(1, 9)):
            ya = 0.2126 * a[0, 0, 2, x] + 0.7152 * a[0, 1, 2, x] + 0.0722 * a[0, 2, 2, x]
            yb = 0.2126 * b[0, 0, 2, x] + 0.7152 * b[0, 1, 2, x] + 0.0722 * b[0, 2, 2, x]
            assert la[i] == pytest.approx(ya, abs=1e-6)
            assert ratio[i] == pytest.approx(ya / max(yb, 1e-6), rel=1e-5)

    def test_out_of_bounds_rejected(self, rng):
        img = rng.random((1, 3, 4, 4), dtype=np.float32)
        with pytest.raises(ShapeError):
            profile_ratio(img, img, row=4, x0=0, x1=4)
        with pytest.raises(ShapeError):
            profile_ratio(img, img, row=0, x0=2, x1=9)


class TestNormalizeMeanMaps:
    def test_equal_maps_span_unit_interval(self, rng):
        m = rng.random((5, 5))
        a, b = normalize_mean_maps(m, m.copy())
        assert np.array_equal(a, b)
        assert a.min() == pytest.approx(0.0)
        assert a.max() == pytest.approx(1.0)

    def test_degenerate_range_gives_zeros(self):
        m = np.full((3, 3), 0.7)
        a, b = normalize_mean_maps(m, m.copy())
        assert not a.any() and not b.any()

    def test_hand_computed_joint_scale(self):
        a = np.array([[0.0, 1.0], [1.0, 2.0]])
        b = np.array([[0.0, 2.0], [2.0, 4.0]])
        na, nb = normalize_mean_maps(a, b)
        assert np.array_equal(na, a / 4.0)
        assert np.array_equal(nb, b / 4.0)

    def test_channel_mean_applied_to_tensors(self, rng):
        t1 = rng.random((1, 4, 3, 3), dtype=np.float32)
        t2 = rng.random((1, 4, 3, 3), dtype=np.float32)
        a, b = normalize_mean_maps(t1, t2)
        assert a.shape == (3, 3) and b.shape == (3, 3)

    def test_outputs_in_unit_interval_for_shared_minimum(self, rng):
        for _ in range(20):
            base = rng.random()
            a = base + rng.random((4, 4)) * rng.uniform(0.1, 2)
            b = base + rng.random((4, 4)) * rng.uniform(0.1, 2)
            a.flat[0] = base  # both maps share their minimum
            b.flat[0] = base
            na, nb = normalize_mean_maps(a, b)
            for m in (na, nb):
                assert m.min() >= -1e-12 and m.max() <= 1.0 + 1e-12


class TestEvaluatePairs:
    def test_report_means_and_order(self, tmp_path, rng):
        entries = []
        for i in range(3):
            hdr = rng.random((1, 3, 16, 16), dtype=np.float32)
            sdr = np.clip(hdr + rng.normal(0, 0.05, hdr.shape), 0, 1).astype(np.float32)
            sp, hp = tmp_path / f"s{i}.png", tmp_path / f"h{i}.png"
            write_pair_pngs(sdr, hdr, sp, hp)
            entries.append(ImagePair(str(sp), str(hp)))
        manifest = DatasetManifest(entries=entries)
        report, failures = metrics.evaluate_pairs(lambda x: x, manifest)
        assert not failures
        assert [r.name for r in report.rows] == ["s0", "s1", "s2"]
        assert report.mean_psnr == pytest.approx(
            np.mean([r.psnr for r in report.rows]), abs=1e-9)
        assert report.mean_ssim == pytest.approx(
            np.mean([r.ssim for r in report.rows]), abs=1e-9)
        # threaded evaluation returns the same rows in the same order
        report2, _ = metrics.evaluate_pairs(lambda x: x, manifest, threads=3)
        assert [(r.name, r.psnr, r.ssim) for r in report2.rows] == \
            [(r.name, r.psnr, r.ssim) for r in report.rows]

    def test_sentinel_rows_excluded_from_psnr_mean(self, tmp_path, rng):
        hdr = (rng.integers(0, 65536, (1, 3, 16, 16)) / 65535.0).astype(np.float32)
        sp, hp = tmp_path / "s.png", tmp_path / "h.png"
        write_pair_pngs(hdr, hdr, sp, hp)  # SDR content irrelevant here

        def perfect(_x):
            from irnet.data import load_png16
            return load_png16(hp)

        manifest = DatasetManifest(entries=[ImagePair(str(sp), str(hp))])
        report, _ = metrics.evaluate_pairs(perfect, manifest)
        assert report.rows[0].psnr == math.inf
        assert report.sentinel_rows == 1
        out = tmp_path / "report.csv"
        metrics.write_eval_csv(report, out)
        lines = out.read_text().strip().splitlines()
        assert lines[1].split(",")[1] == "inf"

    def test_failures_reported_per_pair(self, tmp_path, rng):
        hdr = rng.random((1, 3, 16, 16), dtype=np.float32)
        sp, hp = tmp_path / "s.png", tmp_path / "h.png"
        write_pair_pngs((hdr * 0.8).astype(np.float32), hdr, sp, hp)
        manifest = DatasetManifest(entries=[
            ImagePair(str(sp), str(hp)),
            ImagePair(str(tmp_path / "missing.png"), str(hp)),
        ])
        report, failures = metrics.evaluate_pairs(lambda x: x, manifest)
        assert len(report.rows) == 1
        assert len(failures) == 1
