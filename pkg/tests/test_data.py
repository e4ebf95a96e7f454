import numpy as np
import pytest

from irnet import data
from irnet.data import (DatasetManifest, ImagePair, PatchPair, augment,
                        batcher, crop_patches, load_manifest, load_png8,
                        load_png16, make_lr, save_png16)
from irnet.errors import ImageFormatError, ManifestError, ShapeError

from toydata import toy_pair, write_pair_pngs
from oracles import bicubic_downsample_direct, dihedral_apply_loops


def write_png8(path, arr_hw3):
    import cv2
    cv2.imwrite(str(path), np.ascontiguousarray(arr_hw3[:, :, ::-1]))


class TestPngIO:
    def test_normalization_endpoints(self, tmp_path):
        img = np.zeros((2, 2, 3), dtype=np.uint8)
        img[0, 0] = 255
        path = tmp_path / "a.png"
        write_png8(path, img)
        x = load_png8(path)
        assert x[0, :, 0, 0].tolist() == [1.0, 1.0, 1.0]
        assert x[0, :, 1, 1].tolist() == [0.0, 0.0, 0.0]

    def test_16bit_round_trip_is_bit_exact(self, tmp_path, rng):
        x = (rng.integers(0, 65536, (1, 3, 4, 5)) / 65535.0).astype(np.float32)
        path = tmp_path / "h.png"
        save_png16(x, path)
        y = load_png16(path)
        # data already on the quantization grid survives a second round trip
        path2 = tmp_path / "h2.png"
        save_png16(y, path2)
        assert np.array_equal(load_png16(path2), y)

    def test_save_clamps_out_of_range(self, tmp_path):
        x = np.full((1, 3, 2, 2), 1.5, dtype=np.float32)
        path = tmp_path / "c.png"
        save_png16(x, path)
        assert np.array_equal(load_png16(path), np.ones_like(x))

    def test_wrong_bit_depth_rejected(self, tmp_path, rng):
        x = (rng.random((1, 3, 4, 4))).astype(np.float32)
        path = tmp_path / "h16.png"
        save_png16(x, path)
        with pytest.raises(ImageFormatError) as exc:
            load_png8(path)
        assert str(path) in str(exc.value)
        img8 = (rng.random((4, 4, 3)) * 255).astype(np.uint8)
        path8 = tmp_path / "i8.png"
        write_png8(path8, img8)
        with pytest.raises(ImageFormatError):
            load_png16(path8)

    def test_non_rgb_rejected(self, tmp_path):
        import cv2
        gray = np.zeros((4, 4), dtype=np.uint8)
        path = tmp_path / "g.png"
        cv2.imwrite(str(path), gray)
        with pytest.raises(ImageFormatError):
            load_png8(path)

    def test_decode_failure_names_file(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"not a png")
        with pytest.raises(ImageFormatError) as exc:
            load_png8(path)
        assert exc.value.path == str(path)


class TestManifest:
    def test_parse_ignores_comments_and_blanks(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("# header\n/a.png\t/b.png\n\n/c.png\t/d.png\n")
        m = load_manifest(path)
        assert m.entries == [ImagePair("/a.png", "/b.png"),
                             ImagePair("/c.png", "/d.png")]

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("only-one-field\n")
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_validation_requires_decodable_matching_pairs(self, tmp_path, rng):
        sdr, hdr = toy_pair(rng, 16)
        write_pair_pngs(sdr, hdr, tmp_path / "s.png", tmp_path / "h.png")
        path = tmp_path / "m.txt"
        path.write_text(f"{tmp_path / 's.png'}\t{tmp_path / 'h.png'}\n")
        m = load_manifest(path, validate=True)
        assert len(m.entries) == 1
        # mismatched dimensions fail validation
        sdr2, hdr2 = toy_pair(rng, 16)
        save_png16(hdr2[:, :, :8], tmp_path / "h_small.png")
        path.write_text(f"{tmp_path / 's.png'}\t{tmp_path / 'h_small.png'}\n")
        with pytest.raises(ManifestError):
            load_manifest(path, validate=True)

    def test_pair_directories_by_stem(self, tmp_path, rng):
        (tmp_path / "sdr").mkdir()
        (tmp_path / "hdr").mkdir()
        for name in ("a", "b"):
            sdr, hdr = toy_pair(rng, 12)
            write_pair_pngs(sdr, hdr, tmp_path / "sdr" / f"{name}.png",
                            tmp_path / "hdr" / f"{name}.png")
        entries, unpaired = data.pair_directories(tmp_path / "sdr", tmp_path / "hdr")
        assert len(entries) == 2 and not unpaired
        sdr, hdr = toy_pair(rng, 12)
        write_pair_pngs(sdr, hdr, tmp_path / "sdr" / "orphan.png",
                        tmp_path / "hdr" / "zzz.png")
        entries, unpaired = data.pair_directories(tmp_path / "sdr", tmp_path / "hdr")
        assert len(entries) == 2
        assert unpaired == ["orphan", "zzz"]


class TestCropPatches:
    def test_default_count(self, rng):
        pair = toy_pair(rng, 40)
        patches = crop_patches(pair, count=30, size=16, rng=rng)
        assert len(patches) == 30
        assert all(p.sdr.shape == (1, 3, 16, 16) for p in patches)

    def test_windows_inside_bounds_and_aligned(self, rng):
        sdr = np.zeros((1, 3, 20, 20), dtype=np.float32)
        sdr[0, :, 5:9, 7:11] = 1.0  # marker block
        hdr = sdr.copy()
        for p in crop_patches((sdr, hdr), count=50, size=8, rng=rng):
            assert p.sdr.shape == (1, 3, 8, 8)
            assert np.array_equal(p.sdr, p.hdr)  # same window on both sides

    def test_fixed_seed_reproducible(self, rng):
        pair = toy_pair(rng, 32)
        a = crop_patches(pair, 10, 8, np.random.default_rng(5))
        b = crop_patches(pair, 10, 8, np.random.default_rng(5))
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.sdr, pb.sdr)
            assert np.array_equal(pa.hdr, pb.hdr)

    def test_too_small_image_rejected(self, rng):
        pair = toy_pair(rng, 8)
        with pytest.raises(ShapeError):
            crop_patches(pair, 1, 16, rng)

    def test_lr_scale_crops_are_downsampled_counterparts(self, rng):
        pair = toy_pair(rng, 32)
        patches = crop_patches(pair, 5, 16, np.random.default_rng(1), lr_scale=4)
        for p in patches:
            assert p.sdr.shape == (1, 3, 4, 4)
            assert p.hdr.shape == (1, 3, 16, 16)


class TestAugment:
    def test_hflip_twice_is_identity(self, rng):
        pair = toy_pair(rng, 8)
        patch = PatchPair(*pair)
        flipped = PatchPair(data.apply_dihedral(patch.sdr, 4),
                            data.apply_dihedral(patch.hdr, 4))
        again = PatchPair(data.apply_dihedral(flipped.sdr, 4),
                          data.apply_dihedral(flipped.hdr, 4))
        assert np.array_equal(again.sdr, patch.sdr)
        assert np.array_equal(again.hdr, patch.hdr)

    def test_rotation_preserves_multiset(self, rng):
        x = rng.random((1, 3, 6, 6), dtype=np.float32)
        for idx in range(8):
            y = data.apply_dihedral(x, idx)
            assert np.array_equal(np.sort(x.ravel()), np.sort(y.ravel()))

    def test_seeds_cover_transforms_matching_permutation_oracle(self, rng):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        seen = set()
        for seed in range(64):
            srng = np.random.default_rng(seed)
            patch = augment(PatchPair(x.copy(), x.copy()), srng)
            seen.add(patch.sdr.tobytes())
        assert len(seen) >= 6
        # every one of the 8 transforms matches the loop-based oracle
        for idx, (rot, flip) in enumerate(data.DIHEDRAL_TRANSFORMS):
            got = data.apply_dihedral(x, idx)[0, 0]
            ref = dihedral_apply_loops(x[0, 0], rot, flip)
            assert np.array_equal(got, ref), idx

    def test_same_transform_on_both_sides(self, rng):
        sdr = rng.random((1, 3, 4, 4), dtype=np.float32)
        patch = augment(PatchPair(sdr.copy(), sdr.copy()), np.random.default_rng(3))
        assert np.array_equal(patch.sdr, patch.hdr)

    def test_commutes_with_aligned_cropping(self, rng):
        # flipping the full image then cropping the mirrored window equals
        # cropping first and flipping the patch
        img = rng.random((1, 3, 10, 10), dtype=np.float32)
        y, x, size = 2, 3, 4
        patch_then_flip = data.apply_dihedral(img[:, :, y:y + size, x:x + size], 4)
        flipped = data.apply_dihedral(img, 4)
        xm = img.shape[3] - x - size
        flip_then_patch = flipped[:, :, y:y + size, xm:xm + size]
        assert np.array_equal(patch_then_flip, flip_then_patch)


class TestMakeLR:
    def test_constant_preserved(self):
        x = np.full((1, 3, 16, 16), 0.25, dtype=np.float32)
        y = make_lr(x, 4)
        assert np.allclose(y, 0.25, atol=1e-6)

    def test_factor_four_dims(self, rng):
        x = rng.random((1, 3, 32, 48), dtype=np.float32)
        assert make_lr(x, 4).shape == (1, 3, 8, 12)

    def test_matches_separable_oracle(self, rng):
        x = rng.random((1, 3, 16, 16), dtype=np.float32)
        assert np.abs(make_lr(x, 4) - bicubic_downsample_direct(x, 4)).max() < 1e-4

    def test_output_in_unit_range(self, rng):
        x = rng.random((1, 3, 16, 16), dtype=np.float32)
        y = make_lr(x, 4)
        assert y.min() >= 0.0 and y.max() <= 1.0


class TestBatcher:
    def make_patches(self, count, rng):
        return [PatchPair(np.full((1, 3, 2, 2), i, dtype=np.float32),
                          np.full((1, 3, 2, 2), i, dtype=np.float32))
                for i in range(count)]

    def test_batch_sizes_with_short_final(self, rng):
        batches = list(batcher(self.make_patches(33, rng), 16, rng))
        assert [b[0].shape[0] for b in batches] == [16, 16, 1]

    def test_epoch_is_exact_partition(self, rng):
        patches = self.make_patches(20, rng)
        seen = []
        for sdr, _ in batcher(patches, 7, rng):
            seen += sdr[:, 0, 0, 0].astype(int).tolist()
        assert sorted(seen) == list(range(20))

    def test_fixed_seed_order(self, rng):
        patches = self.make_patches(10, rng)
        a = [s[:, 0, 0, 0].tolist() for s, _ in
             batcher(patches, 3, np.random.default_rng(9))]
        b = [s[:, 0, 0, 0].tolist() for s, _ in
             batcher(patches, 3, np.random.default_rng(9))]
        assert a == b

    def test_empty_patchset_rejected(self, rng):
        with pytest.raises(ManifestError):
            list(batcher([], 4, rng))


class TestPatchCache:
    def test_round_trip(self, tmp_path, rng):
        patches = [PatchPair(rng.random((1, 3, 4, 4), dtype=np.float32),
                             rng.random((1, 3, 4, 4), dtype=np.float32))
                   for _ in range(3)]
        data.save_patches(patches, tmp_path / "cache")
        loaded = data.load_patches(tmp_path / "cache")
        assert len(loaded) == 3
        for a, b in zip(patches, loaded):
            assert np.array_equal(a.sdr, b.sdr)
            assert np.array_equal(a.hdr, b.hdr)

    def test_empty_cache_rejected(self, tmp_path):
        (tmp_path / "cache").mkdir()
        with pytest.raises(ManifestError):
            data.load_patches(tmp_path / "cache")


class TestPipelineRange:
    def test_all_stages_stay_in_unit_interval(self, tmp_path, rng):
        sdr, hdr = toy_pair(rng, 24)
        write_pair_pngs(sdr, hdr, tmp_path / "s.png", tmp_path / "h.png")
        pair = data.load_image_pair(ImagePair(str(tmp_path / "s.png"),
                                              str(tmp_path / "h.png")))
        for arr in pair:
            assert arr.min() >= 0.0 and arr.max() <= 1.0
        for p in crop_patches(pair, 4, 8, rng, lr_scale=4):
            for arr in (p.sdr, p.hdr):
                assert arr.min() >= 0.0 and arr.max() <= 1.0
            q = augment(p, rng)
            assert q.sdr.min() >= 0.0 and q.hdr.max() <= 1.0
