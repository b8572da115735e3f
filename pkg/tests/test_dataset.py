import hashlib
from pathlib import Path

import numpy as np
import pytest

from rawvid import dataset, raw_core
from rawvid.dataset import (
    NOISE_PRESETS,
    SplitManifest,
    add_noise_to_frame,
    build_dataset,
    build_pair,
    extract_patches,
    preset_iso,
    regenerate_pair,
    select_training_clips,
    split_dataset,
    write_clip_pair,
)
from rawvid.errors import ConfigurationError, DomainError
from rawvid.isp import IspConfig
from rawvid.noise import CalibrationTable, NoiseParams, SeedSpec, default_table

from conftest import make_frame


def make_clip(n=3, h=32, w=32, seed=0):
    return [make_frame(h, w, seed=seed * 100 + i) for i in range(n)]


def tree_digest(root: Path) -> dict[str, str]:
    """Relative path -> sha256 for every file under root."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture
def table():
    return CalibrationTable(
        [
            NoiseParams.shared(100, 0.002, 0.01),
            NoiseParams.shared(25600, 0.03, 0.12),
        ]
    )


class TestPresets:
    def test_levels(self):
        assert preset_iso("heavy") == 20000.0
        assert preset_iso("medium") == 8000.0
        assert preset_iso("light") == 2500.0

    def test_case_insensitive(self):
        assert preset_iso("Heavy") == NOISE_PRESETS["heavy"]

    def test_unknown_rejected(self):
        with pytest.raises(ConfigurationError):
            preset_iso("extreme")


class TestAddNoise:
    def test_preserves_geometry_and_levels(self, frame):
        p = NoiseParams.shared(800, 0.01, 0.05)
        noisy = add_noise_to_frame(frame, p, SeedSpec(1, "c", 0))
        assert (noisy.width, noisy.height) == (frame.width, frame.height)
        assert (noisy.black_level, noisy.white_level) == (frame.black_level, frame.white_level)
        assert noisy.iso == 800
        assert noisy.samples.dtype == np.uint16

    def test_deterministic(self, frame):
        p = NoiseParams.shared(800, 0.01, 0.05)
        a = add_noise_to_frame(frame, p, SeedSpec(1, "c", 0))
        b = add_noise_to_frame(frame, p, SeedSpec(1, "c", 0))
        assert np.array_equal(a.samples, b.samples)

    def test_frame_index_changes_noise(self, frame):
        p = NoiseParams.shared(800, 0.01, 0.05)
        a = add_noise_to_frame(frame, p, SeedSpec(1, "c", 0))
        b = add_noise_to_frame(frame, p, SeedSpec(1, "c", 1))
        assert not np.array_equal(a.samples, b.samples)


class TestBuildPair:
    def test_structure(self, table):
        clip = make_clip()
        pair = build_pair(clip, "medium", IspConfig(), table, seed=7, clip_id="c0")
        assert len(pair.noisy_raw) == len(clip)
        assert pair.clean_srgb[0].shape == (32, 32, 3)
        assert pair.clean_srgb[0].dtype == np.uint8
        assert pair.manifest["iso"] == 8000.0
        assert pair.manifest["preset"] == "medium"
        assert pair.manifest["n_frames"] == 3

    def test_wb_frozen_across_streams(self, table):
        pair = build_pair(make_clip(), 800.0, IspConfig(), table, seed=7)
        assert pair.manifest["isp_config"]["wb_gains"] is not None

    def test_noisy_differs_from_clean(self, table):
        pair = build_pair(make_clip(), "heavy", IspConfig(), table, seed=7)
        assert not np.array_equal(pair.noisy_raw[0].samples, pair.clean_raw[0].samples)
        assert not np.array_equal(pair.noisy_srgb[0], pair.clean_srgb[0])

    def test_out_of_range_iso_warns(self, table):
        with pytest.warns(UserWarning, match="outside calibration range"):
            build_pair(make_clip(), 10.0, IspConfig(), table, seed=7)

    def test_empty_clip_rejected(self, table):
        with pytest.raises(DomainError):
            build_pair([], "light", IspConfig(), table, seed=0)

    def test_regenerate_bit_exact(self, table):
        clip = make_clip()
        pair = build_pair(clip, "light", IspConfig(), table, seed=3, clip_id="cX")
        again = regenerate_pair(clip, pair.manifest)
        for a, b in zip(pair.noisy_raw, again.noisy_raw):
            assert np.array_equal(a.samples, b.samples)
        for a, b in zip(pair.noisy_srgb, again.noisy_srgb):
            assert np.array_equal(a, b)


class TestPatches:
    def test_shapes_and_alignment(self, table):
        pair = build_pair(make_clip(h=64, w=64), "light", IspConfig(), table, seed=1)
        patches = extract_patches(pair, size=16, count=8, seed=5)
        assert len(patches) == 8
        for p in patches:
            assert p.clean_raw.shape == (8, 8, 4)
            assert p.noisy_srgb.shape == (16, 16, 3)
            assert p.mosaic_origin[0] % 2 == 0 and p.mosaic_origin[1] % 2 == 0
            fy, fx = p.mosaic_origin
            # packed patch content matches the full frame at the recorded origin
            full = raw_core.pack_gbrg(raw_core.normalize(pair.clean_raw[p.frame_index]))
            py, px = p.packed_origin
            assert np.array_equal(p.clean_raw, full[py : py + 8, px : px + 8])

    def test_deterministic(self, table):
        pair = build_pair(make_clip(h=64, w=64), "light", IspConfig(), table, seed=1)
        a = extract_patches(pair, size=16, count=4, seed=5)
        b = extract_patches(pair, size=16, count=4, seed=5)
        for pa, pb in zip(a, b):
            assert pa.packed_origin == pb.packed_origin
            assert np.array_equal(pa.noisy_raw, pb.noisy_raw)

    def test_augmentation_changes_content(self, table):
        pair = build_pair(make_clip(h=64, w=64), "light", IspConfig(), table, seed=1)
        plain = extract_patches(pair, size=16, count=16, seed=5, augment=False)
        flipped = extract_patches(pair, size=16, count=16, seed=5, augment=True)
        diffs = sum(
            not np.array_equal(a.clean_srgb, b.clean_srgb) for a, b in zip(plain, flipped)
        )
        assert diffs > 0

    def test_odd_size_rejected(self, table):
        pair = build_pair(make_clip(), "light", IspConfig(), table, seed=1)
        with pytest.raises(DomainError):
            extract_patches(pair, size=15, count=1)

    def test_oversized_patch_rejected(self, table):
        pair = build_pair(make_clip(), "light", IspConfig(), table, seed=1)
        with pytest.raises(DomainError):
            extract_patches(pair, size=128, count=1)


class TestSplit:
    def test_ninety_ten_on_200(self):
        ids = [f"clip{i:03d}" for i in range(200)]
        split = split_dataset(ids, ratio=0.9, seed=0)
        assert len(split.train) == 180
        assert len(split.test) == 20
        assert sorted(split.train + split.test) == ids

    def test_deterministic(self):
        ids = [f"c{i}" for i in range(20)]
        a = split_dataset(ids, seed=4)
        b = split_dataset(ids, seed=4)
        assert a.train == b.train and a.test == b.test

    def test_seed_changes_assignment(self):
        ids = [f"c{i}" for i in range(50)]
        assert split_dataset(ids, seed=1).train != split_dataset(ids, seed=2).train

    def test_text_roundtrip(self):
        split = split_dataset([f"c{i}" for i in range(10)], ratio=0.8, seed=0)
        again = SplitManifest.from_text(split.to_text())
        assert again.train == split.train
        assert again.test == split.test
        assert again.ratio == 0.8

    def test_overlap_rejected(self):
        with pytest.raises(ConfigurationError):
            SplitManifest(["a", "b"], ["b"], 0.5)

    def test_too_few_clips_rejected(self):
        with pytest.raises(DomainError):
            split_dataset(["only"], 0.9)


class TestSelectTrainingClips:
    def test_disjoint_and_in_range(self):
        windows = select_training_clips(500, 10, clip_len=25, seed=3)
        assert len(windows) == 10
        prev_end = 0
        for start, end in windows:
            assert end - start == 25
            assert start >= prev_end
            prev_end = end
        assert prev_end <= 500

    def test_deterministic(self):
        assert select_training_clips(300, 5, seed=9) == select_training_clips(300, 5, seed=9)

    def test_overfull_request_warns_and_truncates(self):
        with pytest.warns(UserWarning):
            windows = select_training_clips(60, 5, clip_len=25, seed=0)
        assert len(windows) == 2

    def test_short_video_rejected(self):
        with pytest.raises(DomainError):
            select_training_clips(10, 1, clip_len=25)


class TestBuildDataset:
    def write_toy_input(self, root: Path, n_clips=3, n_frames=2):
        for c in range(n_clips):
            raw_core.save_clip(make_clip(n_frames, seed=c), root / f"clip{c:02d}")

    def test_tree_layout(self, tmp_path, table):
        self.write_toy_input(tmp_path / "in")
        build_dataset(tmp_path / "in", tmp_path / "out", "light", IspConfig(), table, seed=1)
        for c in range(3):
            clip = tmp_path / "out" / f"clip{c:02d}"
            assert (clip / "clean_raw" / "000000.raw16").exists()
            assert (clip / "noisy_raw" / "000001.raw16").exists()
            assert (clip / "clean_srgb" / "000000.png").exists()
            assert (clip / "noisy_srgb" / "000001.png").exists()
            assert (clip / "manifest.json").exists()
        assert (tmp_path / "out" / "split.txt").exists()

    def test_byte_identical_rebuild(self, tmp_path, table):
        self.write_toy_input(tmp_path / "in")
        build_dataset(
            tmp_path / "in", tmp_path / "a", "medium", IspConfig(), table, seed=2,
            patches_per_clip=4, patch_size=16,
        )
        build_dataset(
            tmp_path / "in", tmp_path / "b", "medium", IspConfig(), table, seed=2,
            patches_per_clip=4, patch_size=16,
        )
        da, db = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
        assert da == db
        assert len(da) > 0

    def test_seed_changes_noise_but_not_clean(self, tmp_path, table):
        self.write_toy_input(tmp_path / "in", n_clips=2)
        build_dataset(tmp_path / "in", tmp_path / "a", "light", IspConfig(), table, seed=1)
        build_dataset(tmp_path / "in", tmp_path / "b", "light", IspConfig(), table, seed=2)
        da, db = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
        assert da["clip00/clean_raw/000000.raw16"] == db["clip00/clean_raw/000000.raw16"]
        assert da["clip00/noisy_raw/000000.raw16"] != db["clip00/noisy_raw/000000.raw16"]

    def test_roundtrip_via_saved_manifest(self, tmp_path, table):
        self.write_toy_input(tmp_path / "in", n_clips=2)
        pairs = build_dataset(tmp_path / "in", tmp_path / "out", "light", IspConfig(), table, seed=5)
        import json

        saved = json.loads((tmp_path / "out" / "clip00" / "manifest.json").read_text())
        clip = raw_core.load_clip(tmp_path / "in" / "clip00")
        again = regenerate_pair(clip, saved)
        for a, b in zip(pairs[0].noisy_raw, again.noisy_raw):
            assert np.array_equal(a.samples, b.samples)

    def test_empty_input_rejected(self, tmp_path, table):
        (tmp_path / "in").mkdir()
        with pytest.raises(DomainError):
            build_dataset(tmp_path / "in", tmp_path / "out", "light", IspConfig(), table, seed=0)

    def test_default_table_accepts_presets(self, tmp_path):
        self.write_toy_input(tmp_path / "in", n_clips=2, n_frames=1)
        pairs = build_dataset(
            tmp_path / "in", tmp_path / "out", "heavy", IspConfig(), default_table(), seed=0
        )
        assert pairs[0].manifest["iso"] == 20000.0
