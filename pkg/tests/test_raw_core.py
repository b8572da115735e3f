import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawvid import raw_core
from rawvid.errors import ConfigurationError, ShapeError, UnsupportedPatternError
from rawvid.raw_core import (
    BayerFrame,
    demosaic_bilinear,
    normalize,
    pack_gbrg,
    unpack_gbrg,
)

from conftest import make_frame


class TestNormalize:
    def test_black_level_maps_to_zero(self):
        f = make_frame()
        f.samples[0, 0] = f.black_level
        assert normalize(f)[0, 0] == 0.0

    def test_white_level_maps_to_one(self):
        f = make_frame()
        f.samples[0, 0] = f.white_level
        assert normalize(f)[0, 0] == 1.0

    def test_midtone_value(self):
        f = make_frame(black=256, white=4095)
        f.samples[0, 0] = 2175
        expected = (2175 - 256) / 3839
        assert normalize(f)[0, 0] == pytest.approx(expected, abs=1e-6)

    def test_degenerate_levels_rejected(self):
        with pytest.raises(ConfigurationError):
            BayerFrame(4, 4, np.zeros((4, 4), np.uint16), black_level=100, white_level=100)

    def test_monotone_in_sample_value(self):
        f = make_frame(black=0, white=1000)
        f.samples = np.arange(32 * 32, dtype=np.uint16).reshape(32, 32) % 1001
        out = normalize(f)
        order = np.argsort(f.samples.ravel())
        assert np.all(np.diff(out.ravel()[order]) >= 0)


class TestPacking:
    def test_single_cell_definition(self):
        mosaic = np.array([[1.0, 2.0], [3.0, 4.0]])  # [[g0, b], [r, g1]]
        packed = pack_gbrg(mosaic)
        assert packed.shape == (1, 1, 4)
        assert tuple(packed[0, 0]) == (1.0, 2.0, 3.0, 4.0)

    def test_full_hd_shape(self):
        mosaic = np.zeros((1080, 1920), np.float32)
        assert pack_gbrg(mosaic).shape == (540, 960, 4)

    def test_unpack_shape(self):
        assert unpack_gbrg(np.zeros((540, 960, 4))).shape == (1080, 1920)

    def test_constant_planes_unpack_constant(self):
        assert np.all(unpack_gbrg(np.full((4, 4, 4), 0.5)) == 0.5)

    def test_odd_dimensions_rejected(self):
        with pytest.raises(ShapeError):
            pack_gbrg(np.zeros((3, 4)))

    def test_non_gbrg_rejected(self):
        with pytest.raises(UnsupportedPatternError):
            pack_gbrg(np.zeros((4, 4)), cfa="RGGB")

    @settings(max_examples=25, deadline=None)
    @given(
        h=st.integers(1, 8).map(lambda v: 2 * v),
        w=st.integers(1, 8).map(lambda v: 2 * v),
        seed=st.integers(0, 1000),
    )
    def test_pack_unpack_roundtrip(self, h, w, seed):
        mosaic = np.random.default_rng(seed).random((h, w))
        assert np.array_equal(unpack_gbrg(pack_gbrg(mosaic)), mosaic)
        packed = np.random.default_rng(seed + 1).random((h // 2, w // 2, 4))
        assert np.array_equal(pack_gbrg(unpack_gbrg(packed)), packed)


class TestDemosaic:
    def test_constant_mosaic_constant_rgb(self):
        rgb = demosaic_bilinear(np.full((8, 8), 0.3)).data
        assert np.allclose(rgb, 0.3, atol=1e-6)

    def test_native_green_passthrough(self):
        mosaic = np.random.default_rng(0).random((8, 8))
        rgb = demosaic_bilinear(mosaic).data
        for r in range(8):
            for c in range(8):
                if (r + c) % 2 == 0:
                    assert rgb[r, c, 1] == pytest.approx(mosaic[r, c], abs=1e-6)

    def test_horizontal_ramp_exact_in_interior(self):
        # Bilinear interpolation reproduces affine signals away from borders.
        ramp = np.tile(np.linspace(0.0, 1.0, 8), (8, 1))
        rgb = demosaic_bilinear(ramp).data
        interior = rgb[2:-2, 2:-2]
        assert np.allclose(interior, ramp[2:-2, 2:-2, None], atol=1e-6)

    def test_space_tag(self):
        assert demosaic_bilinear(np.zeros((4, 4))).space == "cameraRGB"


class TestFrameIO:
    def test_roundtrip(self, tmp_path):
        f = make_frame(seed=3)
        raw_core.save_frame(f, tmp_path / "000000")
        loaded = raw_core.load_frame(tmp_path / "000000")
        assert np.array_equal(loaded.samples, f.samples)
        assert (loaded.black_level, loaded.white_level) == (f.black_level, f.white_level)
        assert loaded.iso == f.iso
        assert loaded.cfa == f.cfa

    def test_clip_roundtrip_ordering(self, tmp_path):
        frames = [make_frame(seed=i) for i in range(3)]
        raw_core.save_clip(frames, tmp_path / "clip")
        loaded = raw_core.load_clip(tmp_path / "clip")
        assert len(loaded) == 3
        for a, b in zip(frames, loaded):
            assert np.array_equal(a.samples, b.samples)
