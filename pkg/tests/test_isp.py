import numpy as np
import pytest

from rawvid import isp, raw_core
from rawvid.errors import ConfigurationError, DomainError, SpaceMismatchError
from rawvid.isp import (
    IspConfig,
    aces_fit,
    auto_white_balance,
    camera_to_xyz,
    estimate_cct,
    interpolate_ccm,
    midpoint_ccm,
    prophoto_to_srgb_linear,
    prophoto_to_xyz,
    quantize_8bit,
    render,
    srgb_gamma_encode,
    tonemap,
    xyz_to_prophoto,
)
from rawvid.noise import NoiseParams, SeedSpec
from rawvid.raw_core import RgbImage

from conftest import make_frame


def xy_to_xyz(x, y):
    return np.array([x / y, 1.0, (1 - x - y) / y])


class TestWhiteBalance:
    def test_gray_image_unit_gains(self):
        img = RgbImage(np.full((8, 8, 3), 0.4), "cameraRGB")
        gains, neutral = auto_white_balance(img)
        assert gains == pytest.approx((1.0, 1.0, 1.0))
        assert neutral == pytest.approx([0.4, 0.4, 0.4])

    def test_gains_from_channel_means(self):
        data = np.zeros((4, 4, 3), np.float32)
        data[..., 0], data[..., 1], data[..., 2] = 0.2, 0.4, 0.1
        gains, _ = auto_white_balance(RgbImage(data, "cameraRGB"))
        assert gains == pytest.approx((2.0, 1.0, 4.0))

    def test_degenerate_image_rejected(self):
        with pytest.raises(DomainError):
            auto_white_balance(RgbImage(np.zeros((4, 4, 3)), "cameraRGB"))

    def test_wrong_space_rejected(self):
        with pytest.raises(SpaceMismatchError):
            auto_white_balance(RgbImage(np.ones((4, 4, 3)), "XYZ"))


class TestCct:
    def test_d65(self):
        assert estimate_cct(xy_to_xyz(0.3127, 0.3290)) == pytest.approx(6504, abs=50)

    def test_illuminant_a(self):
        assert estimate_cct(xy_to_xyz(0.4476, 0.4074)) == pytest.approx(2856, abs=60)

    def test_deterministic(self):
        xyz = xy_to_xyz(0.33, 0.34)
        assert estimate_cct(xyz) == estimate_cct(xyz)

    def test_clamped_to_validity_range(self):
        cct = estimate_cct(xy_to_xyz(0.25, 0.26))
        assert isp.CCT_MIN_K <= cct <= isp.CCT_MAX_K

    def test_non_positive_luminance_rejected(self):
        with pytest.raises(DomainError):
            estimate_cct(np.array([0.5, 0.0, 0.5]))


class TestCcmInterpolation:
    def test_endpoints_exact(self):
        cfg = IspConfig()
        assert np.array_equal(interpolate_ccm(cfg, cfg.t_low), cfg.ccm_low)
        assert np.array_equal(interpolate_ccm(cfg, cfg.t_high), cfg.ccm_high)

    def test_mired_midpoint_is_elementwise_mean(self):
        cfg = IspConfig()
        mid_cct = 2.0 / (1.0 / cfg.t_low + 1.0 / cfg.t_high)
        got = interpolate_ccm(cfg, mid_cct)
        assert np.allclose(got, (cfg.ccm_low + cfg.ccm_high) / 2, atol=1e-12)
        assert np.allclose(midpoint_ccm(cfg), got)

    def test_convex_combination(self):
        cfg = IspConfig()
        for cct in (2000.0, 3500.0, 5000.0, 9000.0, 30000.0):
            m = interpolate_ccm(cfg, cct)
            lo = np.minimum(cfg.ccm_low, cfg.ccm_high)
            hi = np.maximum(cfg.ccm_low, cfg.ccm_high)
            assert np.all(m >= lo - 1e-12) and np.all(m <= hi + 1e-12)


class TestColorSpaces:
    def test_prophoto_roundtrip(self):
        img = RgbImage(np.random.default_rng(0).random((4, 4, 3)).astype(np.float32), "XYZ")
        back = prophoto_to_xyz(xyz_to_prophoto(img))
        assert np.allclose(back.data, img.data, atol=1e-5)
        assert back.space == "XYZ"

    def test_d50_white_maps_to_unit_prophoto(self):
        img = RgbImage(np.tile(isp.D50_WHITE_XYZ, (2, 2, 1)).astype(np.float32), "XYZ")
        out = xyz_to_prophoto(img)
        assert np.allclose(out.data, 1.0, atol=1e-3)

    def test_black_stays_black_through_all_matrices(self):
        black = RgbImage(np.zeros((2, 2, 3), np.float32), "cameraRGB")
        cfg = IspConfig()
        out = prophoto_to_srgb_linear(xyz_to_prophoto(camera_to_xyz(black, cfg.ccm_high)))
        assert np.allclose(out.data, 0.0)
        assert out.space == "sRGB-linear"

    def test_wrong_source_tag_rejected(self):
        with pytest.raises(SpaceMismatchError):
            xyz_to_prophoto(RgbImage(np.ones((2, 2, 3)), "cameraRGB"))


class TestTonemap:
    def test_zero_maps_to_zero(self):
        assert aces_fit(np.array(0.0)) == 0.0

    def test_unit_value(self):
        assert aces_fit(np.array(1.0)) == pytest.approx(2.54 / 3.16, abs=1e-6)

    def test_monotone_over_grid(self):
        grid = np.linspace(0.0, 20.0, 10**4)
        out = aces_fit(grid)
        assert np.all(np.diff(out) >= 0)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_reinhard_option(self):
        img = RgbImage(np.full((2, 2, 3), 1.0, np.float32), "ProPhoto")
        assert np.allclose(tonemap(img, "reinhard").data, 0.5)

    def test_none_clamps_only(self):
        img = RgbImage(np.full((2, 2, 3), 3.0, np.float32), "ProPhoto")
        assert np.allclose(tonemap(img, "none").data, 1.0)

    def test_negative_input_rejected_unless_flagged(self):
        img = RgbImage(np.full((2, 2, 3), -0.1, np.float32), "ProPhoto")
        with pytest.raises(DomainError):
            tonemap(img)
        assert np.allclose(tonemap(img, clamp_negative=True).data, 0.0)


class TestGamma:
    def test_endpoints(self):
        img = RgbImage(np.array([[[0.0, 1.0, 0.5]]], np.float32), "sRGB-linear")
        out = srgb_gamma_encode(img).data[0, 0]
        assert out[0] == 0.0
        assert out[1] == pytest.approx(1.0, abs=1e-6)

    def test_branch_continuity(self):
        x = 0.0031308
        linear_branch = 12.92 * x
        power_branch = 1.055 * x ** (1 / 2.4) - 0.055
        assert linear_branch == pytest.approx(power_branch, abs=1e-5)
        img = RgbImage(np.full((1, 1, 3), x, np.float32), "sRGB-linear")
        assert srgb_gamma_encode(img).data[0, 0, 0] == pytest.approx(linear_branch, abs=1e-5)

    def test_midgray(self):
        img = RgbImage(np.full((1, 1, 3), 0.18, np.float32), "sRGB-linear")
        expected = 1.055 * 0.18 ** (1 / 2.4) - 0.055
        assert srgb_gamma_encode(img).data[0, 0, 0] == pytest.approx(expected, abs=1e-5)


class TestRender:
    def test_deterministic_without_noise(self, frame):
        cfg = IspConfig()
        a = render(frame, None, cfg)
        b = render(frame, None, cfg)
        assert np.array_equal(a, b)
        assert a.dtype == np.uint8

    def test_noise_determinism_with_seed(self, frame):
        cfg = IspConfig()
        params = NoiseParams.shared(800, 0.01, 0.05)
        a = render(frame, params, cfg, SeedSpec(3, "c", 0))
        b = render(frame, params, cfg, SeedSpec(3, "c", 0))
        assert np.array_equal(a, b)

    def test_zero_noise_params_match_clean(self, frame):
        cfg = IspConfig()
        clean = render(frame, None, cfg)
        degenerate = render(frame, NoiseParams.shared(800, 0.0, 0.0), cfg, SeedSpec(0))
        assert np.array_equal(clean, degenerate)

    def test_gray_ramp_monotone(self):
        # Composition of monotone stages keeps a gray ramp ordered per channel.
        h, w = 16, 64
        ramp = np.tile(np.linspace(500, 3500, w), (h, 1)).astype(np.uint16)
        frame = raw_core.BayerFrame(w, h, ramp, black_level=256, white_level=4095)
        cfg = IspConfig(wb_gains=(1.0, 1.0, 1.0))
        img = render(frame, None, cfg).astype(int)
        mid = img[h // 2, 4:-4]
        assert np.all(np.diff(mid, axis=0) >= 0)

    def test_stage_toggles_change_output(self, frame):
        base = render(frame, None, IspConfig())
        no_ct = render(frame, None, IspConfig(color_temp_module=False))
        no_tm = render(frame, None, IspConfig(tonemap_enabled=False))
        assert not np.array_equal(base, no_ct)
        assert not np.array_equal(base, no_tm)

    def test_requires_seed_with_noise(self, frame):
        with pytest.raises(ConfigurationError):
            render(frame, NoiseParams.shared(800, 0.01, 0.05), IspConfig())


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = IspConfig(wb_gains=(1.5, 1.0, 2.0), tonemap="reinhard")
        cfg.save(tmp_path / "isp.json")
        again = IspConfig.load(tmp_path / "isp.json")
        assert again.wb_gains == cfg.wb_gains
        assert again.tonemap == "reinhard"
        assert again.digest() == cfg.digest()

    def test_invalid_tonemap_rejected(self):
        with pytest.raises(ConfigurationError):
            IspConfig(tonemap="filmic")

    def test_singular_matrix_rejected(self):
        with pytest.raises(ConfigurationError):
            IspConfig(ccm_low=np.zeros((3, 3)))

    def test_quantize_rounds_half_up(self):
        img = RgbImage(np.array([[[0.5 / 255, 1.5 / 255, 0.4 / 255]]], np.float32), "sRGB-encoded")
        assert list(quantize_8bit(img)[0, 0]) == [1, 2, 0]
