"""Modified ISP: white balance, CCT-interpolated CCM, ProPhoto ACES tonemap, sRGB.

Stage order for :func:`render`:

    normalize -> (optional noise) -> white balance -> demosaic
    -> CCT estimate -> interpolated CCM -> XYZ -> ProPhoto
    -> tonemap -> sRGB linear -> gamma -> 8-bit quantize

The color-temperature module and the tonemapper can each be toggled off for
ablation: off means a fixed mired-midpoint matrix and a plain clamp.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raw_core
from .errors import (
    ConfigurationError,
    DomainError,
    ParameterError,
    SpaceMismatchError,
)
from .noise import CHANNELS, NoiseParams, SeedSpec, sample_noisy
from .raw_core import BayerFrame, RgbImage

CCT_MIN_K = 1667.0
CCT_MAX_K = 25000.0

# XYZ (D50) <-> ProPhoto RGB, published reference primaries.
XYZ_TO_PROPHOTO = np.array(
    [
        [1.3459433, -0.2556075, -0.0511118],
        [-0.5445989, 1.5081673, 0.0205351],
        [0.0000000, 0.0000000, 1.2118128],
    ]
)
PROPHOTO_TO_XYZ = np.array(
    [
        [0.7976749, 0.1351917, 0.0313534],
        [0.2880402, 0.7118741, 0.0000857],
        [0.0000000, 0.0000000, 0.8252100],
    ]
)

# XYZ (D65) -> linear sRGB.
XYZ_TO_SRGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)

# Bradford chromatic adaptation, D50 -> D65.
BRADFORD_D50_TO_D65 = np.array(
    [
        [0.9555766, -0.0230393, 0.0631636],
        [-0.0282895, 1.0099416, 0.0210077],
        [0.0122982, -0.0204830, 1.3299098],
    ]
)

PROPHOTO_TO_SRGB_LINEAR = XYZ_TO_SRGB @ BRADFORD_D50_TO_D65 @ PROPHOTO_TO_XYZ

D50_WHITE_XYZ = np.array([0.96422, 1.0, 0.82521])

TONEMAP_MODES = ("aces_fit", "reinhard", "none")


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ConfigurationError(f"color matrix must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ConfigurationError("color matrix has non-finite entries")
    if abs(np.linalg.det(m)) <= 1e-6:
        raise ConfigurationError("color matrix is numerically singular")
    return m


def _default_ccms() -> tuple[np.ndarray, np.ndarray, float, float]:
    path = Path(__file__).parent / "data" / "ccm.json"
    doc = json.loads(path.read_text())
    return (
        _as_matrix(doc["ccm_low"]),
        _as_matrix(doc["ccm_high"]),
        float(doc["t_low"]),
        float(doc["t_high"]),
    )


@dataclass
class IspConfig:
    """Rendering configuration: WB gains, dual CCMs, tonemap, stage toggles."""

    wb_gains: tuple[float, float, float] | None = None  # (R, G, B); None = auto
    ccm_low: np.ndarray | None = None  # camera -> XYZ at t_low kelvin
    ccm_high: np.ndarray | None = None  # camera -> XYZ at t_high kelvin
    t_low: float = 2856.0
    t_high: float = 6504.0
    tonemap: str = "aces_fit"
    color_temp_module: bool = True
    tonemap_enabled: bool = True

    def __post_init__(self):
        if self.ccm_low is None or self.ccm_high is None:
            low, high, t_low, t_high = _default_ccms()
            if self.ccm_low is None:
                self.ccm_low, self.t_low = low, t_low
            if self.ccm_high is None:
                self.ccm_high, self.t_high = high, t_high
        self.ccm_low = _as_matrix(self.ccm_low)
        self.ccm_high = _as_matrix(self.ccm_high)
        if not self.t_low < self.t_high:
            raise ConfigurationError("t_low must be < t_high")
        if self.tonemap not in TONEMAP_MODES:
            raise ConfigurationError(f"unknown tonemap {self.tonemap!r}")
        if self.wb_gains is not None:
            gains = tuple(float(g) for g in self.wb_gains)
            if any(g <= 0 for g in gains):
                raise ParameterError("white-balance gains must be positive")
            self.wb_gains = gains

    def to_dict(self) -> dict:
        return {
            "wb_gains": list(self.wb_gains) if self.wb_gains else None,
            "ccm_low": np.asarray(self.ccm_low).tolist(),
            "ccm_high": np.asarray(self.ccm_high).tolist(),
            "t_low": self.t_low,
            "t_high": self.t_high,
            "tonemap": self.tonemap,
            "color_temp_module": self.color_temp_module,
            "tonemap_enabled": self.tonemap_enabled,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "IspConfig":
        return cls(
            wb_gains=tuple(doc["wb_gains"]) if doc.get("wb_gains") else None,
            ccm_low=np.asarray(doc["ccm_low"]) if doc.get("ccm_low") is not None else None,
            ccm_high=np.asarray(doc["ccm_high"]) if doc.get("ccm_high") is not None else None,
            t_low=doc.get("t_low", 2856.0),
            t_high=doc.get("t_high", 6504.0),
            tonemap=doc.get("tonemap", "aces_fit"),
            color_temp_module=doc.get("color_temp_module", True),
            tonemap_enabled=doc.get("tonemap_enabled", True),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "IspConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        """Stable hash of the full configuration, for manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def auto_white_balance(img: RgbImage) -> tuple[tuple[float, float, float], np.ndarray]:
    """Gray-world gains and the per-channel-mean neutral estimate."""
    if img.space != "cameraRGB":
        raise SpaceMismatchError(f"expected cameraRGB, got {img.space!r}")
    means = img.data.reshape(-1, 3).mean(axis=0).astype(np.float64)
    if np.any(means <= 0):
        raise DomainError("degenerate image: non-positive channel mean")
    gains = tuple(float(means[1] / m) for m in means)
    return gains, means


def xyz_to_xy(xyz: np.ndarray) -> tuple[float, float]:
    xyz = np.asarray(xyz, dtype=np.float64)
    total = xyz.sum()
    if xyz[1] <= 0 or total <= 0:
        raise DomainError("neutral estimate must have positive luminance")
    return float(xyz[0] / total), float(xyz[1] / total)


def estimate_cct(neutral_xyz: np.ndarray) -> float:
    """Correlated color temperature via the McCamy xy approximation, in kelvin."""
    x, y = xyz_to_xy(neutral_xyz)
    denom = 0.1858 - y
    if abs(denom) < 1e-9:
        raise DomainError("chromaticity outside the CCT approximation domain")
    n = (x - 0.3320) / denom
    cct = 449.0 * n**3 + 3525.0 * n**2 + 6823.3 * n + 5520.33
    if not np.isfinite(cct) or cct <= 0:
        raise DomainError("chromaticity outside the CCT approximation domain")
    return float(np.clip(cct, CCT_MIN_K, CCT_MAX_K))


def interpolate_ccm(cfg: IspConfig, cct: float) -> np.ndarray:
    """Blend the two factory matrices linearly in reciprocal temperature."""
    inv_low, inv_high = 1.0 / cfg.t_low, 1.0 / cfg.t_high
    w = (1.0 / cct - inv_high) / (inv_low - inv_high)
    w = float(np.clip(w, 0.0, 1.0))
    return w * cfg.ccm_low + (1.0 - w) * cfg.ccm_high


def midpoint_ccm(cfg: IspConfig) -> np.ndarray:
    """Matrix at the mired midpoint; the fixed choice when CCT is disabled."""
    mid_cct = 2.0 / (1.0 / cfg.t_low + 1.0 / cfg.t_high)
    return interpolate_ccm(cfg, mid_cct)


def _apply_matrix(img: RgbImage, matrix: np.ndarray, src: str, dst: str) -> RgbImage:
    if img.space != src:
        raise SpaceMismatchError(f"expected {src!r}, got {img.space!r}")
    out = img.data.astype(np.float64) @ np.asarray(matrix).T
    return RgbImage(out.astype(np.float32), space=dst)


def camera_to_xyz(img: RgbImage, ccm: np.ndarray) -> RgbImage:
    return _apply_matrix(img, ccm, "cameraRGB", "XYZ")


def xyz_to_prophoto(img: RgbImage) -> RgbImage:
    return _apply_matrix(img, XYZ_TO_PROPHOTO, "XYZ", "ProPhoto")


def prophoto_to_xyz(img: RgbImage) -> RgbImage:
    return _apply_matrix(img, PROPHOTO_TO_XYZ, "ProPhoto", "XYZ")


def prophoto_to_srgb_linear(img: RgbImage) -> RgbImage:
    """ProPhoto (D50) to linear sRGB (D65) with Bradford adaptation."""
    return _apply_matrix(img, PROPHOTO_TO_SRGB_LINEAR, "ProPhoto", "sRGB-linear")


def aces_fit(x: np.ndarray) -> np.ndarray:
    """Rational filmic tone curve, clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    out = x * (2.51 * x + 0.03) / (x * (2.43 * x + 0.59) + 0.14)
    return np.clip(out, 0.0, 1.0)


def reinhard(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x / (1.0 + x), 0.0, 1.0)


def tonemap(img: RgbImage, mode: str = "aces_fit", clamp_negative: bool = False) -> RgbImage:
    """Per-channel tone compression in ProPhoto space."""
    if img.space != "ProPhoto":
        raise SpaceMismatchError(f"expected ProPhoto, got {img.space!r}")
    data = img.data.astype(np.float64)
    if data.size and data.min() < 0:
        if not clamp_negative:
            raise DomainError("tonemap input must be non-negative (or pass clamp_negative)")
        data = np.clip(data, 0.0, None)
    if mode == "aces_fit":
        out = aces_fit(data)
    elif mode == "reinhard":
        out = reinhard(data)
    elif mode == "none":
        out = np.clip(data, 0.0, 1.0)
    else:
        raise ConfigurationError(f"unknown tonemap {mode!r}")
    return RgbImage(out.astype(np.float32), space="ProPhoto")


def srgb_gamma_encode(img: RgbImage) -> RgbImage:
    """Standard sRGB transfer function on linear values in [0, 1]."""
    if img.space != "sRGB-linear":
        raise SpaceMismatchError(f"expected sRGB-linear, got {img.space!r}")
    x = np.clip(img.data.astype(np.float64), 0.0, 1.0)
    low = x <= 0.0031308
    out = np.where(low, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4, where=~low, out=np.ones_like(x)) - 0.055)
    return RgbImage(out.astype(np.float32), space="sRGB-encoded")


def quantize_8bit(img: RgbImage) -> np.ndarray:
    """Round-half-away-from-zero quantization of an encoded image to uint8."""
    if img.space != "sRGB-encoded":
        raise SpaceMismatchError(f"expected sRGB-encoded, got {img.space!r}")
    x = np.clip(img.data.astype(np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def _mosaic_channel_means(mosaic: np.ndarray, cfa: str) -> dict[str, float]:
    masks = raw_core.cfa_masks(mosaic.shape, cfa)
    return {ch: float(mosaic[mask].mean()) for ch, mask in masks.items()}


def _apply_wb_to_mosaic(mosaic: np.ndarray, gains: tuple[float, float, float], cfa: str) -> np.ndarray:
    masks = raw_core.cfa_masks(mosaic.shape, cfa)
    out = mosaic.astype(np.float64, copy=True)
    for gain, ch in zip(gains, CHANNELS):
        out[masks[ch]] *= gain
    return np.clip(out, 0.0, 1.0)


def resolve_wb(cfg: IspConfig, mosaic: np.ndarray, cfa: str) -> tuple[tuple[float, float, float], np.ndarray]:
    """Concrete WB gains and the neutral cameraRGB estimate for a mosaic."""
    means = _mosaic_channel_means(mosaic, cfa)
    neutral = np.array([means["R"], means["G"], means["B"]], dtype=np.float64)
    if cfg.wb_gains is not None:
        return cfg.wb_gains, neutral
    if np.any(neutral <= 0):
        raise DomainError("degenerate mosaic: non-positive channel mean")
    gains = tuple(float(means["G"] / neutral[i]) for i in range(3))
    return gains, neutral


def render(
    frame: BayerFrame,
    noise: NoiseParams | None,
    cfg: IspConfig,
    seed: SeedSpec | None = None,
) -> np.ndarray:
    """Full RAW-to-sRGB render; returns an (h, w, 3) uint8 image."""
    mosaic = raw_core.normalize(frame)

    if noise is not None:
        if seed is None:
            raise ConfigurationError("noise injection requires a SeedSpec")
        packed = raw_core.pack_gbrg(mosaic, frame.cfa)
        noisy_planes = []
        for plane_idx, ch in enumerate(raw_core.PACKED_PLANE_CHANNELS):
            plane_seed = SeedSpec(seed.seed, seed.clip_id, seed.frame, plane_idx)
            noisy_planes.append(sample_noisy(packed[..., plane_idx], noise, ch, plane_seed))
        mosaic = raw_core.unpack_gbrg(np.stack(noisy_planes, axis=-1))

    gains, neutral = resolve_wb(cfg, mosaic, frame.cfa)
    mosaic = _apply_wb_to_mosaic(mosaic, gains, frame.cfa)

    if cfg.color_temp_module:
        neutral_xyz = midpoint_ccm(cfg) @ (neutral * np.asarray(gains))
        cct = estimate_cct(neutral_xyz)
        ccm = interpolate_ccm(cfg, cct)
    else:
        ccm = midpoint_ccm(cfg)

    rgb = raw_core.demosaic_bilinear(mosaic, frame.cfa)
    xyz = camera_to_xyz(rgb, ccm)
    prophoto = xyz_to_prophoto(xyz)
    mode = cfg.tonemap if cfg.tonemap_enabled else "none"
    toned = tonemap(prophoto, mode, clamp_negative=True)
    linear = prophoto_to_srgb_linear(RgbImage(toned.data, space="ProPhoto"))
    linear.data = np.clip(linear.data, 0.0, 1.0)
    encoded = srgb_gamma_encode(linear)
    return quantize_8bit(encoded)
