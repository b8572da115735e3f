"""Bayer RAW frame representation, normalization, GBRG packing, and demosaicing.

A mosaic is a single-channel CFA image. Only the GBRG layout is first class:

    row 0:  G B G B ...
    row 1:  R G R G ...

Packing maps each 2x2 cell to one pixel of four planes in (G, B, R, G) order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ShapeError, UnsupportedPatternError

GBRG = "GBRG"

#: Channel of each packed plane, in plane order.
PACKED_PLANE_CHANNELS = ("G", "B", "R", "G")


@dataclass
class BayerFrame:
    """Single CFA mosaic frame with sensor metadata."""

    width: int
    height: int
    samples: np.ndarray  # uint16, shape (height, width), row major
    cfa: str = GBRG
    black_level: int = 0
    white_level: int = 65535
    iso: float = 100.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.uint16)
        if self.samples.shape != (self.height, self.width):
            raise ShapeError(
                f"samples shape {self.samples.shape} != ({self.height}, {self.width})"
            )
        if self.width % 2 or self.height % 2:
            raise ShapeError("Bayer frames require even width and height")
        if self.black_level >= self.white_level:
            raise ConfigurationError(
                f"black_level {self.black_level} must be < white_level {self.white_level}"
            )


@dataclass
class RgbImage:
    """Three-plane float image tagged with its color space."""

    data: np.ndarray  # float32, shape (h, w, 3)
    space: str  # cameraRGB | XYZ | ProPhoto | sRGB-linear | sRGB-encoded

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ShapeError(f"RGB image must be (h, w, 3), got {self.data.shape}")


def normalize(frame: BayerFrame) -> np.ndarray:
    """Map raw counts to floats in [0, 1] using the frame's black/white levels."""
    if frame.black_level >= frame.white_level:
        raise ConfigurationError("degenerate black/white levels")
    span = float(frame.white_level - frame.black_level)
    out = (frame.samples.astype(np.float32) - frame.black_level) / span
    return np.clip(out, 0.0, 1.0)


def denormalize(mosaic: np.ndarray, black_level: int, white_level: int) -> np.ndarray:
    """Inverse of :func:`normalize`: floats in [0,1] back to uint16 counts."""
    span = float(white_level - black_level)
    counts = np.clip(mosaic, 0.0, 1.0) * span + black_level
    return np.floor(counts + 0.5).astype(np.uint16)


def _require_gbrg(cfa: str):
    if cfa.upper() != GBRG:
        raise UnsupportedPatternError(f"only GBRG is supported, got {cfa!r}")


def pack_gbrg(mosaic: np.ndarray, cfa: str = GBRG) -> np.ndarray:
    """Pack an even-sized GBRG mosaic into (h/2, w/2, 4) planes, order (G,B,R,G)."""
    _require_gbrg(cfa)
    mosaic = np.asarray(mosaic)
    if mosaic.ndim != 2:
        raise ShapeError("mosaic must be 2-D")
    h, w = mosaic.shape
    if h % 2 or w % 2:
        raise ShapeError(f"mosaic dimensions must be even, got {h}x{w}")
    return np.stack(
        [
            mosaic[0::2, 0::2],  # G
            mosaic[0::2, 1::2],  # B
            mosaic[1::2, 0::2],  # R
            mosaic[1::2, 1::2],  # G
        ],
        axis=-1,
    )


def unpack_gbrg(packed: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`pack_gbrg`."""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[2] != 4:
        raise ShapeError(f"packed array must be (h/2, w/2, 4), got {packed.shape}")
    h2, w2, _ = packed.shape
    mosaic = np.empty((h2 * 2, w2 * 2), dtype=packed.dtype)
    mosaic[0::2, 0::2] = packed[..., 0]
    mosaic[0::2, 1::2] = packed[..., 1]
    mosaic[1::2, 0::2] = packed[..., 2]
    mosaic[1::2, 1::2] = packed[..., 3]
    return mosaic


def cfa_masks(shape: tuple[int, int], cfa: str = GBRG) -> dict[str, np.ndarray]:
    """Boolean site masks per channel for a GBRG mosaic."""
    _require_gbrg(cfa)
    h, w = shape
    rr, cc = np.mgrid[0:h, 0:w]
    return {
        "G": (rr + cc) % 2 == 0,
        "B": (rr % 2 == 0) & (cc % 2 == 1),
        "R": (rr % 2 == 1) & (cc % 2 == 0),
    }


# Interpolation kernels: the green diamond and the red/blue box, both
# normalized through the convolved mask so borders (reflect mode) stay exact.
_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64)
_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)


def demosaic_bilinear(mosaic: np.ndarray, cfa: str = GBRG) -> RgbImage:
    """Bilinearly interpolate a normalized GBRG mosaic to full-resolution cameraRGB.

    Native CFA sites pass their sample through unchanged; borders use 1-pixel
    reflection.
    """
    _require_gbrg(cfa)
    mosaic = np.asarray(mosaic, dtype=np.float64)
    if mosaic.ndim != 2:
        raise ShapeError("mosaic must be 2-D")
    masks = cfa_masks(mosaic.shape, cfa)
    planes = {}
    for ch, kern in (("R", _KERNEL_RB), ("G", _KERNEL_G), ("B", _KERNEL_RB)):
        m = masks[ch].astype(np.float64)
        num = ndimage.convolve(mosaic * m, kern, mode="reflect")
        den = ndimage.convolve(m, kern, mode="reflect")
        planes[ch] = num / den
    rgb = np.stack([planes["R"], planes["G"], planes["B"]], axis=-1)
    return RgbImage(rgb.astype(np.float32), space="cameraRGB")


# ---------------------------------------------------------------------------
# Frame file I/O: little-endian uint16 blob + plain-text sidecar manifest.
# ---------------------------------------------------------------------------

RAW_EXT = ".raw16"
SIDECAR_EXT = ".txt"


def save_frame(frame: BayerFrame, path: Path | str) -> Path:
    """Write ``<path>.raw16`` plus sidecar ``<path>.txt``; returns the raw path."""
    path = Path(path)
    if path.suffix == RAW_EXT:
        path = path.with_suffix("")
    raw_path = path.with_suffix(RAW_EXT)
    raw_path.write_bytes(frame.samples.astype("<u2").tobytes())
    sidecar = "\n".join(
        [
            f"width: {frame.width}",
            f"height: {frame.height}",
            f"cfa: {frame.cfa}",
            f"black_level: {frame.black_level}",
            f"white_level: {frame.white_level}",
            f"iso: {frame.iso:g}",
        ]
    )
    path.with_suffix(SIDECAR_EXT).write_text(sidecar + "\n")
    return raw_path


def load_frame(path: Path | str) -> BayerFrame:
    """Read a frame written by :func:`save_frame`."""
    path = Path(path)
    if path.suffix == RAW_EXT:
        path = path.with_suffix("")
    meta: dict[str, str] = {}
    for line in path.with_suffix(SIDECAR_EXT).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    width = int(meta["width"])
    height = int(meta["height"])
    blob = path.with_suffix(RAW_EXT).read_bytes()
    samples = np.frombuffer(blob, dtype="<u2").reshape(height, width)
    return BayerFrame(
        width=width,
        height=height,
        samples=samples.astype(np.uint16),
        cfa=meta.get("cfa", GBRG),
        black_level=int(meta.get("black_level", 0)),
        white_level=int(meta.get("white_level", 65535)),
        iso=float(meta.get("iso", 100)),
    )


_FRAME_RE = re.compile(r"^(\d+)" + re.escape(RAW_EXT) + "$")


def list_clip_frames(clip_dir: Path | str) -> list[Path]:
    """Numbered frame files of a clip directory, in index order."""
    clip_dir = Path(clip_dir)
    frames = []
    for p in clip_dir.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            frames.append((int(m.group(1)), p))
    return [p for _, p in sorted(frames)]


def load_clip(clip_dir: Path | str) -> list[BayerFrame]:
    """Load all numbered frames of a clip directory."""
    return [load_frame(p) for p in list_clip_frames(clip_dir)]


def save_clip(frames: list[BayerFrame], clip_dir: Path | str) -> None:
    """Write frames as ``NNNNNN.raw16`` files under ``clip_dir``."""
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_frame(frame, clip_dir / f"{i:06d}")
