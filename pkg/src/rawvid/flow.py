"""Dense optical flow (polynomial-expansion method) and motion statistics."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DomainError, ShapeError

#: Rec.709 luma weights for color-to-gray conversion.
LUMA_709 = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class FlowConfig:
    """Coarse-to-fine pyramid settings for the Farneback estimator."""

    pyramid_levels: int = 4
    pyramid_scale: float = 0.5
    window: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Rec.709 luma of an (h, w, 3) image, pass-through for single-plane input."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 3:
        return frame @ LUMA_709.astype(np.float32)
    return frame


def dense_flow(f0: np.ndarray, f1: np.ndarray, cfg: FlowConfig | None = None) -> np.ndarray:
    """Per-pixel (u, v) displacement from f0 to f1, shape (h, w, 2) float32.

    A pixel at (x, y) in f0 appears near (x + u, y + v) in f1.
    """
    cfg = cfg or FlowConfig()
    g0 = to_gray(f0)
    g1 = to_gray(f1)
    if g0.shape != g1.shape:
        raise ShapeError(f"frame shapes differ: {g0.shape} vs {g1.shape}")
    min_side = min(g0.shape)
    if min_side * cfg.pyramid_scale ** (cfg.pyramid_levels - 1) < cfg.poly_n:
        raise ShapeError("frames smaller than the coarsest pyramid level")
    # Farneback operates on 8-bit intensities.
    lo = min(g0.min(), g1.min())
    hi = max(g0.max(), g1.max())
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    u0 = np.clip((g0 - lo) * scale, 0, 255).astype(np.uint8)
    u1 = np.clip((g1 - lo) * scale, 0, 255).astype(np.uint8)
    flow = cv2.calcOpticalFlowFarneback(
        u0,
        u1,
        None,
        pyr_scale=cfg.pyramid_scale,
        levels=cfg.pyramid_levels,
        winsize=cfg.window,
        iterations=cfg.iterations,
        poly_n=cfg.poly_n,
        poly_sigma=cfg.poly_sigma,
        flags=0,
    )
    return flow.astype(np.float32)


@dataclass
class MotionHistogram:
    """Aggregated magnitude (pixels) and phase (radians) histograms."""

    magnitude_edges: np.ndarray
    magnitude_counts: np.ndarray
    phase_edges: np.ndarray
    phase_counts: np.ndarray
    overflow: int = 0  # magnitudes beyond the last edge
    min_phase_magnitude: float = 0.1

    def merge(self, other: "MotionHistogram") -> "MotionHistogram":
        if (
            self.magnitude_edges.shape != other.magnitude_edges.shape
            or self.phase_edges.shape != other.phase_edges.shape
        ):
            raise ShapeError("cannot merge histograms with different binning")
        return MotionHistogram(
            self.magnitude_edges,
            self.magnitude_counts + other.magnitude_counts,
            self.phase_edges,
            self.phase_counts + other.phase_counts,
            self.overflow + other.overflow,
            self.min_phase_magnitude,
        )

    def to_text(self) -> str:
        lines = [
            f"# magnitude bins: {self.magnitude_counts.size} over "
            f"[{self.magnitude_edges[0]:g}, {self.magnitude_edges[-1]:g}] px, overflow={self.overflow}",
            f"# phase bins: {self.phase_counts.size} over [-pi, pi] rad, "
            f"min magnitude {self.min_phase_magnitude:g} px",
            "# kind  bin_low  bin_high  count",
        ]
        for i, c in enumerate(self.magnitude_counts):
            lines.append(
                f"mag {self.magnitude_edges[i]:.6g} {self.magnitude_edges[i + 1]:.6g} {int(c)}"
            )
        for i, c in enumerate(self.phase_counts):
            lines.append(
                f"phase {self.phase_edges[i]:.6g} {self.phase_edges[i + 1]:.6g} {int(c)}"
            )
        return "\n".join(lines) + "\n"


def motion_histograms(
    flows: list[np.ndarray],
    magnitude_bins: int = 64,
    magnitude_max: float = 32.0,
    phase_bins: int = 72,
    min_phase_magnitude: float = 0.1,
) -> MotionHistogram:
    """Magnitude/phase histograms pooled over a list of flow fields.

    Pixels moving less than ``min_phase_magnitude`` px are excluded from the
    phase histogram (their angle is meaningless).
    """
    if not flows:
        raise DomainError("need at least one flow field")
    mag_edges = np.linspace(0.0, magnitude_max, magnitude_bins + 1)
    phase_edges = np.linspace(-np.pi, np.pi, phase_bins + 1)
    mag_counts = np.zeros(magnitude_bins)
    phase_counts = np.zeros(phase_bins)
    overflow = 0
    for flow in flows:
        flow = np.asarray(flow, dtype=np.float64)
        if flow.ndim != 3 or flow.shape[2] != 2:
            raise ShapeError(f"flow field must be (h, w, 2), got {flow.shape}")
        u = flow[..., 0].ravel()
        v = flow[..., 1].ravel()
        mag = np.hypot(u, v)
        counts, _ = np.histogram(mag, bins=mag_edges)
        mag_counts += counts
        overflow += int(np.count_nonzero(mag >= magnitude_max))
        moving = mag >= min_phase_magnitude
        if moving.any():
            phase = np.arctan2(v[moving], u[moving])
            counts, _ = np.histogram(phase, bins=phase_edges)
            phase_counts += counts
    return MotionHistogram(
        mag_edges, mag_counts, phase_edges, phase_counts, overflow, min_phase_magnitude
    )


def save_flow(flow: np.ndarray, path) -> None:
    """Binary planar dump: u plane then v plane, little-endian float32."""
    flow = np.asarray(flow, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(flow[..., 0]).tobytes())
        fh.write(np.ascontiguousarray(flow[..., 1]).tobytes())
