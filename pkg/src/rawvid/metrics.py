"""Fidelity and realism metrics: PSNR, SSIM, SNR, temporal averaging, KL.

PSNR/SNR report ``math.inf`` when the residual is exactly zero; clip-level
means exclude infinite entries and emit a warning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from .errors import DomainError, ShapeError

#: Default residual-value histogram support and resolution for KL.
KL_RANGE = (-1.0, 1.0)
KL_BINS = 256
KL_EPS = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class Histogram:
    """Counts over strictly increasing bin edges."""

    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.edges.ndim != 1 or np.any(np.diff(self.edges) <= 0):
            raise DomainError("histogram edges must be strictly increasing")
        if self.counts.shape != (self.edges.size - 1,):
            raise ShapeError("counts length must be len(edges) - 1")
        if np.any(self.counts < 0):
            raise DomainError("histogram counts must be non-negative")

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def normalized(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise DomainError("cannot normalize an empty histogram")
        return self.counts / total


def histogram(values: np.ndarray, bins: int = KL_BINS, value_range=KL_RANGE) -> Histogram:
    """Fixed-range histogram of a value array (residuals by default)."""
    counts, edges = np.histogram(np.asarray(values).ravel(), bins=bins, range=value_range)
    return Histogram(edges, counts.astype(np.float64))


def gaussian_histogram(sigma: float, mean: float = 0.0, bins: int = KL_BINS, value_range=KL_RANGE) -> Histogram:
    """Analytic Gaussian probability mass integrated over histogram bins."""
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    cdf = stats.norm.cdf(edges, loc=mean, scale=sigma)
    return Histogram(edges, np.diff(cdf))


def poisson_gaussian_histogram(
    y: float,
    sigma_s: float,
    sigma_r: float,
    bins: int = KL_BINS,
    value_range=KL_RANGE,
) -> Histogram:
    """Analytic residual histogram of the scaled Poisson-Gaussian model.

    The residual is X - y where X = sigma_s^2 * Poisson(y / sigma_s^2)
    plus Gaussian read noise; mass is the exact Poisson mixture of
    Gaussian bin integrals.
    """
    a = sigma_s * sigma_s
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    if a == 0.0:
        return gaussian_histogram(sigma_r, 0.0, bins, value_range)
    lam = y / a
    half_width = 10.0 * math.sqrt(lam) + 10.0
    k_lo = max(0, int(math.floor(lam - half_width)))
    k_hi = int(math.ceil(lam + half_width))
    ks = np.arange(k_lo, k_hi + 1)
    pk = stats.poisson.pmf(ks, lam)
    centers = a * ks - y  # residual value of each Poisson outcome
    if sigma_r > 0:
        cdf = stats.norm.cdf(edges[None, :], loc=centers[:, None], scale=sigma_r)
        mass = pk @ np.diff(cdf, axis=1)
    else:
        idx = np.searchsorted(edges, centers, side="right") - 1
        mass = np.zeros(bins)
        ok = (idx >= 0) & (idx < bins)
        np.add.at(mass, idx[ok], pk[ok])
    return Histogram(edges, mass)


def kl_divergence(p: Histogram, q: Histogram, eps: float = KL_EPS) -> float:
    """Relative entropy sum(p * ln(p/q)) in nats; q bins floored at eps."""
    if p.edges.shape != q.edges.shape or not np.allclose(p.edges, q.edges):
        raise DomainError("histograms must share the same binning")
    pn = p.normalized()
    qn = np.maximum(q.normalized(), eps)
    mask = pn > 0
    return float(np.sum(pn[mask] * np.log(pn[mask] / qn[mask])))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise DomainError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def snr(signal_ref: np.ndarray, noisy: np.ndarray) -> float:
    """Signal power over residual power, in dB; inf for a zero residual."""
    s = np.asarray(signal_ref, dtype=np.float64)
    n = np.asarray(noisy, dtype=np.float64)
    if s.shape != n.shape:
        raise ShapeError(f"shape mismatch {s.shape} vs {n.shape}")
    resid_power = float(np.mean((n - s) ** 2))
    if resid_power == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.mean(s * s)) / resid_power)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    kern = np.outer(g, g)
    return kern / kern.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Color inputs are averaged to a single plane first.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    kern = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    mu_a = signal.convolve2d(a, kern, mode="valid")
    mu_b = signal.convolve2d(b, kern, mode="valid")
    var_a = signal.convolve2d(a * a, kern, mode="valid") - mu_a**2
    var_b = signal.convolve2d(b * b, kern, mode="valid") - mu_b**2
    cov = signal.convolve2d(a * b, kern, mode="valid") - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def temporal_average(frames: list[np.ndarray] | np.ndarray, n: int | None = None) -> np.ndarray:
    """Per-pixel mean of the first n frames (pseudo ground truth of a static scene)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 3:
        raise ShapeError("expected a stack of frames")
    if n is None:
        n = frames.shape[0]
    if n <= 0:
        raise DomainError("n must be positive")
    if n > frames.shape[0]:
        raise DomainError(f"requested {n} frames, only {frames.shape[0]} available")
    return frames[:n].mean(axis=0)


@dataclass
class MetricReport:
    """Per-frame PSNR/SSIM plus clip means (infinite PSNR entries excluded)."""

    psnr_per_frame: list[float] = field(default_factory=list)
    ssim_per_frame: list[float] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        finite = [v for v in self.psnr_per_frame if math.isfinite(v)]
        if len(finite) < len(self.psnr_per_frame):
            warnings.warn("infinite PSNR entries excluded from the clip mean")
        if not finite:
            return math.inf
        return float(np.mean(finite))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_per_frame)) if self.ssim_per_frame else math.nan


def clip_report(frames_a: list[np.ndarray], frames_b: list[np.ndarray], peak: float = 1.0) -> MetricReport:
    """PSNR/SSIM for every aligned frame pair of two clips."""
    if len(frames_a) != len(frames_b):
        raise ShapeError("clips must have equal frame counts")
    report = MetricReport()
    for fa, fb in zip(frames_a, frames_b):
        report.psnr_per_frame.append(psnr(fa, fb, peak))
        report.ssim_per_frame.append(ssim(fa, fb, peak))
    return report


def per_pixel_kl(
    noisy: np.ndarray,
    clean: np.ndarray,
    reference: np.ndarray,
    bins: int = 16,
    value_range=KL_RANGE,
) -> float:
    """Alternative per-pixel reading of the realism statistic.

    Residual distributions are formed per pixel across frames for two
    noisy stacks against the same clean frame, and the KL divergences are
    averaged over pixels. The pooled histogram (``kl_divergence``) is the
    default interpretation.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != reference.shape or noisy.shape[1:] != clean.shape:
        raise ShapeError("stacks must be (frames, h, w) over a matching clean frame")
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    res_a = noisy - clean[None]
    res_b = reference - clean[None]
    kls = []
    flat_a = res_a.reshape(res_a.shape[0], -1)
    flat_b = res_b.reshape(res_b.shape[0], -1)
    for i in range(flat_a.shape[1]):
        pa, _ = np.histogram(flat_a[:, i], bins=edges)
        pb, _ = np.histogram(flat_b[:, i], bins=edges)
        kls.append(kl_divergence(Histogram(edges, pa), Histogram(edges, pb)))
    return float(np.mean(kls))
