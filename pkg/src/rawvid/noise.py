"""Per-ISO Poisson-Gaussian sensor noise model: calibration, lookup, sampling.

The noisy observation of a normalized clean plane ``Y`` is

    X = sigma_s^2 * Poisson(Y / sigma_s^2) + Normal(0, sigma_r^2)

clamped to [0, 1]. The scaled Poisson term has mean ``Y`` and variance
``sigma_s^2 * Y``, so the total variance is ``sigma_s^2 * Y + sigma_r^2``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigurationError, DomainError, ParameterError

CHANNELS = ("R", "G", "B")

#: Poisson rates at or above this use the rounded Gaussian approximation;
#: below it, sampling is exact. Covered by the moment tests.
POISSON_EXACT_MAX_RATE = 64.0


@dataclass
class NoiseParams:
    """Read/shot noise standard deviations per channel at one ISO."""

    iso: float
    sigma_r: dict[str, float]  # read noise std, normalized signal units
    sigma_s: dict[str, float]  # shot noise scale; sigma_s^2 in signal units

    def __post_init__(self):
        for table in (self.sigma_r, self.sigma_s):
            for ch in CHANNELS:
                if ch not in table:
                    raise ParameterError(f"missing channel {ch!r} in noise params")
                if table[ch] < 0:
                    raise ParameterError(f"negative sigma for channel {ch!r}")

    @classmethod
    def shared(cls, iso: float, sigma_r: float, sigma_s: float) -> "NoiseParams":
        """Shorthand for identical sigmas across all three channels."""
        return cls(iso, {c: sigma_r for c in CHANNELS}, {c: sigma_s for c in CHANNELS})


@dataclass
class SeedSpec:
    """Counter-style derivation path for reproducible noise sampling."""

    seed: int
    clip_id: str = ""
    frame: int = 0
    channel: int = 0

    def generator(self) -> np.random.Generator:
        clip_key = zlib.crc32(self.clip_id.encode("utf-8"))
        ss = np.random.SeedSequence([self.seed, clip_key, self.frame, self.channel])
        return np.random.Generator(np.random.Philox(ss))


def sample_noisy(
    y: np.ndarray,
    params: NoiseParams,
    channel: str,
    seed: SeedSpec,
) -> np.ndarray:
    """Draw one noisy realization of a normalized clean plane.

    Deterministic: identical (y, params, channel, seed) yields bit-identical
    output. ``sigma_s = sigma_r = 0`` is the identity.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise DomainError("clean plane values must lie in [0, 1]")
    if channel not in CHANNELS:
        raise ParameterError(f"unknown channel {channel!r}")
    sigma_r = params.sigma_r[channel]
    sigma_s = params.sigma_s[channel]

    rng = seed.generator()
    a = sigma_s * sigma_s
    if a == 0.0:
        shot = y.copy()
    else:
        rate = y / a
        shot = np.empty_like(rate)
        exact = rate < POISSON_EXACT_MAX_RATE
        if exact.any():
            shot[exact] = rng.poisson(rate[exact])
        approx = ~exact
        if approx.any():
            r = rate[approx]
            z = rng.standard_normal(r.shape)
            shot[approx] = np.maximum(np.floor(r + np.sqrt(r) * z + 0.5), 0.0)
        shot *= a
    if sigma_r > 0.0:
        shot = shot + rng.normal(0.0, sigma_r, size=y.shape)
    return np.clip(shot, 0.0, 1.0)


def noise_residual(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Element-wise noisy-minus-clean residual."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {y.shape}")
    return x - y


@dataclass
class CalibrationTable:
    """Noise parameters at strictly increasing ISO keys."""

    entries: list[NoiseParams] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ConfigurationError("calibration table must be non-empty")
        isos = [e.iso for e in self.entries]
        if any(b <= a for a, b in zip(isos, isos[1:])):
            raise ConfigurationError("ISO keys must be strictly increasing")

    def params_for_iso(self, iso: float) -> NoiseParams:
        """Exact entry, variance-space linear interpolation, or endpoint clamp."""
        isos = [e.iso for e in self.entries]
        if iso <= isos[0]:
            e = self.entries[0]
            return NoiseParams(iso, dict(e.sigma_r), dict(e.sigma_s))
        if iso >= isos[-1]:
            e = self.entries[-1]
            return NoiseParams(iso, dict(e.sigma_r), dict(e.sigma_s))
        hi = next(i for i, k in enumerate(isos) if k >= iso)
        if isos[hi] == iso:
            e = self.entries[hi]
            return NoiseParams(iso, dict(e.sigma_r), dict(e.sigma_s))
        lo = hi - 1
        t = (iso - isos[lo]) / (isos[hi] - isos[lo])
        a, b = self.entries[lo], self.entries[hi]
        sigma_r = {}
        sigma_s = {}
        for ch in CHANNELS:
            r2 = (1 - t) * a.sigma_r[ch] ** 2 + t * b.sigma_r[ch] ** 2
            s2 = (1 - t) * a.sigma_s[ch] ** 2 + t * b.sigma_s[ch] ** 2
            sigma_r[ch] = float(np.sqrt(r2))
            sigma_s[ch] = float(np.sqrt(s2))
        return NoiseParams(iso, sigma_r, sigma_s)

    # -- structured text document: one line per ISO, six sigma values -------

    def to_text(self) -> str:
        lines = ["# iso  sigma_r(R G B)  sigma_s(R G B)"]
        for e in self.entries:
            vals = [f"{e.sigma_r[c]:.8g}" for c in CHANNELS]
            vals += [f"{e.sigma_s[c]:.8g}" for c in CHANNELS]
            lines.append(f"{e.iso:g} " + " ".join(vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CalibrationTable":
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            iso = float(parts[0])
            if len(parts) == 3:
                # shared-value shorthand: iso sigma_r sigma_s
                entries.append(NoiseParams.shared(iso, float(parts[1]), float(parts[2])))
            elif len(parts) == 7:
                sr = dict(zip(CHANNELS, map(float, parts[1:4])))
                ss = dict(zip(CHANNELS, map(float, parts[4:7])))
                entries.append(NoiseParams(iso, sr, ss))
            else:
                raise ConfigurationError(f"bad calibration line: {line!r}")
        return cls(entries)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: Path | str) -> "CalibrationTable":
        return cls.from_text(Path(path).read_text())


def default_table() -> CalibrationTable:
    """Calibration table shipped with the toolkit (see data/calibration.txt)."""
    path = Path(__file__).parent / "data" / "calibration.txt"
    return CalibrationTable.load(path)


def fit_mean_variance(means: np.ndarray, variances: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of var = sigma_s^2 * mean + sigma_r^2.

    Returns (sigma_s, sigma_r), both floored at zero.
    """
    means = np.asarray(means, dtype=np.float64).ravel()
    variances = np.asarray(variances, dtype=np.float64).ravel()
    if means.size != variances.size:
        raise CalibrationError("means and variances must have equal length")
    if np.unique(means).size < 2:
        raise CalibrationError("need at least 2 distinct mean levels for the fit")
    design = np.stack([means, np.ones_like(means)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, variances, rcond=None)
    s2 = max(slope, 0.0)
    r2 = max(intercept, 0.0)
    return float(np.sqrt(s2)), float(np.sqrt(r2))


def estimate_params(
    flat_stacks: dict[str, list[tuple[np.ndarray, np.ndarray]]],
    iso: float,
) -> NoiseParams:
    """Fit per-channel noise parameters from flat-field (mean, variance) planes.

    ``flat_stacks`` maps channel -> list of (mean plane, variance plane), one
    pair per exposure level.
    """
    sigma_r = {}
    sigma_s = {}
    for ch in CHANNELS:
        pairs = flat_stacks.get(ch)
        if not pairs:
            raise CalibrationError(f"no flat-field data for channel {ch!r}")
        means = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m, _ in pairs])
        variances = np.concatenate([np.asarray(v, dtype=np.float64).ravel() for _, v in pairs])
        s, r = fit_mean_variance(means, variances)
        sigma_s[ch] = s
        sigma_r[ch] = r
    return NoiseParams(iso, sigma_r, sigma_s)
