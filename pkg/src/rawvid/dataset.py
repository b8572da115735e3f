"""End-to-end noisy/clean RAW + sRGB pair creation, patches, and splits.

On-disk layout of a built dataset:

    <root>/<clip_id>/clean_raw/NNNNNN.raw16 (+ sidecar)
    <root>/<clip_id>/noisy_raw/NNNNNN.raw16
    <root>/<clip_id>/clean_srgb/NNNNNN.png
    <root>/<clip_id>/noisy_srgb/NNNNNN.png
    <root>/<clip_id>/manifest.json
    <root>/split.txt
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import raw_core
from .errors import ConfigurationError, DomainError, ShapeError
from .isp import IspConfig, render, resolve_wb
from .noise import CalibrationTable, NoiseParams, SeedSpec, sample_noisy
from .raw_core import BayerFrame

#: Noise-level presets and their operating ISO.
NOISE_PRESETS = {"heavy": 20000.0, "medium": 8000.0, "light": 2500.0}


def preset_iso(label: str) -> float:
    key = label.lower()
    if key not in NOISE_PRESETS:
        raise ConfigurationError(f"unknown preset {label!r}; choose from {sorted(NOISE_PRESETS)}")
    return NOISE_PRESETS[key]


@dataclass
class ClipPair:
    """Aligned clean/noisy RAW and sRGB sequences plus generation manifest."""

    clip_id: str
    clean_raw: list[BayerFrame]
    noisy_raw: list[BayerFrame]
    clean_srgb: list[np.ndarray]  # uint8 (h, w, 3)
    noisy_srgb: list[np.ndarray]
    manifest: dict

    def __post_init__(self):
        n = len(self.clean_raw)
        if not (len(self.noisy_raw) == len(self.clean_srgb) == len(self.noisy_srgb) == n):
            raise ShapeError("all four sequences must have equal length")


def add_noise_to_frame(
    frame: BayerFrame, params: NoiseParams, seed: SeedSpec
) -> BayerFrame:
    """Noisy copy of a RAW frame; noise is sampled per packed plane."""
    mosaic = raw_core.normalize(frame)
    packed = raw_core.pack_gbrg(mosaic, frame.cfa)
    noisy_planes = []
    for plane_idx, ch in enumerate(raw_core.PACKED_PLANE_CHANNELS):
        plane_seed = SeedSpec(seed.seed, seed.clip_id, seed.frame, plane_idx)
        noisy_planes.append(sample_noisy(packed[..., plane_idx], params, ch, plane_seed))
    noisy_mosaic = raw_core.unpack_gbrg(np.stack(noisy_planes, axis=-1))
    samples = raw_core.denormalize(noisy_mosaic, frame.black_level, frame.white_level)
    return BayerFrame(
        width=frame.width,
        height=frame.height,
        samples=samples,
        cfa=frame.cfa,
        black_level=frame.black_level,
        white_level=frame.white_level,
        iso=params.iso,
    )


def build_pair(
    clean_clip: list[BayerFrame],
    preset_or_iso: str | float,
    isp_cfg: IspConfig,
    table: CalibrationTable,
    seed: int,
    clip_id: str = "clip",
) -> ClipPair:
    """Synthesize a noisy stream and render both streams through one ISP config."""
    if not clean_clip:
        raise DomainError("clean clip is empty")
    if isinstance(preset_or_iso, str):
        preset = preset_or_iso.lower()
        iso = preset_iso(preset)
    else:
        preset = None
        iso = float(preset_or_iso)
    lo, hi = table.entries[0].iso, table.entries[-1].iso
    if iso < lo or iso > hi:
        warnings.warn(f"ISO {iso:g} outside calibration range [{lo:g}, {hi:g}]; clamping")
    params = table.params_for_iso(iso)

    # Freeze auto white balance against the first clean frame so clean and
    # noisy streams run through the identical processing.
    cfg = isp_cfg
    if cfg.wb_gains is None:
        gains, _ = resolve_wb(cfg, raw_core.normalize(clean_clip[0]), clean_clip[0].cfa)
        cfg = IspConfig.from_dict({**isp_cfg.to_dict(), "wb_gains": list(gains)})

    noisy_raw = [
        add_noise_to_frame(frame, params, SeedSpec(seed, clip_id, i))
        for i, frame in enumerate(clean_clip)
    ]
    clean_srgb = [render(f, None, cfg) for f in clean_clip]
    noisy_srgb = [render(f, None, cfg) for f in noisy_raw]

    manifest = {
        "clip_id": clip_id,
        "iso": iso,
        "preset": preset,
        "sigma_r": params.sigma_r,
        "sigma_s": params.sigma_s,
        "seed": seed,
        "n_frames": len(clean_clip),
        "width": clean_clip[0].width,
        "height": clean_clip[0].height,
        "isp_digest": cfg.digest(),
        "isp_config": cfg.to_dict(),
    }
    return ClipPair(clip_id, list(clean_clip), noisy_raw, clean_srgb, noisy_srgb, manifest)


def regenerate_pair(clean_clip: list[BayerFrame], manifest: dict) -> ClipPair:
    """Rebuild the noisy streams bit-exactly from a recorded manifest."""
    cfg = IspConfig.from_dict(manifest["isp_config"])
    table = CalibrationTable(
        [NoiseParams(manifest["iso"], dict(manifest["sigma_r"]), dict(manifest["sigma_s"]))]
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_pair(
            clean_clip, manifest["iso"], cfg, table, manifest["seed"], manifest["clip_id"]
        )


def write_clip_pair(pair: ClipPair, root: Path | str) -> Path:
    """Materialize a ClipPair under <root>/<clip_id>/ (atomic per file)."""
    clip_dir = Path(root) / pair.clip_id
    raw_core.save_clip(pair.clean_raw, clip_dir / "clean_raw")
    raw_core.save_clip(pair.noisy_raw, clip_dir / "noisy_raw")
    for sub, frames in (("clean_srgb", pair.clean_srgb), ("noisy_srgb", pair.noisy_srgb)):
        out = clip_dir / sub
        out.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(frames):
            ok = cv2.imwrite(str(out / f"{i:06d}.png"), img[..., ::-1])  # RGB -> BGR
            if not ok:
                raise IOError(f"failed to write {out / f'{i:06d}.png'}")
    tmp = clip_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(pair.manifest, indent=2, sort_keys=True) + "\n")
    tmp.rename(clip_dir / "manifest.json")
    return clip_dir


@dataclass
class PatchPair:
    """Aligned clean/noisy patch in packed-RAW and sRGB domains."""

    frame_index: int
    packed_origin: tuple[int, int]  # (y, x) in packed-plane coordinates
    clean_raw: np.ndarray  # (s/2, s/2, 4)
    noisy_raw: np.ndarray
    clean_srgb: np.ndarray  # (s, s, 3) uint8
    noisy_srgb: np.ndarray

    @property
    def mosaic_origin(self) -> tuple[int, int]:
        return (2 * self.packed_origin[0], 2 * self.packed_origin[1])


def _augment(patch: np.ndarray, rot_k: int, flip_h: bool, flip_v: bool) -> np.ndarray:
    out = np.rot90(patch, rot_k, axes=(0, 1))
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1, :]
    return np.ascontiguousarray(out)


def extract_patches(
    pair: ClipPair,
    size: int = 256,
    count: int = 0,
    seed: int = 0,
    augment: bool = False,
) -> list[PatchPair]:
    """Cut aligned random patches; RAW patches live in packed-plane space.

    ``size`` is the sRGB/mosaic-domain patch size, so packed patches are
    size/2 per side and every mosaic-domain origin is even by construction.
    """
    if size % 2:
        raise DomainError("patch size must be even")
    if count < 0:
        raise DomainError("count must be non-negative")
    half = size // 2
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x70A7C4])))
    patches = []
    packed_clean = [raw_core.pack_gbrg(raw_core.normalize(f), f.cfa) for f in pair.clean_raw]
    packed_noisy = [raw_core.pack_gbrg(raw_core.normalize(f), f.cfa) for f in pair.noisy_raw]
    h2, w2 = packed_clean[0].shape[:2]
    if half > h2 or half > w2:
        raise DomainError(f"patch size {size} exceeds frame dimensions")
    for _ in range(count):
        fi = int(rng.integers(len(packed_clean)))
        py = int(rng.integers(h2 - half + 1))
        px = int(rng.integers(w2 - half + 1))
        if augment:
            rot_k = int(rng.integers(4))
            flip_h = bool(rng.integers(2))
            flip_v = bool(rng.integers(2))
        else:
            rot_k, flip_h, flip_v = 0, False, False
        cuts = [
            packed_clean[fi][py : py + half, px : px + half],
            packed_noisy[fi][py : py + half, px : px + half],
            pair.clean_srgb[fi][2 * py : 2 * py + size, 2 * px : 2 * px + size],
            pair.noisy_srgb[fi][2 * py : 2 * py + size, 2 * px : 2 * px + size],
        ]
        cuts = [_augment(c, rot_k, flip_h, flip_v) for c in cuts]
        patches.append(PatchPair(fi, (py, px), *cuts))
    return patches


@dataclass
class SplitManifest:
    """Disjoint, exhaustive train/test assignment of clip ids."""

    train: list[str]
    test: list[str]
    ratio: float

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ConfigurationError("train/test sets overlap")

    def to_text(self) -> str:
        lines = [f"# ratio: {self.ratio:g}"]
        lines += [f"train {c}" for c in self.train]
        lines += [f"test {c}" for c in self.test]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SplitManifest":
        train, test, ratio = [], [], 0.9
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("# ratio:"):
                ratio = float(line.split(":")[1])
            elif line.startswith("train "):
                train.append(line.split(None, 1)[1])
            elif line.startswith("test "):
                test.append(line.split(None, 1)[1])
        return cls(train, test, ratio)


def split_dataset(clip_ids: list[str], ratio: float = 0.9, seed: int = 0) -> SplitManifest:
    """Seeded shuffle then prefix split; |train| = round(ratio * total)."""
    if len(clip_ids) < 2:
        raise DomainError("need at least 2 clips to split")
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError("ratio must be in (0, 1)")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5B71])))
    order = list(rng.permutation(len(clip_ids)))
    shuffled = [clip_ids[i] for i in order]
    n_train = int(round(ratio * len(clip_ids)))
    return SplitManifest(shuffled[:n_train], shuffled[n_train:], ratio)


def select_training_clips(
    video_length: int,
    clips_per_video: int,
    clip_len: int = 25,
    seed: int = 0,
) -> list[tuple[int, int]]:
    """Uniformly random non-overlapping [start, end) windows of clip_len frames.

    If the video cannot hold the requested number of disjoint windows, fewer
    are returned with a warning.
    """
    if video_length < clip_len:
        raise DomainError(f"video length {video_length} < clip length {clip_len}")
    k = clips_per_video
    max_k = video_length // clip_len
    if k > max_k:
        warnings.warn(
            f"video of {video_length} frames holds only {max_k} disjoint "
            f"{clip_len}-frame clips; emitting {max_k}"
        )
        k = max_k
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xC11F])))
    # Gap method: k sorted draws from the slack, shifted by i * clip_len,
    # give uniformly distributed disjoint windows.
    slack = video_length - k * clip_len
    offsets = np.sort(rng.integers(0, slack + 1, size=k))
    return [(int(off + i * clip_len), int(off + (i + 1) * clip_len)) for i, off in enumerate(offsets)]


def build_dataset(
    in_root: Path | str,
    out_root: Path | str,
    preset_or_iso: str | float,
    isp_cfg: IspConfig,
    table: CalibrationTable,
    seed: int,
    split_ratio: float = 0.9,
    patch_size: int = 256,
    patches_per_clip: int = 0,
) -> list[ClipPair]:
    """Build pairs for every clip directory under in_root and write the tree."""
    in_root = Path(in_root)
    out_root = Path(out_root)
    clip_dirs = sorted(d for d in in_root.iterdir() if d.is_dir())
    if not clip_dirs:
        raise DomainError(f"no clip directories under {in_root}")
    pairs = []
    for clip_dir in clip_dirs:
        frames = raw_core.load_clip(clip_dir)
        pair = build_pair(frames, preset_or_iso, isp_cfg, table, seed, clip_dir.name)
        write_clip_pair(pair, out_root)
        if patches_per_clip:
            patch_dir = out_root / pair.clip_id / "patches"
            patch_dir.mkdir(parents=True, exist_ok=True)
            patches = extract_patches(pair, patch_size, patches_per_clip, seed)
            index_lines = []
            for j, p in enumerate(patches):
                # Plain .npy files: byte-deterministic, unlike zipped archives.
                np.save(patch_dir / f"{j:04d}_clean_raw.npy", p.clean_raw)
                np.save(patch_dir / f"{j:04d}_noisy_raw.npy", p.noisy_raw)
                np.save(patch_dir / f"{j:04d}_clean_srgb.npy", p.clean_srgb)
                np.save(patch_dir / f"{j:04d}_noisy_srgb.npy", p.noisy_srgb)
                index_lines.append(
                    f"{j:04d} frame={p.frame_index} packed_origin={p.packed_origin[0]},{p.packed_origin[1]}"
                )
            (patch_dir / "index.txt").write_text("\n".join(index_lines) + "\n")
        pairs.append(pair)
    if len(clip_dirs) >= 2:
        manifest = split_dataset([d.name for d in clip_dirs], split_ratio, seed)
        tmp = out_root / "split.txt.tmp"
        tmp.write_text(manifest.to_text())
        tmp.rename(out_root / "split.txt")
    return pairs
