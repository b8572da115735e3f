"""Single command-line entry point for all pipelines.

Exit codes: 0 success, 1 domain error, 2 usage error. All randomness flows
from one ``--seed``. Reports are line-delimited JSON records.
"""

from __future__ import annotations

import functools
import json
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import FORMAT_VERSION, __version__
from . import dataset as ds
from . import flow as flow_mod
from . import isp, metrics, noise, raw_core
from .errors import RawvidError

CONFIG_DIR_ENV = "RAWVID_CONFIG_DIR"


def resolve_config_path(path: str | Path) -> Path:
    """Literal path, or a name looked up in $RAWVID_CONFIG_DIR."""
    p = Path(path)
    if not p.exists():
        base = os.environ.get(CONFIG_DIR_ENV)
        if base and (Path(base) / p).exists():
            return Path(base) / p
    return p


def handle_errors(fn):
    """Map toolkit domain errors to exit code 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RawvidError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def echo_config(command: str, params: dict) -> None:
    """Reproducibility record: every run prints its effective configuration."""
    record = {"command": command, "version": __version__, "format": FORMAT_VERSION}
    record.update(params)
    click.echo(json.dumps(record, sort_keys=True, default=str), err=True)


def load_png(path: Path) -> np.ndarray:
    import cv2

    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise click.UsageError(f"cannot read image {path}")
    if img.ndim == 3:
        img = img[..., ::-1]  # BGR -> RGB
    return img.astype(np.float64) / 255.0


def save_png(img_uint8: np.ndarray, path: Path) -> None:
    import cv2

    out = img_uint8[..., ::-1] if img_uint8.ndim == 3 else img_uint8
    if not cv2.imwrite(str(path), out):
        raise click.ClickException(f"failed to write {path}")


def list_images(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    return [path]


def load_table(table_path: str | None) -> noise.CalibrationTable:
    if table_path is None:
        return noise.default_table()
    return noise.CalibrationTable.load(resolve_config_path(table_path))


def load_isp_config(cfg_path: str | None) -> isp.IspConfig:
    if cfg_path is None:
        return isp.IspConfig()
    return isp.IspConfig.load(resolve_config_path(cfg_path))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, message=f"rawvid {__version__} (format {FORMAT_VERSION})")
def main():
    """RAW video noise synthesis, ISP rendering, metrics, flow, and the
    recurrent denoiser reference."""


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True), help="Flat-field clip directory")
@click.option("--iso", required=True, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dry-run", is_flag=True)
@handle_errors
def calibrate(in_dir, iso, out_path, dry_run):
    """Fit per-channel noise parameters from a static flat-field clip."""
    frames = raw_core.load_clip(in_dir)
    packed = np.stack([raw_core.pack_gbrg(raw_core.normalize(f), f.cfa) for f in frames])
    stacks: dict[str, list] = {c: [] for c in noise.CHANNELS}
    for plane_idx, ch in enumerate(raw_core.PACKED_PLANE_CHANNELS):
        plane = packed[..., plane_idx]
        stacks[ch].append((plane.mean(axis=0), plane.var(axis=0, ddof=1)))
    params = noise.estimate_params(stacks, iso)
    table = noise.CalibrationTable([params])
    echo_config("calibrate", {"in": in_dir, "iso": iso, "out": out_path, "dry_run": dry_run})
    if not dry_run:
        table.save(out_path)
    click.echo(table.to_text(), nl=False)


def _iso_from_options(iso, preset):
    if (iso is None) == (preset is None):
        raise click.UsageError("exactly one of --iso / --preset is required")
    return ds.preset_iso(preset) if preset else iso


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--iso", type=float)
@click.option("--preset", type=click.Choice(sorted(ds.NOISE_PRESETS), case_sensitive=False))
@click.option("--table", "table_path", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dry-run", is_flag=True)
@handle_errors
def synth(in_dir, out_dir, iso, preset, table_path, seed, dry_run):
    """Add calibrated sensor noise to a clean RAW clip."""
    iso = _iso_from_options(iso, preset)
    table = load_table(table_path)
    params = table.params_for_iso(iso)
    frames = raw_core.load_clip(in_dir)
    clip_id = Path(in_dir).name
    echo_config("synth", {"in": in_dir, "out": out_dir, "iso": iso, "seed": seed, "dry_run": dry_run})
    if dry_run:
        return
    noisy = [
        ds.add_noise_to_frame(f, params, noise.SeedSpec(seed, clip_id, i))
        for i, f in enumerate(frames)
    ]
    raw_core.save_clip(noisy, out_dir)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--isp", "isp_path", type=click.Path(), help="ISP config JSON")
@click.option("--iso", type=float, help="Inject noise at this ISO before rendering")
@click.option("--no-noise", is_flag=True, help="Render without noise injection")
@click.option("--table", "table_path", type=click.Path())
@click.option("--disable-stage", "disabled", multiple=True, type=click.Choice(["color_temp", "tonemap"]))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dry-run", is_flag=True)
@handle_errors
def render(in_dir, out_dir, isp_path, iso, no_noise, table_path, disabled, seed, dry_run):
    """Render a RAW clip (or single frame) to 8-bit sRGB PNGs."""
    cfg = load_isp_config(isp_path)
    if "color_temp" in disabled:
        cfg.color_temp_module = False
    if "tonemap" in disabled:
        cfg.tonemap_enabled = False
    params = None
    if iso is not None and not no_noise:
        params = load_table(table_path).params_for_iso(iso)
    in_path = Path(in_dir)
    frames = raw_core.load_clip(in_path) if in_path.is_dir() else [raw_core.load_frame(in_path)]
    echo_config(
        "render",
        {"in": in_dir, "out": out_dir, "iso": iso, "no_noise": no_noise,
         "disable": list(disabled), "seed": seed, "isp_digest": cfg.digest(), "dry_run": dry_run},
    )
    if dry_run:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clip_id = in_path.name
    for i, frame in enumerate(frames):
        img = isp.render(frame, params, cfg, noise.SeedSpec(seed, clip_id, i))
        save_png(img, out / f"{i:06d}.png")


@main.command()
@click.option("--in", "in_root", required=True, type=click.Path(exists=True))
@click.option("--out", "out_root", required=True, type=click.Path())
@click.option("--iso", type=float)
@click.option("--preset", type=click.Choice(sorted(ds.NOISE_PRESETS), case_sensitive=False))
@click.option("--isp", "isp_path", type=click.Path())
@click.option("--table", "table_path", type=click.Path())
@click.option("--patches", type=int, default=0, show_default=True)
@click.option("--patch-size", type=int, default=256, show_default=True)
@click.option("--ratio", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--dry-run", is_flag=True)
@handle_errors
def dataset(in_root, out_root, iso, preset, isp_path, table_path, patches, patch_size, ratio, seed, dry_run):
    """Build noisy/clean RAW + sRGB pairs for every clip under --in."""
    if (iso is None) == (preset is None):
        raise click.UsageError("exactly one of --iso / --preset is required")
    target = preset.lower() if preset else iso
    cfg = load_isp_config(isp_path)
    table = load_table(table_path)
    echo_config(
        "dataset",
        {"in": in_root, "out": out_root, "target": target, "patches": patches,
         "patch_size": patch_size, "ratio": ratio, "seed": seed,
         "isp_digest": cfg.digest(), "dry_run": dry_run},
    )
    if dry_run:
        return
    pairs = ds.build_dataset(in_root, out_root, target, cfg, table, seed, ratio, patch_size, patches)
    click.echo(json.dumps({"clips": len(pairs), "out": out_root}))


@main.command("metrics")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--hist-out", type=click.Path(), help="Residual histogram dump (text)")
@handle_errors
def metrics_cmd(path_a, path_b, hist_out):
    """PSNR/SSIM report between two images or clip directories."""
    frames_a = [load_png(p) for p in list_images(Path(path_a))]
    frames_b = [load_png(p) for p in list_images(Path(path_b))]
    echo_config("metrics", {"a": path_a, "b": path_b, "frames": len(frames_a)})
    report = metrics.clip_report(frames_a, frames_b)
    for i, (p, s) in enumerate(zip(report.psnr_per_frame, report.ssim_per_frame)):
        click.echo(json.dumps({"frame": i, "psnr": None if math.isinf(p) else p, "ssim": s}))
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")
        summary = {"psnr_mean": report.psnr_mean, "ssim_mean": report.ssim_mean}
    summary = {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in summary.items()}
    click.echo(json.dumps({"summary": summary}))
    if hist_out:
        residual = np.concatenate(
            [noise.noise_residual(a, b).ravel() for a, b in zip(frames_a, frames_b)]
        )
        hist = metrics.histogram(residual)
        lines = [
            f"{hist.edges[i]:.8g} {hist.edges[i + 1]:.8g} {int(hist.counts[i])}"
            for i in range(hist.counts.size)
        ]
        Path(hist_out).write_text("\n".join(lines) + "\n")


@main.command("flow")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), help="Histogram table output (default stdout)")
@click.option("--dump-dir", type=click.Path(), help="Per-pair binary flow dumps")
@handle_errors
def flow_cmd(in_dir, out_path, dump_dir):
    """Dense optical flow over consecutive frames + motion histograms."""
    paths = list_images(Path(in_dir))
    if len(paths) < 2:
        raise click.UsageError("need at least two frames")
    frames = [load_png(p) for p in paths]
    echo_config("flow", {"in": in_dir, "pairs": len(frames) - 1})
    flows = []
    for i in range(len(frames) - 1):
        fl = flow_mod.dense_flow(frames[i], frames[i + 1])
        flows.append(fl)
        if dump_dir:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            flow_mod.save_flow(fl, Path(dump_dir) / f"{i:06d}.flow")
    table = flow_mod.motion_histograms(flows)
    text = table.to_text()
    if out_path:
        Path(out_path).write_text(text)
    else:
        click.echo(text, nl=False)


@main.group()
def rvdt():
    """Recurrent video denoising transformer reference."""


def _load_model(config_path, weights_path=None, seed=0):
    from .model import ModelConfig, RVDT, init_weights, load_weights

    cfg = ModelConfig.load(resolve_config_path(config_path)) if config_path else ModelConfig()
    model = RVDT(cfg)
    if weights_path:
        load_weights(model, resolve_config_path(weights_path))
    else:
        init_weights(model, seed)
    return cfg, model


@rvdt.command("params")
@click.option("--config", "config_path", type=click.Path())
@handle_errors
def rvdt_params(config_path):
    """Print the exact learnable parameter count for a model config."""
    from .model import param_count, ModelConfig

    cfg = ModelConfig.load(resolve_config_path(config_path)) if config_path else ModelConfig()
    click.echo(json.dumps({"params": param_count(cfg)}))


@rvdt.command("run")
@click.option("--clip", "clip_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--weights", "weights_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path())
@click.option("--noise-level", type=float, help="Scalar noise map for non-blind models")
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def rvdt_run(clip_dir, out_dir, weights_path, config_path, noise_level, seed):
    """Forward a clip of PNG frames through the network."""
    import torch

    from .model import denoise_clip

    cfg, model = _load_model(config_path, weights_path, seed)
    frames = [load_png(p) for p in list_images(Path(clip_dir))]
    clip = torch.from_numpy(np.stack(frames).astype(np.float32)).permute(0, 3, 1, 2)
    echo_config(
        "rvdt run",
        {"clip": clip_dir, "out": out_dir, "weights": weights_path,
         "frames": len(frames), "seed": seed, "blind": cfg.blind},
    )
    level = None if noise_level is None else torch.tensor(noise_level)
    out = denoise_clip(model, clip, level)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = out.clamp(0, 1).permute(0, 2, 3, 1).numpy()
    for i, frame in enumerate(arr):
        save_png(np.floor(frame * 255.0 + 0.5).astype(np.uint8), out_dir / f"{i:06d}.png")


@rvdt.command("check")
@click.option("--config", "config_path", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def rvdt_check(config_path, seed):
    """Run the structural invariant suite on a small random model."""
    import torch

    from .model import (
        ModelConfig,
        RVDT,
        denoise_clip,
        init_weights,
        tie_directions,
        window_partition_3d,
        window_reverse_3d,
        zero_weights,
    )

    cfg = ModelConfig.load(resolve_config_path(config_path)) if config_path else ModelConfig()
    torch.manual_seed(seed)
    checks = []

    x = torch.randn(2, 2, cfg.base_channels, 16, 16)
    tokens = window_partition_3d(x, (2, cfg.window, cfg.window))
    back = window_reverse_3d(tokens, (2, cfg.window, cfg.window), 2, 16, 16)
    checks.append(("3d window inverse", torch.equal(back, x)))

    model = zero_weights(RVDT(cfg))
    clip = torch.rand(2, cfg.in_channels, 32, 32)
    out = denoise_clip(model, clip)
    checks.append(("zero-weight forward is zero", bool((out == 0).all())))

    model = init_weights(RVDT(cfg), seed)
    attn = model.spatial[0].attn
    t = torch.randn(3, cfg.window * cfg.window, cfg.base_channels)
    rows = attn.attention_weights(t).sum(dim=-1)
    checks.append(("softmax rows sum to 1", bool(torch.allclose(rows, torch.ones_like(rows), atol=1e-6))))

    clip = torch.rand(3, cfg.in_channels, 32, 32)
    out = denoise_clip(model, clip)
    checks.append(("finite forward", bool(torch.isfinite(out).all())))

    tie_directions(model)
    rev = denoise_clip(model, clip.flip(0)).flip(0)
    checks.append(("time-reversal covariance (tied)", torch.equal(rev, denoise_clip(model, clip))))

    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
