"""Recurrent video denoising transformer: forward-pass reference network.

Per frame: CNN encoder (shallow UNet + two /2 downsamplings) -> spatial
transformer blocks -> bi-directional temporal transformer blocks
(transmission layers with joint 3D-window self-attention, then a merging
layer with 2D-window cross-attention) -> pixel-shuffle decoder.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError, ShapeError
from .blocks import (
    WindowAttention,
    make_mlp,
    window_partition_2d,
    window_partition_3d,
    window_reverse_2d,
    window_reverse_3d,
)


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults land near the 2.487M budget."""

    in_channels: int = 3  # 3 for sRGB clips, 4 for packed RAW
    base_channels: int = 48
    temporal_layers: int = 4  # N: N-1 transmission + 1 merging, per direction
    window: int = 8
    heads: int = 4
    mlp_ratio: int = 2
    spatial_blocks: int = 3
    encoder_width: int = 24
    csa_mlp: bool = True
    blind: bool = True  # non-blind adds a noise-level input channel

    def __post_init__(self):
        if self.temporal_layers < 2:
            raise ConfigurationError("temporal_layers must be >= 2")
        if self.base_channels % self.heads:
            raise ConfigurationError("base_channels must be divisible by heads")

    @property
    def model_in_channels(self) -> int:
        return self.in_channels + (0 if self.blind else 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: Path | str) -> "ModelConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json() + "\n")


class ShallowUnet(nn.Module):
    """Two-scale UNet with a concat skip; resolution preserving."""

    def __init__(self, in_ch: int, width: int):
        super().__init__()
        self.conv_in = nn.Conv2d(in_ch, width, 3, padding=1)
        self.down = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(2 * width, 2 * width, 3, padding=1)
        self.up = nn.Conv2d(2 * width, width, 3, padding=1)
        self.merge = nn.Conv2d(2 * width, width, 3, padding=1)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e = self.act(self.conv_in(x))
        d = self.act(self.mid(self.act(self.down(e))))
        u = self.act(self.up(F.interpolate(d, scale_factor=2, mode="nearest")))
        return self.act(self.merge(torch.cat([e, u], dim=1)))


class Encoder(nn.Module):
    """Shallow UNet followed by two stride-2 convolutions (total /4)."""

    def __init__(self, in_ch: int, width: int, out_ch: int):
        super().__init__()
        self.unet = ShallowUnet(in_ch, width)
        self.down1 = nn.Conv2d(width, 2 * width, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(2 * width, out_ch, 3, stride=2, padding=1)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ShapeError("encoder input extents must be divisible by 4")
        y = self.unet(x)
        y = self.act(self.down1(y))
        return self.act(self.down2(y))


class SpatialBlock(nn.Module):
    """2D-windowed self-attention block with a feed-forward residual."""

    def __init__(self, dim: int, window: int, heads: int, ratio: int, csa: bool):
        super().__init__()
        self.window = window
        self.norm = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, (window, window))
        self.mlp = make_mlp(dim, ratio, temporal=1, csa=csa)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        tokens = window_partition_2d(x, self.window)
        tokens = tokens + self.attn(self.norm(tokens))
        tokens = self.mlp(tokens, (self.window, self.window))
        return window_reverse_2d(tokens, self.window, h, w)


class TransmissionLayer(nn.Module):
    """Joint self-attention over a (current, propagated) feature pair.

    The pair is stacked on a temporal axis of 2, partitioned into 3D
    windows spanning both frames, updated with attention and feed-forward
    residuals, and split back.
    """

    def __init__(self, dim: int, window: int, heads: int, ratio: int, csa: bool):
        super().__init__()
        self.window3d = (2, window, window)
        self.norm = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, self.window3d)
        self.mlp = make_mlp(dim, ratio, temporal=2, csa=csa)

    def forward(
        self, current: torch.Tensor, propagated: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if current.shape != propagated.shape:
            raise ShapeError("feature pair shapes must match")
        h, w = current.shape[-2:]
        x = torch.stack([current, propagated], dim=1)  # (B, 2, C, H, W)
        tokens = window_partition_3d(x, self.window3d)
        tokens = tokens + self.attn(self.norm(tokens))
        tokens = self.mlp(tokens, (self.window3d[1], self.window3d[2]))
        x = window_reverse_3d(tokens, self.window3d, 2, h, w)
        return x[:, 0], x[:, 1]


class MergingLayer(nn.Module):
    """Cross-attention merge: queries from the current frame, keys/values
    from the propagated feature, residual onto the current frame."""

    def __init__(self, dim: int, window: int, heads: int, ratio: int, csa: bool):
        super().__init__()
        self.window = window
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, (window, window))
        self.mlp = make_mlp(dim, ratio, temporal=1, csa=csa)

    def forward(self, current: torch.Tensor, propagated: torch.Tensor) -> torch.Tensor:
        if current.shape != propagated.shape:
            raise ShapeError("feature pair shapes must match")
        h, w = current.shape[-2:]
        m = window_partition_2d(current, self.window)
        n = window_partition_2d(propagated, self.window)
        m = m + self.attn(self.norm_q(m), self.norm_kv(n))
        m = self.mlp(m, (self.window, self.window))
        return window_reverse_2d(m, self.window, h, w)


class TemporalTransformer(nn.Module):
    """One direction's temporal blocks: N-1 transmission layers + merging."""

    def __init__(self, dim: int, n_layers: int, window: int, heads: int, ratio: int, csa: bool):
        super().__init__()
        self.transmission = nn.ModuleList(
            TransmissionLayer(dim, window, heads, ratio, csa) for _ in range(n_layers - 1)
        )
        self.merging = MergingLayer(dim, window, heads, ratio, csa)

    def forward(self, current: torch.Tensor, propagated: torch.Tensor) -> torch.Tensor:
        for layer in self.transmission:
            current, propagated = layer(current, propagated)
        return self.merging(current, propagated)


class Decoder(nn.Module):
    """Direction fusion plus two pixel-shuffle x2 upsampling stages.

    The two direction features are fused by parallel convolutions summed
    (equivalent to a convolution over their concatenation), which keeps the
    fusion exactly symmetric when the two kernels are tied.
    """

    def __init__(self, dim: int, out_ch: int):
        super().__init__()
        # Both fusion convs are biasless so the sum is exactly commutative
        # when the kernels are tied (bit-exact time-reversal symmetry).
        self.fuse_f = nn.Conv2d(dim, dim, 3, padding=1, bias=False)
        self.fuse_b = nn.Conv2d(dim, dim, 3, padding=1, bias=False)
        self.up1 = nn.Conv2d(dim, 4 * dim, 3, padding=1)
        self.up2 = nn.Conv2d(dim, 4 * (dim // 2), 3, padding=1)
        self.conv_out = nn.Conv2d(dim // 2, out_ch, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, feat_f: torch.Tensor, feat_b: torch.Tensor) -> torch.Tensor:
        y = self.act(self.fuse_f(feat_f) + self.fuse_b(feat_b))
        y = self.act(self.shuffle(self.up1(y)))
        y = self.act(self.shuffle(self.up2(y)))
        return self.conv_out(y)


def pixel_shuffle(x: torch.Tensor, r: int = 2) -> torch.Tensor:
    """Channel-to-space rearrangement: (B, r^2*C, h, w) -> (B, C, r*h, r*w)."""
    if x.shape[1] % (r * r):
        raise ShapeError(f"channel count {x.shape[1]} not divisible by {r * r}")
    return F.pixel_shuffle(x, r)


class RVDT(nn.Module):
    """Forward-pass reference of the full recurrent denoising network."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.encoder = Encoder(cfg.model_in_channels, cfg.encoder_width, c)
        self.spatial = nn.ModuleList(
            SpatialBlock(c, cfg.window, cfg.heads, cfg.mlp_ratio, cfg.csa_mlp)
            for _ in range(cfg.spatial_blocks)
        )
        args = (c, cfg.temporal_layers, cfg.window, cfg.heads, cfg.mlp_ratio, cfg.csa_mlp)
        self.forward_temporal = TemporalTransformer(*args)
        self.backward_temporal = TemporalTransformer(*args)
        self.decoder = Decoder(c, cfg.in_channels)

    # -- per-stage entry points (useful for structural checks) -------------

    def encode_spatial(self, frame: torch.Tensor) -> torch.Tensor:
        """CNN features of one frame batch: (B, C_in, H/4, W/4)."""
        return self.encoder(frame)

    def spatial_blocks(self, feat: torch.Tensor) -> torch.Tensor:
        for block in self.spatial:
            feat = block(feat)
        return feat

    def temporal_pass(
        self, feats: list[torch.Tensor], direction: str = "F"
    ) -> list[torch.Tensor]:
        """Sequential propagation against a zero boundary state.

        The backward direction runs the same recursion over the reversed
        sequence, so tied weights make time reversal an exact symmetry.
        """
        if not feats:
            raise ShapeError("empty clip")
        if direction == "F":
            blocks = self.forward_temporal
            ordered = feats
        elif direction == "B":
            blocks = self.backward_temporal
            ordered = list(reversed(feats))
        else:
            raise ConfigurationError(f"direction must be 'F' or 'B', got {direction!r}")
        state = torch.zeros_like(ordered[0])
        outputs = []
        for feat in ordered:
            state = blocks(feat, state)
            outputs.append(state)
        if direction == "B":
            outputs.reverse()
        return outputs

    def decode(self, feat_f: torch.Tensor, feat_b: torch.Tensor) -> torch.Tensor:
        return self.decoder(feat_f, feat_b)

    def _pad(self, clip: torch.Tensor) -> tuple[torch.Tensor, int, int]:
        mult = 4 * self.cfg.window
        h, w = clip.shape[-2:]
        ph = (mult - h % mult) % mult
        pw = (mult - w % mult) % mult
        if ph or pw:
            clip = F.pad(clip, (0, pw, 0, ph), mode="reflect")
        return clip, h, w

    def forward(self, clip: torch.Tensor, noise_level: torch.Tensor | None = None) -> torch.Tensor:
        """Denoise a clip of shape (T, C, H, W); returns the same shape.

        Non-blind models require ``noise_level``: a scalar tensor
        (broadcast) or a (T, 1, H, W) map appended as an input channel.
        """
        if clip.ndim != 4:
            raise ShapeError(f"expected (T, C, H, W), got {tuple(clip.shape)}")
        if clip.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"expected {self.cfg.in_channels} input channels, got {clip.shape[1]}"
            )
        if not self.cfg.blind:
            if noise_level is None:
                raise ConfigurationError("non-blind model requires a noise level input")
            level = torch.as_tensor(noise_level, dtype=clip.dtype)
            if level.ndim == 0:
                level = level.expand(clip.shape[0], 1, *clip.shape[-2:])
            clip = torch.cat([clip, level], dim=1)
        elif noise_level is not None:
            raise ConfigurationError("blind model does not accept a noise level input")

        clip, h, w = self._pad(clip)
        feats = [self.spatial_blocks(self.encode_spatial(frame[None])) for frame in clip]
        feats_f = self.temporal_pass(feats, "F")
        feats_b = self.temporal_pass(feats, "B")
        frames = [self.decode(ff, fb)[0] for ff, fb in zip(feats_f, feats_b)]
        out = torch.stack(frames)
        return out[..., :h, :w]


def denoise_clip(
    model: RVDT, clip: torch.Tensor, noise_level: torch.Tensor | None = None
) -> torch.Tensor:
    """Inference wrapper: eval mode, no autograd."""
    model.eval()
    with torch.no_grad():
        return model(clip, noise_level)


def param_count(cfg: ModelConfig) -> int:
    """Exact number of learnable scalars implied by a configuration."""
    model = RVDT(cfg)
    return sum(p.numel() for p in model.parameters())
