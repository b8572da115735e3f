"""Windowed attention primitives and the channel-spatial attention MLP."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError


def window_partition_2d(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, C, H, W) -> (B * H/w * W/w, w*w, C) tokens; w must divide H and W."""
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"window {window} does not divide {h}x{w}")
    x = x.view(b, c, h // window, window, w // window, window)
    x = x.permute(0, 2, 4, 3, 5, 1).contiguous()
    return x.view(-1, window * window, c)


def window_reverse_2d(tokens: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Exact inverse of :func:`window_partition_2d`."""
    n_win = (h // window) * (w // window)
    b = tokens.shape[0] // n_win
    c = tokens.shape[2]
    x = tokens.view(b, h // window, w // window, window, window, c)
    x = x.permute(0, 5, 1, 3, 2, 4).contiguous()
    return x.view(b, c, h, w)


def window_partition_3d(x: torch.Tensor, window: tuple[int, int, int]) -> torch.Tensor:
    """(B, T, C, H, W) -> (B * T/t * H/a * W/b, t*a*b, C) tokens."""
    t, a, bb = window
    b, tt, c, h, w = x.shape
    if tt % t or h % a or w % bb:
        raise ShapeError(f"window {window} does not divide {tt}x{h}x{w}")
    x = x.view(b, tt // t, t, c, h // a, a, w // bb, bb)
    x = x.permute(0, 1, 4, 6, 2, 5, 7, 3).contiguous()
    return x.view(-1, t * a * bb, c)


def window_reverse_3d(
    tokens: torch.Tensor, window: tuple[int, int, int], t_total: int, h: int, w: int
) -> torch.Tensor:
    """Exact inverse of :func:`window_partition_3d`."""
    t, a, bb = window
    n_win = (t_total // t) * (h // a) * (w // bb)
    b = tokens.shape[0] // n_win
    c = tokens.shape[2]
    x = tokens.view(b, t_total // t, h // a, w // bb, t, a, bb, c)
    x = x.permute(0, 1, 4, 7, 2, 5, 3, 6).contiguous()
    return x.view(b, t_total, c, h, w)


def _relative_position_index(window: tuple[int, ...]) -> torch.Tensor:
    """Pairwise relative-offset index into the flattened bias table."""
    coords = torch.stack(
        torch.meshgrid(*[torch.arange(s) for s in window], indexing="ij")
    )  # (ndim, *window)
    flat = coords.flatten(1)  # (ndim, N)
    rel = flat[:, :, None] - flat[:, None, :]  # (ndim, N, N)
    rel = rel.permute(1, 2, 0).contiguous()
    strides = []
    stride = 1
    for s in reversed(window):
        strides.append(stride)
        stride *= 2 * s - 1
    strides = list(reversed(strides))
    index = torch.zeros(rel.shape[:2], dtype=torch.long)
    for dim, s in enumerate(window):
        index += (rel[..., dim] + s - 1) * strides[dim]
    return index


class WindowAttention(nn.Module):
    """Multi-head attention over window tokens with relative position bias.

    Self-attention by default; pass separate key/value tokens for the
    cross-attention used by the merging layer.
    """

    def __init__(self, dim: int, num_heads: int, window: tuple[int, ...]):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"dim {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.window = tuple(window)
        self.head_dim = dim // num_heads
        self.scale = self.head_dim**-0.5
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        table_size = 1
        for s in self.window:
            table_size *= 2 * s - 1
        self.relative_position_bias_table = nn.Parameter(torch.zeros(table_size, num_heads))
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)
        self.register_buffer("relative_position_index", _relative_position_index(self.window))

    def attention_bias(self) -> torch.Tensor:
        """(heads, N, N) relative position bias for one window."""
        n = self.relative_position_index.shape[0]
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        return bias.view(n, n, self.num_heads).permute(2, 0, 1).contiguous()

    def attention_weights(
        self, q_tokens: torch.Tensor, kv_tokens: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Post-softmax attention matrix, shape (B_, heads, N, N)."""
        kv_tokens = q_tokens if kv_tokens is None else kv_tokens
        b, n, _ = q_tokens.shape
        q = self.w_q(q_tokens).view(b, n, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.w_k(kv_tokens).view(b, -1, self.num_heads, self.head_dim).transpose(1, 2)
        scores = (q * self.scale) @ k.transpose(-2, -1) + self.attention_bias()[None]
        return scores.softmax(dim=-1)

    def forward(
        self, q_tokens: torch.Tensor, kv_tokens: torch.Tensor | None = None
    ) -> torch.Tensor:
        kv_tokens = q_tokens if kv_tokens is None else kv_tokens
        b, n, _ = q_tokens.shape
        attn = self.attention_weights(q_tokens, kv_tokens)
        v = self.w_v(kv_tokens).view(b, -1, self.num_heads, self.head_dim).transpose(1, 2)
        out = (attn @ v).transpose(1, 2).reshape(b, n, self.dim)
        return self.proj(out)


class SpatialGate(nn.Module):
    """Sigmoid map over spatial positions, shape (B, 1, h, w)."""

    def __init__(self, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def map(self, x: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.map(x)


class ChannelGate(nn.Module):
    """Sigmoid map over channels, shape (B, C, 1, 1)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def map(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.map(x)


class JointGate(nn.Module):
    """Sigmoid map over channels and positions jointly, shape (B, C, h, w)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 1)

    def map(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.map(x)


class CsaMlp(nn.Module):
    """Feed-forward block: MLP for long range, gated convolutions for local.

    Token input (B_, N, C) with N = t * h * w; the expanded features are
    reshaped to (B_ * t, hidden, h, w) maps for the attention-gated
    convolutional branch, then flattened back. The final projection carries
    the residual: out = M2(...) + z.
    """

    def __init__(self, dim: int, ratio: int = 2, temporal: int = 1):
        super().__init__()
        self.dim = dim
        self.temporal = temporal
        hidden = dim * ratio
        self.hidden = hidden
        self.norm = nn.LayerNorm(dim)
        self.m1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.sa = SpatialGate()
        self.ca = ChannelGate(hidden)
        self.fuse = nn.Conv2d(2 * hidden, hidden, 3, padding=1)
        self.sca = JointGate(hidden)
        self.m2 = nn.Linear(hidden, dim)

    def forward(self, z: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        b, n, c = z.shape
        h, w = hw
        if n != self.temporal * h * w:
            raise ShapeError(f"{n} tokens inconsistent with {self.temporal}x{h}x{w}")
        zb = self.act(self.m1(self.norm(z)))
        maps = zb.view(b, self.temporal, h, w, self.hidden)
        maps = maps.permute(0, 1, 4, 2, 3).reshape(b * self.temporal, self.hidden, h, w)
        local = self.fuse(torch.cat([self.sa(maps), self.ca(maps)], dim=1)) + maps
        local = self.sca(local) + maps
        flat = local.view(b, self.temporal, self.hidden, h, w)
        flat = flat.permute(0, 1, 3, 4, 2).reshape(b, n, self.hidden)
        return self.m2(flat) + z


class PlainMlp(nn.Module):
    """Standard two-layer feed-forward block (the CSA-MLP ablation)."""

    def __init__(self, dim: int, ratio: int = 2, temporal: int = 1):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.m1 = nn.Linear(dim, dim * ratio)
        self.act = nn.GELU()
        self.m2 = nn.Linear(dim * ratio, dim)

    def forward(self, z: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        return self.m2(self.act(self.m1(self.norm(z)))) + z


def make_mlp(dim: int, ratio: int, temporal: int, csa: bool) -> nn.Module:
    return CsaMlp(dim, ratio, temporal) if csa else PlainMlp(dim, ratio, temporal)
