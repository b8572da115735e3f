"""WeightSet serialization and weight manipulation helpers.

File format: ``<stem>.manifest`` (plain text: name, shape, byte offset per
line) plus ``<stem>.bin`` (all tensors flattened, little-endian float32,
in manifest order).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigurationError, ShapeError

MANIFEST_EXT = ".manifest"
BLOB_EXT = ".bin"


def _paths(path: Path | str) -> tuple[Path, Path]:
    stem = Path(path)
    if stem.suffix in (MANIFEST_EXT, BLOB_EXT):
        stem = stem.with_suffix("")
    return stem.with_suffix(MANIFEST_EXT), stem.with_suffix(BLOB_EXT)


def save_weights(model: nn.Module, path: Path | str) -> Path:
    """Write the model's parameters; returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    lines = []
    offset = 0
    chunks = []
    for name, param in model.named_parameters():
        arr = param.detach().cpu().numpy().astype("<f4")
        shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {shape} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest_path.write_text("\n".join(lines) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path


def read_manifest(path: Path | str) -> list[tuple[str, tuple[int, ...], int]]:
    manifest_path, _ = _paths(path)
    entries = []
    for line in manifest_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, shape_s, offset_s = line.split()
        shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split("x"))
        entries.append((name, shape, int(offset_s)))
    return entries


def saved_element_count(path: Path | str) -> int:
    """Number of float32 elements in the blob (byte length / 4)."""
    _, blob_path = _paths(path)
    nbytes = blob_path.stat().st_size
    if nbytes % 4:
        raise ConfigurationError("weight blob length is not a multiple of 4 bytes")
    return nbytes // 4


def load_weights(model: nn.Module, path: Path | str) -> None:
    """Load a saved WeightSet into a model with matching parameter names/shapes."""
    manifest_path, blob_path = _paths(path)
    blob = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    entries = {name: (shape, offset) for name, shape, offset in read_manifest(manifest_path)}
    params = dict(model.named_parameters())
    missing = set(params) - set(entries)
    extra = set(entries) - set(params)
    if missing or extra:
        raise ConfigurationError(
            f"weight manifest mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        )
    with torch.no_grad():
        for name, param in params.items():
            shape, offset = entries[name]
            if tuple(param.shape) != shape:
                raise ShapeError(f"{name}: saved shape {shape} != model shape {tuple(param.shape)}")
            count = int(np.prod(shape)) if shape else 1
            values = blob[offset // 4 : offset // 4 + count].reshape(shape)
            param.copy_(torch.from_numpy(values.copy()))


def zero_weights(model: nn.Module) -> nn.Module:
    """Zero every projection, convolution, MLP, and bias-table parameter.

    Layer-norm affine parameters keep their identity defaults so residual
    paths stay exact.
    """
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                module.weight.zero_()
                if module.bias is not None:
                    module.bias.zero_()
        for name, param in model.named_parameters():
            if "relative_position_bias_table" in name:
                param.zero_()
    return model


def init_weights(model: nn.Module, seed: int = 0) -> nn.Module:
    """Deterministic scaled-uniform (fan-in) initialization, for testing only."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                fan_in = module.weight.shape[1:].numel()
                bound = 1.0 / math.sqrt(max(fan_in, 1))
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=gen)
        for name, param in model.named_parameters():
            if "relative_position_bias_table" in name:
                param.normal_(0.0, 0.02, generator=gen)
    return model


def tie_directions(model) -> nn.Module:
    """Copy forward temporal and fusion weights onto their backward twins."""
    model.backward_temporal.load_state_dict(model.forward_temporal.state_dict())
    with torch.no_grad():
        model.decoder.fuse_b.weight.copy_(model.decoder.fuse_f.weight)
    return model
