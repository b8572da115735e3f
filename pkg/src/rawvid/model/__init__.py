from .blocks import (
    ChannelGate,
    CsaMlp,
    JointGate,
    PlainMlp,
    SpatialGate,
    WindowAttention,
    window_partition_2d,
    window_partition_3d,
    window_reverse_2d,
    window_reverse_3d,
)
from .net import (
    RVDT,
    Decoder,
    Encoder,
    MergingLayer,
    ModelConfig,
    SpatialBlock,
    TemporalTransformer,
    TransmissionLayer,
    denoise_clip,
    param_count,
    pixel_shuffle,
)
from .weights import (
    init_weights,
    load_weights,
    save_weights,
    saved_element_count,
    tie_directions,
    zero_weights,
)

__all__ = [
    "ChannelGate",
    "CsaMlp",
    "JointGate",
    "PlainMlp",
    "SpatialGate",
    "WindowAttention",
    "window_partition_2d",
    "window_partition_3d",
    "window_reverse_2d",
    "window_reverse_3d",
    "RVDT",
    "Decoder",
    "Encoder",
    "MergingLayer",
    "ModelConfig",
    "SpatialBlock",
    "TemporalTransformer",
    "TransmissionLayer",
    "denoise_clip",
    "param_count",
    "pixel_shuffle",
    "init_weights",
    "load_weights",
    "save_weights",
    "saved_element_count",
    "tie_directions",
    "zero_weights",
]
