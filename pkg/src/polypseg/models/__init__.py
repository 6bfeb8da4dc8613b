"""Segmentation networks: encoder registry, U-Net decoder, baselines, checkpoints."""
from .checkpoint import ModelCheckpoint, check_architecture, load_checkpoint, read_checkpoint, save_checkpoint
from .encoders import EncoderSpec, build_encoder, encoder_names, get_encoder_spec, list_encoders
from .unet import (
    BASELINES,
    DEFAULT_DECODER_CHANNELS,
    BackboneUNet,
    SegmentationNet,
    SegNetBaseline,
    UNetBaseline,
    build_baseline,
    build_from_architecture,
    build_model,
    forward,
)

__all__ = [
    "BASELINES", "DEFAULT_DECODER_CHANNELS", "BackboneUNet", "EncoderSpec", "ModelCheckpoint",
    "SegNetBaseline", "SegmentationNet", "UNetBaseline", "build_baseline", "build_encoder",
    "build_from_architecture", "build_model", "check_architecture", "encoder_names", "forward",
    "get_encoder_spec", "list_encoders", "load_checkpoint", "read_checkpoint", "save_checkpoint",
]
