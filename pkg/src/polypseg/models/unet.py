"""Encoder-decoder segmentation networks.

``BackboneUNet`` pairs a registered encoder with a U-Net decoder: each of the
five decoder stages upsamples by 2 (nearest neighbour), concatenates the
encoder tap at the new resolution when one exists, and applies two
conv-BN-ReLU blocks. A 3x3 convolution and a sigmoid produce the
single-channel polyp probability map.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidInputSizeError, ShapeMismatchError, UnknownEncoderError
from .encoders import build_encoder, get_encoder_spec

DEFAULT_DECODER_CHANNELS = (256, 128, 64, 32, 16)
BASELINES = ("unet_baseline", "segnet_baseline")


def check_input_size(input_size) -> tuple[int, int]:
    w, h = (int(v) for v in input_size)
    if w <= 0 or h <= 0 or w % 32 or h % 32:
        raise InvalidInputSizeError(f"input size {w}x{h} must be positive multiples of 32")
    return w, h


def conv_bn_relu(in_ch: int, out_ch: int, batch_norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=not batch_norm)]
    if batch_norm:
        layers.append(nn.BatchNorm2d(out_ch))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


def double_conv(in_ch: int, out_ch: int, batch_norm: bool = True) -> nn.Sequential:
    return nn.Sequential(conv_bn_relu(in_ch, out_ch, batch_norm), conv_bn_relu(out_ch, out_ch, batch_norm))


class SegmentationNet(nn.Module):
    """Common surface: ``forward`` returns probabilities, ``logits`` the pre-sigmoid map."""

    def __init__(self, input_size):
        super().__init__()
        self.input_size = check_input_size(input_size)

    def _check(self, x: torch.Tensor):
        w, h = self.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != h or x.shape[3] != w:
            raise ShapeMismatchError(f"expected N x 3 x {h} x {w} input, got {tuple(x.shape)}")

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))

    @property
    def architecture(self) -> dict:
        raise NotImplementedError


class DecoderStage(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.skip_channels = skip_ch
        self.block = double_conv(in_ch + skip_ch, out_ch)

    def forward(self, x, skip=None):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.block(x)


class UNetDecoder(nn.Module):
    def __init__(self, tap_channels: Sequence[int], decoder_channels: Sequence[int] = DEFAULT_DECODER_CHANNELS):
        super().__init__()
        if len(decoder_channels) != 5 or any(c <= 0 for c in decoder_channels):
            raise ValueError("decoder_channels needs 5 positive widths")
        # taps ordered shallow -> deep; skips for stages 0..3 are taps 3..0
        skips = list(tap_channels[:-1])[::-1] + [0]
        in_chs = [tap_channels[-1]] + list(decoder_channels[:-1])
        self.stages = nn.ModuleList(
            DecoderStage(i, s, o) for i, s, o in zip(in_chs, skips, decoder_channels)
        )

    def forward(self, features):
        skips = list(features[:-1])[::-1] + [None]
        x = features[-1]
        for stage, skip in zip(self.stages, skips):
            x = stage(x, skip)
        return x


class BackboneUNet(SegmentationNet):
    def __init__(self, encoder_name: str, input_size, decoder_channels=DEFAULT_DECODER_CHANNELS,
                 pretrained: bool = False, weights_path=None):
        super().__init__(input_size)
        self.encoder_name = encoder_name
        self.decoder_channels = tuple(int(c) for c in decoder_channels)
        self.pretrained = bool(pretrained)
        self.encoder = build_encoder(encoder_name, pretrained=pretrained, weights_path=weights_path)
        self.decoder = UNetDecoder(self.encoder.spec.tap_channels, self.decoder_channels)
        self.head = nn.Conv2d(self.decoder_channels[-1], 1, 3, padding=1)

    @property
    def spec(self):
        return self.encoder.spec

    def logits(self, x):
        self._check(x)
        return self.head(self.decoder(self.encoder(x)))

    @property
    def architecture(self) -> dict:
        return {
            "name": f"unet_{self.encoder_name}",
            "kind": "backbone_unet",
            "encoder": self.encoder_name,
            "decoder_channels": list(self.decoder_channels),
            "input_size": list(self.input_size),
            "skip_concatenations": 4,
        }

    def freeze_encoder(self, frozen: bool = True):
        for p in self.encoder.parameters():
            p.requires_grad_(not frozen)


class UNetBaseline(SegmentationNet):
    """Symmetric U-Net: double-conv + max-pool contraction, up-conv + concat expansion.

    Convolutions are zero-padded so the output matches the input size.
    """

    def __init__(self, input_size, base_channels: int = 64, depth: int = 4, batch_norm: bool = True):
        super().__init__(input_size)
        if depth < 1 or depth > 5:
            raise ValueError("depth must be in 1..5")
        self.base_channels, self.depth, self.batch_norm = int(base_channels), int(depth), bool(batch_norm)
        widths = [base_channels * 2**i for i in range(depth + 1)]
        self.down = nn.ModuleList()
        in_ch = 3
        for w in widths[:-1]:
            self.down.append(double_conv(in_ch, w, batch_norm))
            in_ch = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = double_conv(widths[-2], widths[-1], batch_norm)
        self.up = nn.ModuleList()
        self.up_conv = nn.ModuleList()
        for w_hi, w_lo in zip(widths[::-1][:-1], widths[::-1][1:]):
            self.up.append(nn.ConvTranspose2d(w_hi, w_lo, 2, stride=2))
            self.up_conv.append(double_conv(2 * w_lo, w_lo, batch_norm))
        self.head = nn.Conv2d(widths[0], 1, 1)

    def logits(self, x):
        self._check(x)
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, conv, skip in zip(self.up, self.up_conv, reversed(skips)):
            x = conv(torch.cat([up(x), skip], dim=1))
        return self.head(x)

    @property
    def architecture(self) -> dict:
        return {
            "name": "unet_baseline",
            "kind": "unet_baseline",
            "encoder": "unet_baseline",
            "decoder_channels": [self.base_channels * 2**i for i in reversed(range(self.depth))],
            "input_size": list(self.input_size),
            "skip_concatenations": self.depth,
            "base_channels": self.base_channels,
            "depth": self.depth,
            "batch_norm": self.batch_norm,
        }


class SegNetBaseline(SegmentationNet):
    """VGG16-layout encoder; decoder unpools with the stored max-pool indices.

    No encoder features are concatenated into the decoder.
    """

    STAGE_CONVS = (2, 2, 3, 3, 3)

    def __init__(self, input_size, base_channels: int = 64, batch_norm: bool = True):
        super().__init__(input_size)
        self.base_channels, self.batch_norm = int(base_channels), bool(batch_norm)
        widths = [base_channels, base_channels * 2, base_channels * 4, base_channels * 8, base_channels * 8]
        self.enc = nn.ModuleList()
        in_ch = 3
        for n, w in zip(self.STAGE_CONVS, widths):
            layers = [conv_bn_relu(in_ch, w, batch_norm)] + [conv_bn_relu(w, w, batch_norm) for _ in range(n - 1)]
            self.enc.append(nn.Sequential(*layers))
            in_ch = w
        self.pool = nn.MaxPool2d(2, stride=2, return_indices=True)
        self.unpool = nn.MaxUnpool2d(2, stride=2)
        self.dec = nn.ModuleList()
        out_widths = widths[::-1][1:] + [base_channels]
        for n, w_in, w_out in zip(self.STAGE_CONVS[::-1], widths[::-1], out_widths):
            layers = [conv_bn_relu(w_in, w_in, batch_norm) for _ in range(n - 1)]
            layers.append(conv_bn_relu(w_in, w_out, batch_norm))
            self.dec.append(nn.Sequential(*layers))
        self.head = nn.Conv2d(base_channels, 1, 3, padding=1)

    def logits(self, x):
        self._check(x)
        indices, sizes = [], []
        for block in self.enc:
            x = block(x)
            sizes.append(x.shape)
            x, idx = self.pool(x)
            indices.append(idx)
        for block, idx, size in zip(self.dec, reversed(indices), reversed(sizes)):
            x = block(self.unpool(x, idx, output_size=size))
        return self.head(x)

    @property
    def architecture(self) -> dict:
        return {
            "name": "segnet_baseline",
            "kind": "segnet_baseline",
            "encoder": "segnet_baseline",
            "decoder_channels": [self.base_channels * m for m in (8, 4, 2, 1, 1)],
            "input_size": list(self.input_size),
            "skip_concatenations": 0,
            "unpooling": "max_indices",
            "base_channels": self.base_channels,
            "batch_norm": self.batch_norm,
        }


def _seeded(seed: int, fn):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return fn()


def build_baseline(name: str, input_size, seed: int = 0, **kwargs) -> SegmentationNet:
    check_input_size(input_size)
    if name == "unet_baseline":
        return _seeded(seed, lambda: UNetBaseline(input_size, **kwargs))
    if name == "segnet_baseline":
        return _seeded(seed, lambda: SegNetBaseline(input_size, **kwargs))
    raise UnknownEncoderError(f"unknown baseline {name!r}; expected one of {BASELINES}")


def build_model(encoder_name: str, input_size=(512, 512), pretrained: bool = False, seed: int = 0,
                decoder_channels=DEFAULT_DECODER_CHANNELS, weights_path=None,
                freeze_encoder: bool = False, **baseline_kwargs) -> SegmentationNet:
    """Build a U-Net around ``encoder_name`` (or one of the two baselines).

    Parameters not taken from pretrained weights are initialized from
    ``seed`` without disturbing the global torch RNG.
    """
    if encoder_name in BASELINES:
        return build_baseline(encoder_name, input_size, seed=seed, **baseline_kwargs)
    get_encoder_spec(encoder_name)
    check_input_size(input_size)
    model = _seeded(
        seed,
        lambda: BackboneUNet(encoder_name, input_size, decoder_channels, pretrained, weights_path),
    )
    if freeze_encoder:
        model.freeze_encoder()
    return model


def build_from_architecture(arch: dict, seed: int = 0) -> SegmentationNet:
    kind = arch.get("kind")
    size = tuple(arch["input_size"])
    if kind == "backbone_unet":
        return build_model(arch["encoder"], size, seed=seed, decoder_channels=arch["decoder_channels"])
    if kind == "unet_baseline":
        return build_baseline("unet_baseline", size, seed=seed, base_channels=arch["base_channels"],
                              depth=arch["depth"], batch_norm=arch["batch_norm"])
    if kind == "segnet_baseline":
        return build_baseline("segnet_baseline", size, seed=seed, base_channels=arch["base_channels"],
                              batch_norm=arch["batch_norm"])
    raise UnknownEncoderError(f"unknown architecture kind {kind!r}")


def to_tensor(batch, dtype=torch.float32) -> torch.Tensor:
    """N x H x W x 3 array or tensor -> N x 3 x H x W tensor."""
    t = torch.as_tensor(np.asarray(batch) if not isinstance(batch, torch.Tensor) else batch)
    if t.ndim != 4 or t.shape[-1] != 3:
        raise ShapeMismatchError(f"expected N x H x W x 3 batch, got {tuple(t.shape)}")
    return t.permute(0, 3, 1, 2).to(dtype)


def forward(model: SegmentationNet, batch, train: bool = False):
    """Per-pixel polyp probabilities for an ``N x H x W x 3`` batch.

    Returns ``N x H x W x 1`` in the same container type as ``batch`` (numpy
    array or tensor). Evaluation mode runs without autograd; ``train=True``
    keeps the graph so the result can be differentiated.
    """
    dtype = next(model.parameters()).dtype
    x = to_tensor(batch, dtype)
    was_training = model.training
    model.train(train)
    try:
        if train:
            out = model(x)
        else:
            with torch.no_grad():
                out = model(x)
    finally:
        model.train(was_training)
    out = out.permute(0, 2, 3, 1)
    if isinstance(batch, torch.Tensor):
        return out
    return out.detach().cpu().numpy()
