"""Encoder backbones and their skip-connection taps.

Each encoder maps an ``N x 3 x H x W`` batch to five feature maps at output
strides 2, 4, 8, 16 and 32. A tap is the last activation produced at its
stride; the tap identifiers below name the backbone layer it comes from.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn
from torchvision import models as tv
from torchvision.models.resnet import Bottleneck, ResNet

from ..errors import PretrainedWeightsUnavailableError, UnknownEncoderError
from .inception import InceptionResNetV2Encoder, InceptionV3Encoder, inception_v3_trunk

TAP_STRIDES = (2, 4, 8, 16, 32)


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    family: str
    taps: tuple[str, ...]
    tap_channels: tuple[int, ...]
    pretrained_source: str = "imagenet"

    def __post_init__(self):
        if len(self.taps) != 5 or len(self.tap_channels) != 5:
            raise ValueError(f"{self.name}: expected 5 taps, got {len(self.taps)}")
        if any(c <= 0 for c in self.tap_channels):
            raise ValueError(f"{self.name}: tap channels must be positive")

    @property
    def strides(self) -> tuple[int, ...]:
        return TAP_STRIDES


# -- wrappers around torchvision trunks --------------------------------------


class ResNetEncoder(nn.Module):
    def __init__(self, net: ResNet):
        super().__init__()
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.maxpool = net.maxpool
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4

    def forward(self, x):
        s2 = self.stem(x)
        s4 = self.layer1(self.maxpool(s2))
        s8 = self.layer2(s4)
        s16 = self.layer3(s8)
        return [s2, s4, s8, s16, self.layer4(s16)]


class DenseNetEncoder(nn.Module):
    def __init__(self, net: tv.DenseNet):
        super().__init__()
        f = net.features
        self.stem = nn.Sequential(f.conv0, f.norm0, f.relu0)
        self.pool0 = f.pool0
        self.denseblock1, self.transition1 = f.denseblock1, f.transition1
        self.denseblock2, self.transition2 = f.denseblock2, f.transition2
        self.denseblock3, self.transition3 = f.denseblock3, f.transition3
        self.denseblock4, self.norm5 = f.denseblock4, f.norm5

    def forward(self, x):
        s2 = self.stem(x)
        s4 = self.denseblock1(self.pool0(s2))
        s8 = self.denseblock2(self.transition1(s4))
        s16 = self.denseblock3(self.transition2(s8))
        s32 = torch.relu(self.norm5(self.denseblock4(self.transition3(s16))))
        return [s2, s4, s8, s16, s32]


class VGGEncoder(nn.Module):
    # features indices: relu after conv2_2, conv3_3, conv4_3, conv5_3, then pool5
    CUTS = (9, 16, 23, 30, 31)

    def __init__(self, net: tv.VGG):
        super().__init__()
        layers = list(net.features.children())
        bounds = (0,) + self.CUTS
        self.stages = nn.ModuleList(nn.Sequential(*layers[a:b]) for a, b in zip(bounds, bounds[1:]))

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


# -- SE-ResNeXt ----------------------------------------------------------------


class SEModule(nn.Module):
    """Squeeze-and-excitation channel gate."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, channels // reduction, 1)
        self.relu = nn.ReLU(inplace=True)
        self.fc2 = nn.Conv2d(channels // reduction, channels, 1)

    def forward(self, x):
        w = x.mean(dim=(2, 3), keepdim=True)
        return x * torch.sigmoid(self.fc2(self.relu(self.fc1(w))))


class SEBottleneck(Bottleneck):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.se_module = SEModule(self.conv3.out_channels)

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(self.se_module(out) + identity)


def se_resnext(layers) -> ResNet:
    return ResNet(SEBottleneck, layers, groups=32, width_per_group=4)


# -- registry ----------------------------------------------------------------


@dataclass(frozen=True)
class _Entry:
    spec: EncoderSpec
    trunk: Callable[[], nn.Module]
    wrap: Callable[[nn.Module], nn.Module]
    torchvision_weights: str | None = None


_RESNET_TAPS = ("relu", "layer1", "layer2", "layer3", "layer4")
_DENSENET_TAPS = ("features.relu0", "features.denseblock1", "features.denseblock2",
                  "features.denseblock3", "features.norm5+relu")


def _identity(m):
    return m


_REGISTRY: dict[str, _Entry] = {}


def _register(entry: _Entry):
    _REGISTRY[entry.spec.name] = entry


_register(_Entry(EncoderSpec("resnet34", "resnet", _RESNET_TAPS, (64, 64, 128, 256, 512)),
                 lambda: tv.resnet34(), ResNetEncoder, "ResNet34_Weights"))
_register(_Entry(EncoderSpec("resnet50", "resnet", _RESNET_TAPS, (64, 256, 512, 1024, 2048)),
                 lambda: tv.resnet50(), ResNetEncoder, "ResNet50_Weights"))
_register(_Entry(EncoderSpec("resnet152", "resnet", _RESNET_TAPS, (64, 256, 512, 1024, 2048)),
                 lambda: tv.resnet152(), ResNetEncoder, "ResNet152_Weights"))
_register(_Entry(EncoderSpec("densenet121", "densenet", _DENSENET_TAPS, (64, 256, 512, 1024, 1024)),
                 lambda: tv.densenet121(), DenseNetEncoder, "DenseNet121_Weights"))
_register(_Entry(EncoderSpec("densenet169", "densenet", _DENSENET_TAPS, (64, 256, 512, 1280, 1664)),
                 lambda: tv.densenet169(), DenseNetEncoder, "DenseNet169_Weights"))
_register(_Entry(EncoderSpec("densenet201", "densenet", _DENSENET_TAPS, (64, 256, 512, 1792, 1920)),
                 lambda: tv.densenet201(), DenseNetEncoder, "DenseNet201_Weights"))
_register(_Entry(EncoderSpec("inceptionv3", "inception",
                             ("Conv2d_2b_3x3", "Conv2d_4a_3x3", "Mixed_5d", "Mixed_6e", "Mixed_7c"),
                             (64, 192, 288, 768, 2048)),
                 inception_v3_trunk, InceptionV3Encoder, "Inception_V3_Weights"))
_register(_Entry(EncoderSpec("inceptionresnetv2", "inception_resnet",
                             ("conv2d_2b", "conv2d_4a", "repeat", "repeat_1", "conv2d_7b"),
                             (64, 192, 320, 1088, 1536)),
                 InceptionResNetV2Encoder, _identity))
_register(_Entry(EncoderSpec("se_resnext50", "se_resnext", _RESNET_TAPS, (64, 256, 512, 1024, 2048)),
                 lambda: se_resnext([3, 4, 6, 3]), ResNetEncoder))
_register(_Entry(EncoderSpec("se_resnext101", "se_resnext", _RESNET_TAPS, (64, 256, 512, 1024, 2048)),
                 lambda: se_resnext([3, 4, 23, 3]), ResNetEncoder))
_register(_Entry(EncoderSpec("vgg16", "vgg",
                             ("features.8", "features.15", "features.22", "features.29", "features.30"),
                             (128, 256, 512, 512, 512)),
                 lambda: tv.vgg16(), VGGEncoder, "VGG16_Weights"))


def list_encoders() -> list[EncoderSpec]:
    return [entry.spec for entry in _REGISTRY.values()]


def encoder_names() -> list[str]:
    return list(_REGISTRY)


def get_encoder_spec(name: str) -> EncoderSpec:
    try:
        return _REGISTRY[name].spec
    except KeyError:
        raise UnknownEncoderError(f"unknown encoder {name!r}; registered: {', '.join(_REGISTRY)}") from None


def _load_pretrained(name: str, trunk: nn.Module, weights_path: str | Path | None):
    entry = _REGISTRY[name]
    if weights_path is not None:
        try:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError, EOFError) as exc:
            raise PretrainedWeightsUnavailableError(f"cannot read weights {weights_path}: {exc}") from exc
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
    elif entry.torchvision_weights is not None:
        try:
            weights = getattr(tv, entry.torchvision_weights).IMAGENET1K_V1
            state = weights.get_state_dict(progress=False)
        except Exception as exc:  # network, cache or hub failures
            raise PretrainedWeightsUnavailableError(
                f"ImageNet weights for {name} could not be fetched ({exc}); pass a weights file"
            ) from exc
    else:
        raise PretrainedWeightsUnavailableError(
            f"no bundled ImageNet weights for {name}; pass a weights file"
        )
    missing, unexpected = trunk.load_state_dict(state, strict=False)
    unexpected = [k for k in unexpected if not k.startswith(("AuxLogits.", "fc.", "classifier.", "last_linear."))]
    if missing or unexpected:
        raise PretrainedWeightsUnavailableError(
            f"weights for {name} do not match the backbone: missing={missing[:5]}, unexpected={unexpected[:5]}"
        )


def build_encoder(name: str, pretrained: bool = False, weights_path: str | Path | None = None) -> nn.Module:
    """Instantiate the encoder ``name``; parameters come from the current torch RNG.

    With ``pretrained`` the trunk is initialized from ``weights_path`` (a state
    dict of the canonical backbone) or, for torchvision backbones, the
    published ImageNet weights. Failure raises
    :class:`PretrainedWeightsUnavailableError`; there is no silent fallback.
    """
    get_encoder_spec(name)
    entry = _REGISTRY[name]
    trunk = entry.trunk()
    if pretrained:
        _load_pretrained(name, trunk, weights_path)
    encoder = entry.wrap(trunk)
    encoder.spec = entry.spec
    return encoder
