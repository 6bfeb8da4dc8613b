"""Inception-v3 and Inception-ResNet-v2 trunks with size-preserving padding.

The canonical stems use unpadded 3x3 convolutions and pools, which leaves
feature maps a few pixels short of ``input / stride``. Every spatial kernel
here is padded so a stride-2 stage maps ``H`` to exactly ``H / 2`` for even
``H``; taps then line up with the decoder without cropping. Parameter names
follow the canonical implementations so their state dicts load unchanged.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import inception as tv_inception


def _same_padding(kernel_size):
    if isinstance(kernel_size, int):
        return kernel_size // 2
    return tuple(k // 2 for k in kernel_size)


class SameBasicConv2d(tv_inception.BasicConv2d):
    """Conv-BN-ReLU whose padding defaults to ``kernel // 2``."""

    def __init__(self, in_channels, out_channels, **kwargs):
        kwargs.setdefault("padding", _same_padding(kwargs["kernel_size"]))
        super().__init__(in_channels, out_channels, **kwargs)


class _ReductionB(tv_inception.InceptionB):
    def __init__(self, in_channels, conv_block=None):
        super().__init__(in_channels, conv_block=conv_block or SameBasicConv2d)

    def _forward(self, x):
        branch3x3 = self.branch3x3(x)
        dbl = self.branch3x3dbl_3(self.branch3x3dbl_2(self.branch3x3dbl_1(x)))
        return [branch3x3, dbl, F.max_pool2d(x, kernel_size=3, stride=2, padding=1)]


class _ReductionD(tv_inception.InceptionD):
    def __init__(self, in_channels, conv_block=None):
        super().__init__(in_channels, conv_block=conv_block or SameBasicConv2d)

    def _forward(self, x):
        branch3x3 = self.branch3x3_2(self.branch3x3_1(x))
        b7 = self.branch7x7x3_1(x)
        b7 = self.branch7x7x3_4(self.branch7x7x3_3(self.branch7x7x3_2(b7)))
        return [branch3x3, b7, F.max_pool2d(x, kernel_size=3, stride=2, padding=1)]


def inception_v3_trunk() -> tv_inception.Inception3:
    net = tv_inception.Inception3(
        num_classes=1000,
        aux_logits=False,
        transform_input=False,
        init_weights=True,
        inception_blocks=[
            SameBasicConv2d,
            tv_inception.InceptionA,
            _ReductionB,
            tv_inception.InceptionC,
            _ReductionD,
            tv_inception.InceptionE,
            tv_inception.InceptionAux,
        ],
    )
    net.maxpool1 = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
    net.maxpool2 = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
    return net


class InceptionV3Encoder(nn.Module):
    """Five taps of Inception-v3 at strides 2, 4, 8, 16, 32."""

    def __init__(self, net: tv_inception.Inception3):
        super().__init__()
        self.stage1 = nn.Sequential(net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3)
        self.stage2 = nn.Sequential(net.maxpool1, net.Conv2d_3b_1x1, net.Conv2d_4a_3x3)
        self.stage3 = nn.Sequential(net.maxpool2, net.Mixed_5b, net.Mixed_5c, net.Mixed_5d)
        self.stage4 = nn.Sequential(net.Mixed_6a, net.Mixed_6b, net.Mixed_6c, net.Mixed_6d, net.Mixed_6e)
        self.stage5 = nn.Sequential(net.Mixed_7a, net.Mixed_7b, net.Mixed_7c)

    def forward(self, x):
        feats = []
        for stage in (self.stage1, self.stage2, self.stage3, self.stage4, self.stage5):
            x = stage(x)
            feats.append(x)
        return feats


# -- Inception-ResNet-v2 ----------------------------------------------------


class BasicConv2d(nn.Module):
    def __init__(self, in_planes, out_planes, kernel_size, stride=1, padding=None):
        super().__init__()
        if padding is None:
            padding = _same_padding(kernel_size)
        self.conv = nn.Conv2d(in_planes, out_planes, kernel_size, stride=stride, padding=padding, bias=False)
        self.bn = nn.BatchNorm2d(out_planes, eps=0.001)
        self.relu = nn.ReLU(inplace=False)

    def forward(self, x):
        return self.relu(self.bn(self.conv(x)))


class Mixed5b(nn.Module):
    def __init__(self):
        super().__init__()
        self.branch0 = BasicConv2d(192, 96, 1)
        self.branch1 = nn.Sequential(BasicConv2d(192, 48, 1), BasicConv2d(48, 64, 5))
        self.branch2 = nn.Sequential(BasicConv2d(192, 64, 1), BasicConv2d(64, 96, 3), BasicConv2d(96, 96, 3))
        self.branch3 = nn.Sequential(
            nn.AvgPool2d(3, stride=1, padding=1, count_include_pad=False), BasicConv2d(192, 64, 1)
        )

    def forward(self, x):
        return torch.cat([self.branch0(x), self.branch1(x), self.branch2(x), self.branch3(x)], 1)


class Block35(nn.Module):
    def __init__(self, scale=0.17):
        super().__init__()
        self.scale = scale
        self.branch0 = BasicConv2d(320, 32, 1)
        self.branch1 = nn.Sequential(BasicConv2d(320, 32, 1), BasicConv2d(32, 32, 3))
        self.branch2 = nn.Sequential(BasicConv2d(320, 32, 1), BasicConv2d(32, 48, 3), BasicConv2d(48, 64, 3))
        self.conv2d = nn.Conv2d(128, 320, 1)
        self.relu = nn.ReLU(inplace=False)

    def forward(self, x):
        out = torch.cat([self.branch0(x), self.branch1(x), self.branch2(x)], 1)
        return self.relu(x + self.scale * self.conv2d(out))


class Mixed6a(nn.Module):
    def __init__(self):
        super().__init__()
        self.branch0 = BasicConv2d(320, 384, 3, stride=2)
        self.branch1 = nn.Sequential(
            BasicConv2d(320, 256, 1), BasicConv2d(256, 256, 3), BasicConv2d(256, 384, 3, stride=2)
        )
        self.branch2 = nn.MaxPool2d(3, stride=2, padding=1)

    def forward(self, x):
        return torch.cat([self.branch0(x), self.branch1(x), self.branch2(x)], 1)


class Block17(nn.Module):
    def __init__(self, scale=0.10):
        super().__init__()
        self.scale = scale
        self.branch0 = BasicConv2d(1088, 192, 1)
        self.branch1 = nn.Sequential(
            BasicConv2d(1088, 128, 1), BasicConv2d(128, 160, (1, 7)), BasicConv2d(160, 192, (7, 1))
        )
        self.conv2d = nn.Conv2d(384, 1088, 1)
        self.relu = nn.ReLU(inplace=False)

    def forward(self, x):
        out = torch.cat([self.branch0(x), self.branch1(x)], 1)
        return self.relu(x + self.scale * self.conv2d(out))


class Mixed7a(nn.Module):
    def __init__(self):
        super().__init__()
        self.branch0 = nn.Sequential(BasicConv2d(1088, 256, 1), BasicConv2d(256, 384, 3, stride=2))
        self.branch1 = nn.Sequential(BasicConv2d(1088, 256, 1), BasicConv2d(256, 288, 3, stride=2))
        self.branch2 = nn.Sequential(
            BasicConv2d(1088, 256, 1), BasicConv2d(256, 288, 3), BasicConv2d(288, 320, 3, stride=2)
        )
        self.branch3 = nn.MaxPool2d(3, stride=2, padding=1)

    def forward(self, x):
        return torch.cat([self.branch0(x), self.branch1(x), self.branch2(x), self.branch3(x)], 1)


class Block8(nn.Module):
    def __init__(self, scale=0.20, no_relu=False):
        super().__init__()
        self.scale = scale
        self.branch0 = BasicConv2d(2080, 192, 1)
        self.branch1 = nn.Sequential(
            BasicConv2d(2080, 192, 1), BasicConv2d(192, 224, (1, 3)), BasicConv2d(224, 256, (3, 1))
        )
        self.conv2d = nn.Conv2d(448, 2080, 1)
        self.relu = None if no_relu else nn.ReLU(inplace=False)

    def forward(self, x):
        out = torch.cat([self.branch0(x), self.branch1(x)], 1)
        out = x + self.scale * self.conv2d(out)
        return out if self.relu is None else self.relu(out)


class InceptionResNetV2Encoder(nn.Module):
    """Inception-ResNet-v2 trunk returning taps at strides 2, 4, 8, 16, 32."""

    def __init__(self):
        super().__init__()
        self.conv2d_1a = BasicConv2d(3, 32, 3, stride=2)
        self.conv2d_2a = BasicConv2d(32, 32, 3)
        self.conv2d_2b = BasicConv2d(32, 64, 3)
        self.maxpool_3a = nn.MaxPool2d(3, stride=2, padding=1)
        self.conv2d_3b = BasicConv2d(64, 80, 1)
        self.conv2d_4a = BasicConv2d(80, 192, 3)
        self.maxpool_5a = nn.MaxPool2d(3, stride=2, padding=1)
        self.mixed_5b = Mixed5b()
        self.repeat = nn.Sequential(*[Block35(0.17) for _ in range(10)])
        self.mixed_6a = Mixed6a()
        self.repeat_1 = nn.Sequential(*[Block17(0.10) for _ in range(20)])
        self.mixed_7a = Mixed7a()
        self.repeat_2 = nn.Sequential(*[Block8(0.20) for _ in range(9)])
        self.block8 = Block8(no_relu=True)
        self.conv2d_7b = BasicConv2d(2080, 1536, 1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def forward(self, x):
        s2 = self.conv2d_2b(self.conv2d_2a(self.conv2d_1a(x)))
        s4 = self.conv2d_4a(self.conv2d_3b(self.maxpool_3a(s2)))
        s8 = self.repeat(self.mixed_5b(self.maxpool_5a(s4)))
        s16 = self.repeat_1(self.mixed_6a(s8))
        s32 = self.conv2d_7b(self.block8(self.repeat_2(self.mixed_7a(s16))))
        return [s2, s4, s8, s16, s32]
