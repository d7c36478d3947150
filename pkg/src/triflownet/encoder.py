"""Modality-shared union encoder: one weight set, two input streams.

Two stacks are provided behind the same 5-stage interface: a small residual
stack used throughout the tests, and a Res2Net-50-shaped stack for the
parameter/MAC report. Both emit five levels at strides 2, 4, 8, 16, 32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig


@dataclass
class FeaturePyramid:
    """Five feature maps at halving resolutions (index 0 = level 1)."""

    levels: list[torch.Tensor]
    strides: tuple[int, ...] = (2, 4, 8, 16, 32)

    def __post_init__(self):
        if len(self.levels) != 5:
            raise ValueError(f"expected 5 pyramid levels, got {len(self.levels)}")
        for prev, cur in zip(self.levels, self.levels[1:]):
            ph, pw = prev.shape[-2:]
            ch, cw = cur.shape[-2:]
            if ch != math.ceil(ph / 2) or cw != math.ceil(pw / 2):
                raise ValueError(
                    f"pyramid level sizes must halve: {prev.shape[-2:]} -> {cur.shape[-2:]}")

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.levels[i]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(l.shape[1] for l in self.levels)


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, kernel_size=3, stride=1,
                 padding=1, dilation=1):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride, padding=padding,
                      dilation=dilation, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )


class ResidualUnit(nn.Module):
    """Two 3x3 convs with a shortcut; keeps channels and resolution."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = ConvBNReLU(channels, channels)
        self.conv2 = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(channels),
        )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.relu(self.conv2(self.conv1(x)) + x)


class ToyStage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.down = ConvBNReLU(in_ch, out_ch, stride=2)
        self.block = ResidualUnit(out_ch)

    def forward(self, x):
        return self.block(self.down(x))


class Res2NetBottleneck(nn.Module):
    """Res2Net bottleneck: split 3x3 path into hierarchical groups."""

    expansion = 4

    def __init__(self, in_ch: int, planes: int, stride: int = 1,
                 base_width: int = 26, scale: int = 4):
        super().__init__()
        width = int(math.floor(planes * (base_width / 64.0)))
        self.scale = scale
        self.stride = stride
        self.conv1 = nn.Conv2d(in_ch, width * scale, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width * scale)
        self.convs = nn.ModuleList(
            [nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
             for _ in range(scale - 1)])
        self.bns = nn.ModuleList([nn.BatchNorm2d(width) for _ in range(scale - 1)])
        self.conv3 = nn.Conv2d(width * scale, planes * self.expansion, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.AvgPool2d(3, stride=stride, padding=1) if stride > 1 else None
        self.downsample = None
        if stride != 1 or in_ch != planes * self.expansion:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, planes * self.expansion, 1, stride=stride, bias=False),
                nn.BatchNorm2d(planes * self.expansion),
            )
        self.width = width

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        chunks = torch.split(out, self.width, dim=1)
        pieces = []
        sp = None
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            # First block of a stage (stride > 1) cannot reuse the previous
            # group's output: resolutions differ.
            sp = chunks[i] if (i == 0 or self.stride > 1) else sp + chunks[i]
            sp = self.relu(bn(conv(sp)))
            pieces.append(sp)
        last = chunks[-1]
        pieces.append(self.pool(last) if self.pool is not None else last)
        out = self.bn3(self.conv3(torch.cat(pieces, dim=1)))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


def _res2net_stage(in_ch: int, planes: int, blocks: int, stride: int) -> nn.Sequential:
    layers = [Res2NetBottleneck(in_ch, planes, stride=stride)]
    for _ in range(blocks - 1):
        layers.append(Res2NetBottleneck(planes * 4, planes))
    return nn.Sequential(*layers)


class UnionEncoder(nn.Module):
    """Five downsampling stages shared between both modalities.

    Parameter paths carry no modality tag; the same weights run on the RGB
    and the thermal stream.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        channels = cfg.encoder_channels
        assert channels is not None
        self.channels = channels
        if cfg.encoder == "toy":
            in_ch = 3
            for i, out_ch in enumerate(channels, start=1):
                setattr(self, f"stage{i}", ToyStage(in_ch, out_ch))
                in_ch = out_ch
        elif cfg.encoder == "res2net50":
            self.stage1 = nn.Sequential(
                nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False),
                nn.BatchNorm2d(64),
                nn.ReLU(inplace=True),
            )
            self.stage2 = nn.Sequential(
                nn.MaxPool2d(3, stride=2, padding=1),
                _res2net_stage(64, 64, blocks=3, stride=1),
            )
            self.stage3 = _res2net_stage(256, 128, blocks=4, stride=2)
            self.stage4 = _res2net_stage(512, 256, blocks=6, stride=2)
            self.stage5 = _res2net_stage(1024, 512, blocks=3, stride=2)
        else:
            raise ValueError(f"unknown encoder kind {cfg.encoder!r}")

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        outs = []
        for i in range(1, 6):
            x = getattr(self, f"stage{i}")(x)
            outs.append(x)
        return outs

    def extract_pyramid(self, x: torch.Tensor) -> FeaturePyramid:
        h, w = x.shape[-2:]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input spatial size {h}x{w} must be divisible by 32")
        return FeaturePyramid(self.forward(x))
