"""Residual atrous spatial pyramid block, pluggable alternatives, and the
top-down modality-specific decoder built from them."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .encoder import FeaturePyramid


class ConvBN(nn.Module):
    """Conv followed by batch norm, optionally rectified."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size=3, padding=1,
                 dilation=1, relu: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, padding=padding,
                              dilation=dilation, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True) if relu else None

    def forward(self, x):
        x = self.bn(self.conv(x))
        return self.relu(x) if self.relu is not None else x


class RaspmBlock(nn.Module):
    """Four cross-linked branches over growing receptive fields plus a
    residual 1x1 shortcut; output is their linear combination (no trailing
    rectification, so the shortcut stays identity-like).
    """

    def __init__(self, in_ch: int, width: int, atrous: bool = True):
        super().__init__()
        if width % 4 != 0:
            raise ValueError(f"decoder width {width} must be divisible by 4")
        branch = width // 4
        self.in_channels = in_ch
        self.out_channels = width
        for k in range(1, 5):
            setattr(self, f"reduce{k}", ConvBN(in_ch, branch, 1, padding=0))
            if k >= 2:
                span = 2 * k - 1
                setattr(self, f"asym{k}", nn.Sequential(
                    ConvBN(branch, branch, (1, span), padding=(0, k - 1)),
                    ConvBN(branch, branch, (span, 1), padding=(k - 1, 0)),
                ))
            rate = 2 * k - 1 if atrous else 1
            setattr(self, f"dilate{k}", ConvBN(branch, branch, 3, padding=rate,
                                               dilation=rate))
        self.merge = ConvBN(width, width, 3, padding=1, relu=False)
        self.residual = ConvBN(in_ch, width, 1, padding=0, relu=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = []
        prev = None
        for k in range(1, 5):
            f = getattr(self, f"reduce{k}")(x)
            if k >= 2:
                f = getattr(self, f"asym{k}")(f + prev)
            prev = f
            feats.append(getattr(self, f"dilate{k}")(f))
        return self.merge(torch.cat(feats, dim=1)) + self.residual(x)


class PlainConvBlock(nn.Module):
    """3x3 conv with a residual shortcut; the no-pyramid baseline."""

    def __init__(self, in_ch: int, width: int):
        super().__init__()
        self.in_channels = in_ch
        self.out_channels = width
        self.body = ConvBN(in_ch, width, 3, padding=1, relu=False)
        self.residual = ConvBN(in_ch, width, 1, padding=0, relu=False)

    def forward(self, x):
        return self.body(x) + self.residual(x)


class PpmBlock(nn.Module):
    """Pyramid pooling over four grid sizes, merged like the default block."""

    BINS = (1, 2, 3, 6)

    def __init__(self, in_ch: int, width: int):
        super().__init__()
        if width % 4 != 0:
            raise ValueError(f"decoder width {width} must be divisible by 4")
        branch = width // 4
        self.in_channels = in_ch
        self.out_channels = width
        self.branches = nn.ModuleList(
            [ConvBN(in_ch, branch, 1, padding=0) for _ in self.BINS])
        self.merge = ConvBN(width, width, 3, padding=1, relu=False)
        self.residual = ConvBN(in_ch, width, 1, padding=0, relu=False)

    def forward(self, x):
        size = x.shape[-2:]
        feats = []
        for bins, conv in zip(self.BINS, self.branches):
            pooled = F.adaptive_avg_pool2d(x, bins)
            feats.append(F.interpolate(conv(pooled), size=size, mode="bilinear",
                                       align_corners=False))
        return self.merge(torch.cat(feats, dim=1)) + self.residual(x)


class AsppBlock(nn.Module):
    """Parallel dilated 3x3 branches at the classic rates."""

    RATES = (1, 6, 12, 18)

    def __init__(self, in_ch: int, width: int):
        super().__init__()
        if width % 4 != 0:
            raise ValueError(f"decoder width {width} must be divisible by 4")
        branch = width // 4
        self.in_channels = in_ch
        self.out_channels = width
        branches = [ConvBN(in_ch, branch, 1, padding=0)]
        for rate in self.RATES[1:]:
            branches.append(ConvBN(in_ch, branch, 3, padding=rate, dilation=rate))
        self.branches = nn.ModuleList(branches)
        self.merge = ConvBN(width, width, 3, padding=1, relu=False)
        self.residual = ConvBN(in_ch, width, 1, padding=0, relu=False)

    def forward(self, x):
        feats = [conv(x) for conv in self.branches]
        return self.merge(torch.cat(feats, dim=1)) + self.residual(x)


def make_block(cfg: ModelConfig, in_ch: int) -> nn.Module:
    """Instantiate the configured decoder block for one level."""
    kind = cfg.raspm_block
    if kind == "raspm":
        return RaspmBlock(in_ch, cfg.decoder_width, atrous=cfg.use_raspm_atrous)
    if kind == "conv":
        return PlainConvBlock(in_ch, cfg.decoder_width)
    if kind == "ppm":
        return PpmBlock(in_ch, cfg.decoder_width)
    if kind == "aspp":
        return AsppBlock(in_ch, cfg.decoder_width)
    raise ValueError(f"unknown decoder block kind {kind!r}")


def upsample2x(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class RaspmStack(nn.Module):
    """Five decoder blocks for one flow, deepest consuming the raw level-5
    feature and every shallower level the concat of the upsampled previous
    output with its encoder feature."""

    def __init__(self, cfg: ModelConfig, encoder_channels: tuple[int, ...]):
        super().__init__()
        width = cfg.decoder_width
        for i, c in enumerate(encoder_channels, start=1):
            in_ch = c if i == 5 else width + c
            setattr(self, f"level{i}", make_block(cfg, in_ch))

    def level(self, i: int) -> nn.Module:
        return getattr(self, f"level{i}")


def specific_flow_decode(stack: RaspmStack, pyramid: FeaturePyramid) -> list[torch.Tensor]:
    """Run the top-down recursion; returns decoder outputs, index 0 = level 1."""
    outs: list[torch.Tensor] = [None] * 5  # type: ignore[list-item]
    d = stack.level(5)(pyramid[4])
    outs[4] = d
    for i in range(4, 0, -1):
        skip = pyramid[i - 1]
        up = upsample2x(d, skip.shape[-2:])
        d = stack.level(i)(torch.cat([up, skip], dim=1))
        outs[i - 1] = d
    return outs
