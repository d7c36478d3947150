"""Cross-modality feature modulation: per-level enhancement, channel
recalibration, attention-aware fusion, and the shallow-to-deep cascade that
produces the fused pyramid."""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .encoder import FeaturePyramid


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


class SqueezeExcite(nn.Module):
    """Two sequential 1x1 convs, reduce by r then expand back."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError(
                f"channel count {channels} not divisible by se reduction {reduction}")
        self.fc1 = nn.Conv2d(channels, channels // reduction, 1)
        self.fc2 = nn.Conv2d(channels // reduction, channels, 1)

    def forward(self, x):
        return self.fc2(self.fc1(x))


class GateConv(nn.Module):
    """1x1 conv then 3x3 conv; the caller applies the logistic squash."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv2(self.conv1(x))


class MfmLevel(nn.Module):
    """One pyramid level of the feature modulator."""

    def __init__(self, channels: int, se_reduction: int,
                 use_cfe: bool = True, use_aff: bool = True):
        super().__init__()
        self.channels = channels
        self.use_cfe = use_cfe
        self.use_aff = use_aff
        self.gate_r = GateConv(channels)
        self.gate_t = GateConv(channels)
        self.pre_r = nn.Conv2d(channels, channels, 3, padding=1)
        self.pre_t = nn.Conv2d(channels, channels, 3, padding=1)
        self.se_r = SqueezeExcite(channels, se_reduction)
        self.se_t = SqueezeExcite(channels, se_reduction)
        self.fuse = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.spatial = nn.Conv2d(2, 1, 7, padding=3)

    def cross_guided_enhance(self, e_r: torch.Tensor, e_t: torch.Tensor):
        """Each modality is amplified where the other modality's gate fires."""
        _check_same_shape(e_r, e_t, "cross_guided_enhance")
        w_r = torch.sigmoid(self.gate_r(e_r))
        w_t = torch.sigmoid(self.gate_t(e_t))
        return e_r + e_r * w_t, e_t + e_t * w_r

    def se_recalibrate(self, x: torch.Tensor, branch: str) -> torch.Tensor:
        if branch == "rgb":
            pre, se = self.pre_r, self.se_r
        elif branch == "thermal":
            pre, se = self.pre_t, self.se_t
        else:
            raise ValueError(f"branch must be 'rgb' or 'thermal', got {branch!r}")
        gate = torch.sigmoid(se(pre(x)))
        return gate * x

    def attention_fuse(self, e_r: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        _check_same_shape(e_r, e_t, "attention_fuse")
        merged = torch.cat([e_r, e_t], dim=1)
        fused = self.fuse(merged)
        if not self.use_aff:
            return fused
        att = self.spatial_attention(merged)
        return fused * att

    def spatial_attention(self, merged: torch.Tensor) -> torch.Tensor:
        avg = merged.mean(dim=1, keepdim=True)
        mx = merged.max(dim=1, keepdim=True).values
        return torch.sigmoid(self.spatial(torch.cat([avg, mx], dim=1)))

    def forward(self, e_r: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        if self.use_cfe:
            bar_r, bar_t = self.cross_guided_enhance(e_r, e_t)
            e_r = self.se_recalibrate(bar_r, "rgb")
            e_t = self.se_recalibrate(bar_t, "thermal")
        return self.attention_fuse(e_r, e_t)


class MfmPyramid(nn.Module):
    """Stack of five MFM levels plus the shallow-to-deep fusion cascade.

    Level i concatenates its modulated feature with a stride-2 projection of
    the previous level's cascade output; level 1 sees only its own feature.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        channels = cfg.encoder_channels
        assert channels is not None and cfg.se_reduction is not None
        self.channels = channels
        for i, c in enumerate(channels, start=1):
            setattr(self, f"level{i}", MfmLevel(
                c, cfg.se_reduction, use_cfe=cfg.use_mfm_cfe, use_aff=cfg.use_mfm_aff))
            if i == 1:
                conv = nn.Conv2d(c, c, 3, padding=1)
            else:
                conv = nn.Conv2d(2 * c, c, 3, padding=1)
                setattr(self, f"project{i}", nn.Conv2d(channels[i - 2], c, 1, stride=2))
            setattr(self, f"cascade{i}", conv)

    def level(self, i: int) -> MfmLevel:
        return getattr(self, f"level{i}")

    def cascade(self, per_level: list[torch.Tensor]) -> FeaturePyramid:
        if len(per_level) != 5:
            raise ValueError(f"cascade expects 5 level tensors, got {len(per_level)}")
        outs = []
        prev = None
        for i, e_s in enumerate(per_level, start=1):
            if i == 1:
                x = e_s
            else:
                proj = getattr(self, f"project{i}")(prev)
                _check_same_shape(proj[:, :1], e_s[:, :1], f"cascade level {i}")
                x = torch.cat([e_s, proj], dim=1)
            prev = getattr(self, f"cascade{i}")(x)
            outs.append(prev)
        return FeaturePyramid(outs)

    def forward(self, e_r: FeaturePyramid, e_t: FeaturePyramid) -> FeaturePyramid:
        per_level = [self.level(i)(r, t)
                     for i, (r, t) in enumerate(zip(e_r, e_t), start=1)]
        return self.cascade(per_level)
