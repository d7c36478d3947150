"""Dynamic aggregation of the two specific flows into the complementary flow.

Each block mixes detail-gated and semantics-gated variants of the fused
feature under a two-way softmax, then adds the complementary feature back as
a residual, so an all-zero block is an exact identity on that input.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .encoder import FeaturePyramid
from .raspm import RaspmStack, upsample2x


def _check_triple(d_r: torch.Tensor, d_t: torch.Tensor, d_s: torch.Tensor) -> None:
    if d_r.shape != d_t.shape or d_r.shape != d_s.shape:
        raise ValueError(
            "mdam inputs must share one shape, got "
            f"{tuple(d_r.shape)}, {tuple(d_t.shape)}, {tuple(d_s.shape)}")


class MdamBlock(nn.Module):
    def __init__(self, width: int, mode: str = "dynamic"):
        super().__init__()
        if mode not in ("dynamic", "fixed_weights", "no_doe"):
            raise ValueError(f"unknown mdam mode {mode!r}")
        if width % 4 != 0:
            raise ValueError(f"decoder width {width} must be divisible by 4")
        self.mode = mode
        self.agg = nn.Conv2d(2 * width, width, 3, padding=1)
        self.doe_conv = nn.Conv2d(width, width, 3, padding=1)
        self.doe_proj = nn.Conv2d(width, width, 1)
        self.fc1 = nn.Linear(width, width // 4)
        self.fc2 = nn.Linear(width // 4, 2)
        self.out = nn.Conv2d(width, width, 3, padding=1)

    def dynamic_weights(self, f_a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-sample scalar pair, softmax-normalized so it sums to one."""
        pooled = f_a.mean(dim=(2, 3))
        weights = torch.softmax(self.fc2(self.fc1(pooled)), dim=1)
        return weights[:, 0], weights[:, 1]

    def detail_gate(self, d_r: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.doe_proj(self.doe_conv(d_r)))

    def forward(self, d_r: torch.Tensor, d_t: torch.Tensor,
                d_s: torch.Tensor) -> torch.Tensor:
        _check_triple(d_r, d_t, d_s)
        f_a = self.agg(torch.cat([d_r * d_s, d_t * d_s], dim=1))
        f_te = f_a if self.mode == "no_doe" else f_a * self.detail_gate(d_r)
        f_st = f_a * d_t
        if self.mode == "fixed_weights":
            mixed = f_te + f_st
        else:
            alpha, beta = self.dynamic_weights(f_a)
            mixed = alpha.view(-1, 1, 1, 1) * f_te + beta.view(-1, 1, 1, 1) * f_st
        return self.out(mixed) + d_s


class MdamStack(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        for i in range(1, 6):
            setattr(self, f"level{i}", MdamBlock(cfg.decoder_width, mode=cfg.mdam_mode))

    def level(self, i: int) -> MdamBlock:
        return getattr(self, f"level{i}")


def complementary_flow_decode(
    stack: RaspmStack,
    mdam: MdamStack | None,
    pyramid: FeaturePyramid,
    d_r: list[torch.Tensor] | None,
    d_t: list[torch.Tensor] | None,
) -> list[torch.Tensor]:
    """Top-down recursion over the fused pyramid, aggregating the specific
    flows at every level when an MDAM stack is present."""
    if mdam is not None and (d_r is None or d_t is None):
        raise ValueError("mdam aggregation needs both specific-flow outputs")
    outs: list[torch.Tensor] = [None] * 5  # type: ignore[list-item]
    x = stack.level(5)(pyramid[4])
    d = mdam.level(5)(d_r[4], d_t[4], x) if mdam is not None else x
    outs[4] = d
    for i in range(4, 0, -1):
        skip = pyramid[i - 1]
        up = upsample2x(d, skip.shape[-2:])
        x = stack.level(i)(torch.cat([up, skip], dim=1))
        d = mdam.level(i)(d_r[i - 1], d_t[i - 1], x) if mdam is not None else x
        outs[i - 1] = d
    return outs
