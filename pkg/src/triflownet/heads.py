"""Saliency heads, flow-cooperative fusion, and the hybrid weighted loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

PROB_EPS = 1e-7


@dataclass
class SaliencyBundle:
    """Full-resolution logits and probability maps for the active flows.

    ``m_f`` is always present; per-flow entries are None when a flow is
    disabled by the configuration.
    """

    logits_r: Optional[torch.Tensor]
    logits_t: Optional[torch.Tensor]
    logits_s: Optional[torch.Tensor]
    m_r: Optional[torch.Tensor]
    m_t: Optional[torch.Tensor]
    m_s: Optional[torch.Tensor]
    m_f: torch.Tensor

    def maps(self) -> dict[str, torch.Tensor]:
        out = {}
        for name in ("m_r", "m_t", "m_s"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        out["m_f"] = self.m_f
        return out

    def active_logits(self) -> list[torch.Tensor]:
        return [l for l in (self.logits_r, self.logits_t, self.logits_s)
                if l is not None]


class PredictionHead(nn.Module):
    """1x1 conv to a single logit map, upsampled to the supervision size."""

    def __init__(self, width: int):
        super().__init__()
        self.proj = nn.Conv2d(width, 1, 1)

    def forward(self, d1: torch.Tensor, out_size: tuple[int, int]) -> torch.Tensor:
        logits = self.proj(d1)
        if logits.shape[-2:] != out_size:
            logits = F.interpolate(logits, size=out_size, mode="bilinear",
                                   align_corners=False)
        return logits


def fuse_flows(logits: list[torch.Tensor], space: str = "logit") -> torch.Tensor:
    """Combine the per-flow predictions by addition into the final map."""
    if not logits:
        raise ValueError("fuse_flows needs at least one logit map")
    total = logits[0]
    for l in logits[1:]:
        total = total + l
    if space == "logit":
        return torch.sigmoid(total)
    if space == "prob":
        probs = torch.stack([torch.sigmoid(l) for l in logits]).sum(dim=0)
        return probs.clamp(0.0, 1.0)
    raise ValueError(f"unknown fusion space {space!r}")


def pixel_weight(gt: torch.Tensor) -> torch.Tensor:
    """Boundary-emphasizing weight: 1 + 5 |boxavg_31(G) - G|, in [1, 6]."""
    local = F.avg_pool2d(gt, kernel_size=31, stride=1, padding=15,
                         count_include_pad=True)
    return 1.0 + 5.0 * (local - gt).abs()


def _check_loss_inputs(m: torch.Tensor, g: torch.Tensor,
                       w: Optional[torch.Tensor]) -> torch.Tensor:
    if m.shape != g.shape:
        raise ValueError(f"prediction/target shape mismatch {tuple(m.shape)} vs {tuple(g.shape)}")
    if w is None:
        w = pixel_weight(g)
    elif w.shape != g.shape:
        raise ValueError(f"weight/target shape mismatch {tuple(w.shape)} vs {tuple(g.shape)}")
    return w


def wbce_loss(m: torch.Tensor, g: torch.Tensor,
              w: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Weight-normalized binary cross-entropy over probabilities."""
    w = _check_loss_inputs(m, g, w)
    m = m.clamp(PROB_EPS, 1.0 - PROB_EPS)
    bce = -(g * torch.log(m) + (1.0 - g) * torch.log(1.0 - m))
    num = (w * bce).flatten(1).sum(dim=1)
    den = w.flatten(1).sum(dim=1)
    return (num / den).mean()


def wiou_loss(m: torch.Tensor, g: torch.Tensor,
              w: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Weighted soft-IoU loss, zero exactly when prediction equals binary gt."""
    w = _check_loss_inputs(m, g, w)
    inter = (w * m * g).flatten(1).sum(dim=1)
    union = (w * (m + g - m * g)).flatten(1).sum(dim=1)
    return (1.0 - (inter + 1.0) / (union + 1.0)).mean()


def total_loss(bundle: SaliencyBundle, gt: torch.Tensor,
               mode: str = "hybrid") -> tuple[torch.Tensor, dict[str, float]]:
    """Sum of the weighted losses over every supervised map."""
    if mode not in ("hybrid", "wbce", "wiou"):
        raise ValueError(f"unknown loss mode {mode!r}")
    w = pixel_weight(gt)
    total = gt.new_zeros(())
    parts: dict[str, float] = {}
    for name, m in bundle.maps().items():
        if mode in ("hybrid", "wbce"):
            bce = wbce_loss(m, gt, w)
            parts[f"wbce_{name}"] = float(bce.detach())
            total = total + bce
        if mode in ("hybrid", "wiou"):
            iou = wiou_loss(m, gt, w)
            parts[f"wiou_{name}"] = float(iou.detach())
            total = total + iou
    return total, parts
