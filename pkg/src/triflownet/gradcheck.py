"""Finite-difference verification of analytic gradients.

All checks run in double precision with modules in eval mode, comparing
autograd against central differences. Input gradients are checked coordinate
by coordinate; parameter gradients on a deterministic random subset of
coordinates so the full-model check stays fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .config import toy_config
from .heads import SaliencyBundle, total_loss
from .mdam import MdamBlock
from .mfm import MfmLevel, MfmPyramid
from .model import build_model
from .raspm import RaspmBlock

MODULE_TOL = 1e-4
FULL_TOL = 1e-3
_H = 1e-6


@dataclass
class GradCheck:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err <= self.tol


@dataclass
class GradcheckReport:
    module: str
    checks: list[GradCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((c.rel_err for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            out.append(f"[{status}] {self.module}.{c.name}: "
                       f"max rel err {c.rel_err:.3e} (tol {c.tol:.0e})")
        return out


def _rel_error(a: torch.Tensor, b: torch.Tensor) -> float:
    na, nb = a.norm().item(), b.norm().item()
    return float((a - b).norm().item() / max(na, nb, 1e-12))


def input_grad_error(f: Callable[..., torch.Tensor],
                     inputs: Sequence[torch.Tensor]) -> float:
    """Max relative error between autograd and central differences over every
    coordinate of every input tensor."""
    inputs = [x.detach().double().requires_grad_(True) for x in inputs]
    out = f(*inputs)
    grads = torch.autograd.grad(out, inputs)
    worst = 0.0
    with torch.no_grad():
        for x, g in zip(inputs, grads):
            numeric = torch.zeros_like(x)
            flat = x.view(-1)
            nflat = numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + _H
                hi = f(*inputs).item()
                flat[i] = orig - _H
                lo = f(*inputs).item()
                flat[i] = orig
                nflat[i] = (hi - lo) / (2.0 * _H)
            worst = max(worst, _rel_error(g, numeric))
    return worst


def param_grad_error(f: Callable[[], torch.Tensor], module: torch.nn.Module,
                     rng: np.random.Generator, coords_per_tensor: int = 4,
                     max_tensors: int | None = None) -> float:
    """Sampled-coordinate parameter-gradient check for a closed-over forward.

    Per tensor, the largest-magnitude gradient coordinates are differenced
    (tiny gradients sit below the resolution of central differences), and the
    comparison is one norm-based error over the whole sampled vector.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    if max_tensors is not None and len(params) > max_tensors:
        picks = rng.choice(len(params), size=max_tensors, replace=False)
        params = [params[int(i)] for i in sorted(picks)]
    for p in module.parameters():
        p.grad = None
    f().backward()
    analytic = []
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            k = min(coords_per_tensor, flat.numel())
            picks = torch.topk(p.grad.view(-1).abs(), k).indices
            for i in picks.tolist():
                orig = flat[i].item()
                flat[i] = orig + _H
                hi = f().item()
                flat[i] = orig - _H
                lo = f().item()
                flat[i] = orig
                numeric.append((hi - lo) / (2.0 * _H))
                analytic.append(p.grad.view(-1)[i].item())
    return _rel_error(torch.tensor(analytic), torch.tensor(numeric))


def _projection(shape, gen: torch.Generator) -> torch.Tensor:
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _check_mfm(gen: torch.Generator) -> list[GradCheck]:
    level = MfmLevel(channels=4, se_reduction=2).double().eval()
    e_r = torch.randn(1, 4, 6, 6, generator=gen, dtype=torch.float64)
    e_t = torch.randn(1, 4, 6, 6, generator=gen, dtype=torch.float64)
    proj = _projection((1, 4, 6, 6), gen)

    checks = []

    def scalar_enhance(a, b):
        x, y = level.cross_guided_enhance(a, b)
        return (proj * x).sum() + (proj * y).sum()

    checks.append(GradCheck("cross_guided_enhance",
                            input_grad_error(scalar_enhance, [e_r, e_t]), MODULE_TOL))
    checks.append(GradCheck(
        "se_recalibrate",
        input_grad_error(lambda a: (proj * level.se_recalibrate(a, "rgb")).sum(), [e_r]),
        MODULE_TOL))
    checks.append(GradCheck(
        "attention_fuse",
        input_grad_error(lambda a, b: (proj * level.attention_fuse(a, b)).sum(),
                         [e_r, e_t]), MODULE_TOL))
    checks.append(GradCheck(
        "level_forward",
        input_grad_error(lambda a, b: (proj * level(a, b)).sum(), [e_r, e_t]),
        MODULE_TOL))

    cfg = toy_config(encoder_channels=(2, 4, 4, 4, 4), se_reduction=2)
    pyramid = MfmPyramid(cfg).double().eval()
    sizes = [8, 4, 2, 1, 1]
    per_level = [torch.randn(1, c, s, s, generator=gen, dtype=torch.float64)
                 for c, s in zip(cfg.encoder_channels, sizes)]
    projs = [_projection(t.shape, gen) for t in per_level]

    def scalar_cascade(*levels):
        fused = pyramid.cascade(list(levels))
        return sum((p * f).sum() for p, f in zip(projs, fused))

    checks.append(GradCheck("cascade", input_grad_error(scalar_cascade, per_level),
                            MODULE_TOL))
    return checks


def _check_raspm(gen: torch.Generator) -> list[GradCheck]:
    block = RaspmBlock(4, 8).double().eval()
    x = torch.randn(1, 4, 7, 7, generator=gen, dtype=torch.float64)
    proj = _projection((1, 8, 7, 7), gen)
    err = input_grad_error(lambda a: (proj * block(a)).sum(), [x])
    return [GradCheck("block", err, MODULE_TOL)]


def _check_mdam(gen: torch.Generator) -> list[GradCheck]:
    block = MdamBlock(4).double().eval()
    triple = [torch.randn(1, 4, 6, 6, generator=gen, dtype=torch.float64)
              for _ in range(3)]
    proj = _projection((1, 4, 6, 6), gen)
    err = input_grad_error(lambda r, t, s: (proj * block(r, t, s)).sum(), triple)
    return [GradCheck("block", err, MODULE_TOL)]


def _check_heads(gen: torch.Generator) -> list[GradCheck]:
    gt = (torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64) > 0.5).double()

    def scalar_losses(lr, lt, ls):
        maps = [torch.sigmoid(l) for l in (lr, lt, ls)]
        m_f = torch.sigmoid(lr + lt + ls)
        bundle = SaliencyBundle(logits_r=lr, logits_t=lt, logits_s=ls,
                                m_r=maps[0], m_t=maps[1], m_s=maps[2], m_f=m_f)
        return total_loss(bundle, gt)[0]

    logits = [torch.randn(1, 1, 8, 8, generator=gen, dtype=torch.float64)
              for _ in range(3)]
    checks = [GradCheck("total_loss_vs_logits",
                        input_grad_error(scalar_losses, logits), MODULE_TOL)]

    from .heads import PredictionHead

    head = PredictionHead(8).double().eval()
    d1 = torch.randn(1, 8, 4, 4, generator=gen, dtype=torch.float64)
    proj = _projection((1, 1, 8, 8), gen)
    checks.append(GradCheck(
        "head_upsample",
        input_grad_error(lambda a: (proj * head(a, (8, 8))).sum(), [d1]), MODULE_TOL))
    return checks


def _check_full(gen: torch.Generator) -> list[GradCheck]:
    cfg = toy_config(input_size=32, encoder_channels=(4, 4, 8, 8, 8),
                     decoder_width=8, se_reduction=2)
    model = build_model(cfg, seed=0).double().eval()
    rgb = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)
    thermal = torch.rand(1, 3, 32, 32, generator=gen, dtype=torch.float64)
    gt = (torch.rand(1, 1, 32, 32, generator=gen, dtype=torch.float64) > 0.5).double()

    def closure():
        bundle = model(rgb, thermal)
        return total_loss(bundle, gt, mode=cfg.loss_mode)[0]

    rng = np.random.default_rng(0)
    err = param_grad_error(closure, model, rng, coords_per_tensor=2, max_tensors=40)
    return [GradCheck("end_to_end_params", err, FULL_TOL)]


_CHECKS = {
    "mfm": _check_mfm,
    "raspm": _check_raspm,
    "mdam": _check_mdam,
    "heads": _check_heads,
    "full": _check_full,
}


def run_gradcheck(module: str, seed: int = 0) -> GradcheckReport:
    if module not in _CHECKS:
        raise ValueError(f"unknown module {module!r}; choose from {sorted(_CHECKS)}")
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    return GradcheckReport(module=module, checks=_CHECKS[module](gen))
