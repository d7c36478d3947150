"""Parameter and multiply-accumulate counting for complexity reports."""

from __future__ import annotations

import torch
from torch import nn


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _conv_macs(layer: nn.Conv2d, output: torch.Tensor) -> int:
    out_elems = output.numel()
    per_elem = (layer.in_channels // layer.groups) * layer.kernel_size[0] * layer.kernel_size[1]
    return out_elems * per_elem


def _linear_macs(layer: nn.Linear, output: torch.Tensor) -> int:
    return output.numel() * layer.in_features


def count_params_and_macs(module: nn.Module, *inputs: torch.Tensor) -> tuple[int, int]:
    """Exact parameter count and conv/linear MACs for one forward pass."""
    macs = 0

    def hook(layer, _inp, output):
        nonlocal macs
        if isinstance(layer, nn.Conv2d):
            macs += _conv_macs(layer, output)
        elif isinstance(layer, nn.Linear):
            macs += _linear_macs(layer, output)

    handles = [m.register_forward_hook(hook)
               for m in module.modules() if isinstance(m, (nn.Conv2d, nn.Linear))]
    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(*inputs)
    finally:
        for h in handles:
            h.remove()
        module.train(was_training)
    return count_params(module), macs


def model_complexity(model, batch: int = 1) -> dict:
    """Params and MACs for a full model at its configured input size."""
    size = model.cfg.input_size
    rgb = torch.zeros(batch, 3, size, size)
    thermal = torch.zeros(batch, 3, size, size)
    params, macs = count_params_and_macs(model, rgb, thermal)
    return {
        "params": params,
        "macs": macs,
        "params_millions": params / 1e6,
        "macs_giga": macs / 1e9,
        "input_size": size,
    }
