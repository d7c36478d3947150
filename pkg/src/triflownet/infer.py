"""Checkpoint-driven inference: write saliency maps at the original size."""

from __future__ import annotations

from pathlib import Path

import torch
from PIL import Image

from .data import load_rgb, load_thermal, save_saliency_map
from .train import model_from_checkpoint

_SUFFIXES = {"m_r": "_r", "m_t": "_t", "m_s": "_s", "m_f": "_f"}


def predict(ckpt: str | Path, rgb_path: str | Path, thermal_path: str | Path,
            out_dir: str | Path, flows: bool = False) -> list[Path]:
    """Run one pair through a trained model. Writes the fused map, plus the
    per-flow maps when ``flows`` is set; returns the written paths."""
    model, _ = model_from_checkpoint(ckpt)
    model.eval()
    size = model.cfg.input_size

    with Image.open(rgb_path) as img:
        original = (img.height, img.width)
    rgb = load_rgb(Path(rgb_path), size)[None]
    thermal = load_thermal(Path(thermal_path), size)[None]

    with torch.no_grad():
        bundle = model(rgb, thermal)

    out_dir = Path(out_dir)
    stem = Path(rgb_path).stem
    written = []
    maps = bundle.maps() if flows else {"m_f": bundle.m_f}
    for name, m in maps.items():
        path = out_dir / f"{stem}{_SUFFIXES[name]}.png"
        save_saliency_map(m, path, size=original)
        written.append(path)
    return written
