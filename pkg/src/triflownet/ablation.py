"""Side-by-side training/evaluation of configuration variants."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Optional

import torch

from .config import ModelConfig, config_from_dict
from .complexity import model_complexity
from .data import load_dataset, load_triple
from .metrics import METRIC_NAMES, compute_all
from .train import model_from_checkpoint, train


def _merge(base: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def apply_overrides(base: ModelConfig, overrides: dict) -> ModelConfig:
    return config_from_dict(_merge(base.to_dict(), overrides))


def evaluate_model(model, data_root: str | Path) -> dict:
    """Aggregate the five metrics for the fused map over a dataset."""
    index = load_dataset(data_root)
    model.eval()
    records = []
    with torch.no_grad():
        for entry in index.triples:
            pair, gt = load_triple(entry, model.cfg.input_size)
            bundle = model(pair.rgb, pair.thermal)
            pred = bundle.m_f[0, 0].numpy()
            records.append(compute_all(pred, gt[0, 0].numpy() > 0.5))
    n = len(records)
    return {name: sum(r[name] for r in records) / n for name in METRIC_NAMES}


def run_ablation(base: ModelConfig, variants: list[dict], data_root: str | Path,
                 out_dir: str | Path, deterministic: bool = False,
                 max_steps: Optional[int] = None) -> dict:
    """Train and score each variant; returns (and saves) a comparative report.

    Each variant is ``{"name": ..., "overrides": {...}}`` applied on top of
    the base configuration.
    """
    if not variants:
        raise ValueError("ablation needs at least one variant")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for i, variant in enumerate(variants):
        name = variant.get("name", f"variant{i}")
        cfg = apply_overrides(base, variant.get("overrides", {}))
        run_dir = out_dir / f"run_{i:02d}_{name}"
        result = train(cfg, data_root, run_dir, deterministic=deterministic,
                       max_steps=max_steps)
        model, _ = model_from_checkpoint(result.checkpoint)
        row = {"name": name, "params": model_complexity(model)["params"]}
        row.update(evaluate_model(model, data_root))
        rows.append(row)

    report = {"rows": rows}
    (out_dir / "ablation_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def format_table(report: dict) -> str:
    headers = ["name", "params"] + list(METRIC_NAMES)
    lines = ["  ".join(f"{h:>14s}" for h in headers)]
    for row in report["rows"]:
        cells = [f"{row['name']:>14s}", f"{row['params']:>14d}"]
        cells += [f"{row[name]:>14.4f}" for name in METRIC_NAMES]
        lines.append("  ".join(cells))
    return "\n".join(lines)
