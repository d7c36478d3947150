"""Training loop with the recipe: adaptive-moment optimizer, cosine-annealed
learning rate, synchronized augmentation, deterministic mode, and bit-exact
checkpoint/resume.

Every random draw is derived statelessly from (seed, epoch, index), so a run
resumed from any step replays the remaining schedule exactly.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .config import ModelConfig, config_from_dict, validate_config
from .data import DatasetIndex, augment, load_dataset, load_triple
from .heads import total_loss
from .model import TripleFlowNet, build_model
from .paramstore import CheckpointError, ParamStore, load_params, save_params


class NumericError(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_mae: float = math.inf
    best_step: int = -1

    def to_dict(self) -> dict:
        # inf (no eval yet) maps to null so the header stays strict JSON.
        best = None if math.isinf(self.best_mae) else self.best_mae
        return {"step": self.step, "epoch": self.epoch,
                "best_mae": best, "best_step": self.best_step}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        best = d.get("best_mae")
        return cls(step=int(d["step"]), epoch=int(d["epoch"]),
                   best_mae=math.inf if best is None else float(best),
                   best_step=int(d["best_step"]))


def enable_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    t = min(step, total_steps) / max(total_steps, 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def _epoch_order(seed: int, epoch: int, n: int) -> list[int]:
    order = list(range(n))
    random.Random(f"{seed}:order:{epoch}").shuffle(order)
    return order


def _sample_rng(seed: int, epoch: int, index: int) -> random.Random:
    return random.Random(f"{seed}:aug:{epoch}:{index}")


# ---- checkpointing --------------------------------------------------------------


def save_checkpoint(model: TripleFlowNet, optimizer: Optional[torch.optim.Optimizer],
                    state: TrainState, path: str | Path) -> None:
    store = model.to_param_store(meta={"train_state": state.to_dict()})
    if optimizer is not None:
        param_names = [name for name, _ in model.named_parameters()]
        opt_state = optimizer.state_dict()["state"]
        for idx, name in enumerate(param_names):
            entry = opt_state.get(idx)
            if entry is None:
                continue
            for key, value in entry.items():
                if isinstance(value, torch.Tensor):
                    arr = value.detach().cpu().numpy()
                else:
                    arr = np.asarray(value)
                store[f"optim.{name}.{key}"] = arr
    store["rng.torch"] = torch.get_rng_state().numpy()
    save_params(store, path)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ParamStore, TrainState]:
    store = load_params(path)
    meta = store.meta
    if "config" not in meta:
        raise CheckpointError(f"checkpoint {path} does not embed a model config")
    cfg = config_from_dict(meta["config"])
    state = TrainState.from_dict(meta.get("train_state", TrainState().to_dict()))
    return cfg, store, state


def model_from_checkpoint(path: str | Path) -> tuple[TripleFlowNet, TrainState]:
    cfg, store, state = load_checkpoint(path)
    model = TripleFlowNet(cfg)
    model.load_param_store(store)
    return model, state


def _restore_optimizer(optimizer: torch.optim.Optimizer, model: TripleFlowNet,
                       store: ParamStore) -> None:
    param_names = [name for name, _ in model.named_parameters()]
    state: dict[int, dict] = {}
    for idx, name in enumerate(param_names):
        prefix = f"optim.{name}."
        entry = {}
        for key in store.keys():
            if key.startswith(prefix):
                arr = np.array(store[key])
                entry[key[len(prefix):]] = torch.from_numpy(arr)
        if entry:
            state[idx] = entry
    sd = optimizer.state_dict()
    sd["state"] = state
    optimizer.load_state_dict(sd)


# ---- the loop -------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    state: TrainState
    history: list[dict] = field(default_factory=list)


def _mean_mae(model: TripleFlowNet, samples: list[tuple]) -> float:
    model.eval()
    errors = []
    with torch.no_grad():
        for pair, gt in samples:
            bundle = model(pair.rgb, pair.thermal)
            errors.append(float((bundle.m_f - gt).abs().mean()))
    model.train()
    return float(np.mean(errors))


def train(cfg: ModelConfig, data_root: str | Path, out_dir: str | Path,
          deterministic: bool = False, resume: str | Path | None = None,
          max_steps: Optional[int] = None, augment_data: bool = True,
          eval_every_epochs: int = 1) -> TrainResult:
    """Optimize the model on ``data_root`` and leave checkpoints plus a
    step-wise JSONL log in ``out_dir``."""
    cfg = validate_config(cfg)
    if deterministic:
        enable_determinism()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"

    index: DatasetIndex = load_dataset(data_root)
    samples = [load_triple(entry, cfg.input_size) for entry in index.triples]

    tr = cfg.training
    if resume is not None:
        ckpt_cfg, store, state = load_checkpoint(resume)
        if ckpt_cfg != cfg:
            raise CheckpointError("resume checkpoint was built from a different config")
        model = TripleFlowNet(cfg)
        model.load_param_store(store)
        if "rng.torch" in store:
            torch.set_rng_state(torch.from_numpy(np.array(store["rng.torch"])))
        optimizer = torch.optim.Adam(model.parameters(), lr=tr.lr)
        _restore_optimizer(optimizer, model, store)
        log_handle = open(log_path, "a", encoding="utf-8")
    else:
        model = build_model(cfg, seed=tr.seed)
        optimizer = torch.optim.Adam(model.parameters(), lr=tr.lr)
        state = TrainState()
        log_handle = open(log_path, "w", encoding="utf-8")

    n = len(samples)
    batches_per_epoch = math.ceil(n / tr.batch_size)
    # The cosine horizon is the configured run, so an early stop or a resume
    # sees the same per-step learning rates.
    planned_steps = tr.epochs * batches_per_epoch
    stop_steps = planned_steps if max_steps is None else min(planned_steps, max_steps)

    last_path = out_dir / "checkpoint_last.bin"
    best_path = out_dir / "checkpoint_best.bin"
    history: list[dict] = []
    last_eval_step = -1
    model.train()

    def evaluate(epoch: int, update_best: bool) -> None:
        nonlocal last_eval_step
        train_mae = _mean_mae(model, samples)
        summary = {"epoch": epoch, "step": state.step, "train_mae": train_mae}
        history.append(summary)
        log_handle.write(json.dumps(summary, sort_keys=True) + "\n")
        last_eval_step = state.step
        if update_best and train_mae < state.best_mae:
            state.best_mae = train_mae
            state.best_step = state.step
            save_checkpoint(model, optimizer, state, best_path)

    try:
        while state.step < stop_steps:
            epoch = state.step // batches_per_epoch
            state.epoch = epoch
            order = _epoch_order(tr.seed, epoch, n)
            start_batch = state.step - epoch * batches_per_epoch
            for b in range(start_batch, batches_per_epoch):
                if state.step >= stop_steps:
                    break
                chosen = order[b * tr.batch_size:(b + 1) * tr.batch_size]
                rgbs, thermals, gts = [], [], []
                for idx in chosen:
                    pair, gt = samples[idx]
                    if augment_data:
                        pair, gt = augment(pair, gt, _sample_rng(tr.seed, epoch, idx))
                    rgbs.append(pair.rgb)
                    thermals.append(pair.thermal)
                    gts.append(gt)
                rgb = torch.cat(rgbs)
                thermal = torch.cat(thermals)
                gt = torch.cat(gts)

                lr = (cosine_lr(tr.lr, state.step, planned_steps)
                      if tr.schedule == "cosine" else tr.lr)
                for group in optimizer.param_groups:
                    group["lr"] = lr

                optimizer.zero_grad()
                bundle = model(rgb, thermal)
                loss, parts = total_loss(bundle, gt, mode=cfg.loss_mode)
                if not torch.isfinite(loss):
                    dump = out_dir / "numeric_failure.json"
                    dump.write_text(json.dumps({
                        "step": state.step, "epoch": epoch,
                        "loss": float(loss.detach()), "parts": parts,
                        "batch": [index.triples[i][0] for i in chosen],
                    }, indent=2))
                    raise NumericError(
                        f"non-finite loss at step {state.step}; diagnostics in {dump}")
                loss.backward()
                optimizer.step()
                state.step += 1

                record = {"step": state.step, "epoch": epoch, "lr": lr,
                          "loss": float(loss.detach()), "parts": parts}
                history.append(record)
                log_handle.write(json.dumps(record, sort_keys=True) + "\n")

            # Best-snapshot bookkeeping happens only on completed epochs, so
            # an interrupted-and-resumed run keeps an identical state.
            if state.step == (epoch + 1) * batches_per_epoch and \
                    (epoch + 1) % eval_every_epochs == 0:
                evaluate(epoch, update_best=True)
            save_checkpoint(model, optimizer, state, last_path)

        if last_eval_step != state.step:
            evaluate(state.epoch, update_best=False)
    finally:
        log_handle.close()

    save_checkpoint(model, optimizer, state, last_path)
    if not best_path.exists():
        save_checkpoint(model, optimizer, state, best_path)
    return TrainResult(checkpoint=last_path, best_checkpoint=best_path,
                       log_path=log_path, state=state, history=history)
