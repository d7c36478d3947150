"""Model/training configuration: schema, defaults, validation, JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

FLOW_ORDER = ("rgb", "thermal", "complementary")

ENCODER_PROFILES = {
    # 5-stage widths at strides 2, 4, 8, 16, 32.
    "res2net50": (64, 256, 512, 1024, 2048),
    "toy": (8, 16, 32, 64, 128),
}

# Conventional squeeze-excitation ratio for the wide profile; the toy widths
# start at 8 channels, so they get a ratio that still divides every stage.
DEFAULT_SE_REDUCTION = {"res2net50": 16, "toy": 4}

MDAM_MODES = ("dynamic", "fixed_weights", "no_doe")
RASPM_BLOCKS = ("raspm", "conv", "ppm", "aspp")
SCHEDULES = ("cosine", "constant")
FUSION_SPACES = ("logit", "prob")
LOSS_MODES = ("hybrid", "wbce", "wiou")


class ConfigError(ValueError):
    """Raised when a configuration fails validation."""


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 5e-5
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    schedule: str = "cosine"


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 352
    encoder: str = "res2net50"
    encoder_channels: Optional[tuple[int, ...]] = None
    decoder_width: int = 64
    se_reduction: Optional[int] = None
    shared_encoder: bool = True
    use_mfm_cfe: bool = True
    use_mfm_aff: bool = True
    use_raspm_atrous: bool = True
    raspm_block: str = "raspm"
    mdam_mode: str = "dynamic"
    active_flows: tuple[str, ...] = FLOW_ORDER
    fusion_space: str = "logit"
    loss_mode: str = "hybrid"
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @property
    def uses_mdam(self) -> bool:
        """MDAM aggregates both specific flows; it exists only when all three run."""
        return set(self.active_flows) == set(FLOW_ORDER)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(self.encoder_channels) if self.encoder_channels else None
        d["active_flows"] = list(self.active_flows)
        return d


def _check_choice(name: str, value, choices: Sequence) -> None:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {list(choices)}, got {value!r}")


def validate_config(cfg: ModelConfig) -> ModelConfig:
    """Fill defaults and enforce structural constraints; idempotent."""
    _check_choice("encoder", cfg.encoder, tuple(ENCODER_PROFILES))

    if cfg.input_size < 32 or cfg.input_size % 32 != 0:
        raise ConfigError("input_size must be divisible by 32")

    channels = cfg.encoder_channels
    if channels is None:
        channels = ENCODER_PROFILES[cfg.encoder]
    channels = tuple(int(c) for c in channels)
    if len(channels) != 5 or any(c < 1 for c in channels):
        raise ConfigError("encoder_channels must be 5 positive ints")
    if cfg.encoder == "res2net50" and channels != ENCODER_PROFILES["res2net50"]:
        raise ConfigError("encoder_channels are fixed by the res2net50 stage recipe; "
                          "omit them or switch to the toy encoder")

    if cfg.decoder_width <= 0:
        raise ConfigError("decoder_width must be positive")
    if cfg.decoder_width % 4 != 0:
        raise ConfigError("decoder_width must be divisible by 4 (four pyramid branches)")

    se_reduction = cfg.se_reduction
    if se_reduction is None:
        se_reduction = DEFAULT_SE_REDUCTION[cfg.encoder]
    if se_reduction < 1:
        raise ConfigError("se_reduction must be >= 1")
    for c in channels:
        if c % se_reduction != 0:
            raise ConfigError(
                f"se_reduction {se_reduction} does not divide encoder channel width {c}")

    flows = tuple(f for f in FLOW_ORDER if f in cfg.active_flows)
    unknown = set(cfg.active_flows) - set(FLOW_ORDER)
    if unknown:
        raise ConfigError(f"unknown flows {sorted(unknown)}; choose from {list(FLOW_ORDER)}")
    if not flows:
        raise ConfigError("active_flows must not be empty")

    _check_choice("raspm_block", cfg.raspm_block, RASPM_BLOCKS)
    _check_choice("mdam_mode", cfg.mdam_mode, MDAM_MODES)
    _check_choice("fusion_space", cfg.fusion_space, FUSION_SPACES)
    _check_choice("loss_mode", cfg.loss_mode, LOSS_MODES)

    tr = cfg.training
    if tr.lr <= 0:
        raise ConfigError("training.lr must be positive")
    if tr.batch_size < 1:
        raise ConfigError("training.batch_size must be >= 1")
    if tr.epochs < 1:
        raise ConfigError("training.epochs must be >= 1")
    _check_choice("training.schedule", tr.schedule, SCHEDULES)

    return dataclasses.replace(
        cfg, encoder_channels=channels, se_reduction=se_reduction, active_flows=flows)


_TRAINING_KEYS = {f.name for f in dataclasses.fields(TrainingConfig)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}


def config_from_dict(raw: dict) -> ModelConfig:
    """Build and validate a config from parsed JSON; unknown keys are an error."""
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(raw) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = dict(raw)
    training_raw = raw.pop("training", {})
    if not isinstance(training_raw, dict):
        raise ConfigError("training must be a JSON object")
    unknown = set(training_raw) - _TRAINING_KEYS
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    if "encoder_channels" in raw and raw["encoder_channels"] is not None:
        raw["encoder_channels"] = tuple(raw["encoder_channels"])
    if "active_flows" in raw:
        raw["active_flows"] = tuple(raw["active_flows"])
    cfg = ModelConfig(training=TrainingConfig(**training_raw), **raw)
    return validate_config(cfg)


def load_config(path: str | Path) -> ModelConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def toy_config(**overrides) -> ModelConfig:
    """Small configuration used throughout the test suite."""
    base = dict(
        input_size=64,
        encoder="toy",
        decoder_width=16,
        training=TrainingConfig(batch_size=4, epochs=10),
    )
    base.update(overrides)
    return validate_config(ModelConfig(**base))
