"""End-to-end assembly of encoder, modulator, flows, and heads."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, validate_config
from .encoder import FeaturePyramid, UnionEncoder
from .heads import PredictionHead, SaliencyBundle, fuse_flows
from .mdam import MdamStack, complementary_flow_decode
from .mfm import MfmPyramid
from .paramstore import CheckpointError, ParamStore
from .raspm import RaspmStack, specific_flow_decode


class TripleFlowNet(nn.Module):
    """Shared encoder feeding up to three decoder flows whose predictions are
    fused by addition into the final saliency map."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg = validate_config(cfg)
        self.cfg = cfg
        channels = cfg.encoder_channels
        assert channels is not None

        if cfg.shared_encoder:
            self.encoder = UnionEncoder(cfg)
        else:
            self.encoder_rgb = UnionEncoder(cfg)
            self.encoder_thermal = UnionEncoder(cfg)

        if "complementary" in cfg.active_flows:
            self.mfm = MfmPyramid(cfg)

        self.flow = nn.ModuleDict(
            {name: RaspmStack(cfg, channels) for name in cfg.active_flows})
        if cfg.uses_mdam:
            self.mdam = MdamStack(cfg)

        self.head = nn.ModuleDict(
            {name: PredictionHead(cfg.decoder_width) for name in cfg.active_flows})

    def encode(self, rgb: torch.Tensor, thermal: torch.Tensor):
        if self.cfg.shared_encoder:
            return self.encoder.extract_pyramid(rgb), self.encoder.extract_pyramid(thermal)
        return (self.encoder_rgb.extract_pyramid(rgb),
                self.encoder_thermal.extract_pyramid(thermal))

    def extract_pyramids(self, pair) -> tuple[FeaturePyramid, FeaturePyramid]:
        return self.encode(pair.rgb, pair.thermal)

    def forward(self, rgb: torch.Tensor, thermal: torch.Tensor) -> SaliencyBundle:
        if rgb.shape != thermal.shape:
            raise ValueError(
                f"rgb/thermal shape mismatch {tuple(rgb.shape)} vs {tuple(thermal.shape)}")
        out_size = rgb.shape[-2:]
        e_r, e_t = self.encode(rgb, thermal)
        flows = self.cfg.active_flows

        d_r = specific_flow_decode(self.flow["rgb"], e_r) if "rgb" in flows else None
        d_t = specific_flow_decode(self.flow["thermal"], e_t) if "thermal" in flows else None
        d_s = None
        if "complementary" in flows:
            e_s = self.mfm(e_r, e_t)
            mdam = self.mdam if self.cfg.uses_mdam else None
            d_s = complementary_flow_decode(self.flow["complementary"], mdam, e_s, d_r, d_t)

        logits_r = self.head["rgb"](d_r[0], out_size) if d_r is not None else None
        logits_t = self.head["thermal"](d_t[0], out_size) if d_t is not None else None
        logits_s = self.head["complementary"](d_s[0], out_size) if d_s is not None else None

        active = [l for l in (logits_r, logits_t, logits_s) if l is not None]
        m_f = fuse_flows(active, space=self.cfg.fusion_space)
        sig = lambda l: torch.sigmoid(l) if l is not None else None
        return SaliencyBundle(
            logits_r=logits_r, logits_t=logits_t, logits_s=logits_s,
            m_r=sig(logits_r), m_t=sig(logits_t), m_s=sig(logits_s), m_f=m_f)

    # ---- parameter store bridge -------------------------------------------------

    def to_param_store(self, meta: dict | None = None) -> ParamStore:
        store = ParamStore(meta=meta)
        store.meta.setdefault("config", self.cfg.to_dict())
        for key, value in self.state_dict().items():
            store[key] = value.detach().cpu().numpy()
        return store

    def load_param_store(self, store: ParamStore) -> None:
        state = self.state_dict()
        missing = set(state) - set(store.keys())
        extra = {k for k in store.keys() if not k.startswith(("optim.", "rng."))} - set(state)
        if missing or extra:
            raise CheckpointError(
                f"parameter paths do not match the model: missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]}")
        new_state = {}
        for key, tensor in state.items():
            arr = store[key]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"shape mismatch for {key!r}: checkpoint {tuple(arr.shape)}, "
                    f"model {tuple(tensor.shape)}")
            new_state[key] = torch.from_numpy(np.array(arr)).to(tensor.dtype)
        self.load_state_dict(new_state)


def build_model(cfg: ModelConfig, seed: int | None = None) -> TripleFlowNet:
    """Construct a model, optionally with fully seeded initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return TripleFlowNet(cfg)
