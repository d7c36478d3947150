"""Dynamic aggregation: weights, identity behavior, oracle equivalence."""

import math

import numpy as np
import pytest
import torch

import oracles
from triflownet.config import toy_config
from triflownet.encoder import FeaturePyramid
from triflownet.mdam import MdamBlock, MdamStack, complementary_flow_decode
from triflownet.raspm import RaspmStack


@pytest.fixture(autouse=True)
def _no_grad():
    with torch.no_grad():
        yield


def _rand(shape, seed, scale=1.0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=gen, dtype=torch.float64) * scale


def _triple(seed, shape=(1, 4, 6, 6)):
    return [_rand(shape, seed + i) for i in range(3)]


def _zeroed_block(mode="dynamic", width=4):
    block = MdamBlock(width, mode=mode).double().eval()
    for p in block.parameters():
        p.zero_()
    return block


class TestDynamicWeights:
    def test_zero_head_gives_half_half(self):
        block = _zeroed_block()
        alpha, beta = block.dynamic_weights(_rand((3, 4, 6, 6), 0))
        assert torch.allclose(alpha, torch.full_like(alpha, 0.5))
        assert torch.allclose(beta, torch.full_like(beta, 0.5))

    def test_rigged_logits_give_three_quarters(self):
        block = _zeroed_block()
        block.fc2.bias.copy_(torch.tensor([math.log(3.0), 0.0], dtype=torch.float64))
        alpha, beta = block.dynamic_weights(_rand((2, 4, 6, 6), 1))
        assert torch.allclose(alpha, torch.full_like(alpha, 0.75))
        assert torch.allclose(beta, torch.full_like(beta, 0.25))

    def test_sum_to_one_over_thousand_draws(self):
        torch.manual_seed(2)
        block = MdamBlock(4).double().eval()
        f_a = _rand((1000, 4, 5, 5), 3, scale=4.0)
        alpha, beta = block.dynamic_weights(f_a)
        assert torch.all(alpha > 0) and torch.all(alpha < 1)
        assert torch.all(beta > 0) and torch.all(beta < 1)
        assert torch.max(torch.abs(alpha + beta - 1.0)) < 1e-6


class TestMdamBlock:
    def test_all_zero_inputs_and_biases_give_zero(self):
        block = _zeroed_block()
        z = torch.zeros(1, 4, 6, 6, dtype=torch.float64)
        assert torch.all(block(z, z, z) == 0)

    def test_exact_identity_with_zero_weights(self):
        for mode in ("dynamic", "fixed_weights", "no_doe"):
            block = _zeroed_block(mode)
            d_r, d_t, d_s = _triple(10)
            assert torch.equal(block(d_r, d_t, d_s), d_s)

    def test_matches_loop_oracle(self):
        torch.manual_seed(4)
        block = MdamBlock(4).double().eval()
        d_r, d_t, d_s = _triple(20)
        out = block(d_r, d_t, d_s)
        ref = oracles.mdam_block(oracles.params_of(block), d_r.numpy(),
                                 d_t.numpy(), d_s.numpy())
        np.testing.assert_allclose(out.numpy(), ref, atol=1e-6)
        alpha, beta = block.dynamic_weights(
            block.agg(torch.cat([d_r * d_s, d_t * d_s], dim=1)))
        assert abs(float(alpha + beta) - 1.0) < 1e-6

    def test_fixed_weights_mode_matches_bypassed_oracle(self):
        torch.manual_seed(5)
        block = MdamBlock(4).double().eval()
        fixed = MdamBlock(4, mode="fixed_weights").double().eval()
        fixed.load_state_dict(block.state_dict())
        d_r, d_t, d_s = _triple(30)
        ref = oracles.mdam_block(oracles.params_of(fixed), d_r.numpy(),
                                 d_t.numpy(), d_s.numpy(), mode="fixed_weights")
        np.testing.assert_allclose(fixed(d_r, d_t, d_s).numpy(), ref, atol=1e-6)

    def test_fixed_weights_differ_from_dynamic_when_logits_unequal(self):
        torch.manual_seed(6)
        block = MdamBlock(4).double().eval()
        block.fc1.weight.zero_()
        block.fc1.bias.zero_()
        block.fc2.weight.zero_()
        block.fc2.bias.copy_(torch.tensor([2.0, -1.0], dtype=torch.float64))
        fixed = MdamBlock(4, mode="fixed_weights").double().eval()
        fixed.load_state_dict(block.state_dict())
        d_r, d_t, d_s = _triple(40)
        assert not torch.allclose(block(d_r, d_t, d_s), fixed(d_r, d_t, d_s))

    def test_no_doe_mode_differs_and_matches_its_oracle(self):
        torch.manual_seed(7)
        block = MdamBlock(4).double().eval()
        bare = MdamBlock(4, mode="no_doe").double().eval()
        bare.load_state_dict(block.state_dict())
        d_r, d_t, d_s = _triple(50)
        assert not torch.allclose(block(d_r, d_t, d_s), bare(d_r, d_t, d_s))
        ref = oracles.mdam_block(oracles.params_of(bare), d_r.numpy(),
                                 d_t.numpy(), d_s.numpy(), mode="no_doe")
        np.testing.assert_allclose(bare(d_r, d_t, d_s).numpy(), ref, atol=1e-6)

    def test_detail_gate_inside_unit_interval(self):
        torch.manual_seed(8)
        block = MdamBlock(4).double().eval()
        gate = block.detail_gate(_rand((1, 4, 6, 6), 60, scale=5.0))
        assert torch.all(gate > 0) and torch.all(gate < 1)

    def test_shape_mismatch_rejected(self):
        block = MdamBlock(4).double().eval()
        a = torch.zeros(1, 4, 6, 6, dtype=torch.float64)
        b = torch.zeros(1, 4, 5, 5, dtype=torch.float64)
        with pytest.raises(ValueError, match="share one shape"):
            block(a, a, b)


def _pyramid(channels, base=32, seed=70):
    levels = []
    size = base
    for i, c in enumerate(channels):
        levels.append(_rand((1, c, size, size), seed + i))
        size //= 2
    return FeaturePyramid(levels)


class TestComplementaryFlow:
    def test_missing_specific_flows_rejected(self):
        cfg = toy_config()
        torch.manual_seed(9)
        stack = RaspmStack(cfg, cfg.encoder_channels).double().eval()
        mdam = MdamStack(cfg).double().eval()
        pyramid = _pyramid(cfg.encoder_channels)
        with pytest.raises(ValueError, match="specific-flow outputs"):
            complementary_flow_decode(stack, mdam, pyramid, None, None)

    def test_zero_everything_gives_zero(self):
        cfg = toy_config()
        torch.manual_seed(10)
        stack = RaspmStack(cfg, cfg.encoder_channels).double().eval()
        mdam = MdamStack(cfg).double().eval()
        for p in mdam.parameters():
            p.zero_()
        pyramid = _pyramid(cfg.encoder_channels)
        zeros = FeaturePyramid([torch.zeros_like(l) for l in pyramid])
        sizes = [l.shape[-2:] for l in pyramid]
        d_zero = [torch.zeros(1, cfg.decoder_width, *s, dtype=torch.float64)
                  for s in sizes]
        for d in complementary_flow_decode(stack, mdam, zeros, d_zero, d_zero):
            assert torch.all(d == 0)

    def test_without_mdam_is_pure_raspm_recursion(self):
        cfg = toy_config()
        torch.manual_seed(11)
        stack = RaspmStack(cfg, cfg.encoder_channels).double().eval()
        pyramid = _pyramid(cfg.encoder_channels, seed=80)
        from triflownet.raspm import specific_flow_decode

        outs = complementary_flow_decode(stack, None, pyramid, None, None)
        ref = specific_flow_decode(stack, pyramid)
        for got, want in zip(outs, ref):
            assert torch.equal(got, want)
