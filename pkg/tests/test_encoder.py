"""Union encoder: weight sharing, shape schedule, gradients, complexity."""

import pytest
import torch
from torch import nn

from triflownet.complexity import count_params_and_macs
from triflownet.config import toy_config, validate_config, ModelConfig
from triflownet.data import ImagePair
from triflownet.encoder import UnionEncoder
from triflownet.gradcheck import input_grad_error
from triflownet.model import build_model


@pytest.fixture()
def toy_encoder():
    torch.manual_seed(0)
    return UnionEncoder(toy_config()).eval()


class TestWeightSharing:
    def test_swapping_inputs_swaps_outputs_bitwise(self, toy_encoder):
        x = torch.rand(1, 3, 64, 64)
        y = torch.rand(1, 3, 64, 64)
        a_x, a_y = toy_encoder.extract_pyramid(x), toy_encoder.extract_pyramid(y)
        b_y, b_x = toy_encoder.extract_pyramid(y), toy_encoder.extract_pyramid(x)
        for lx, ly, mx, my in zip(a_x, a_y, b_x, b_y):
            assert torch.equal(lx, mx)
            assert torch.equal(ly, my)

    def test_parameter_paths_carry_no_modality_tag(self):
        model = build_model(toy_config(), seed=0)
        for name, _ in model.encoder.named_parameters():
            assert "rgb" not in name and "thermal" not in name

    def test_model_extract_pyramids_uses_one_weight_set(self):
        model = build_model(toy_config(), seed=0).eval()
        x = torch.rand(1, 3, 64, 64)
        y = torch.rand(1, 3, 64, 64)
        e_r, e_t = model.extract_pyramids(ImagePair(rgb=x, thermal=y))
        f_t, f_r = model.extract_pyramids(ImagePair(rgb=y, thermal=x))
        for a, b in zip(e_r, f_r):
            assert torch.equal(a, b)
        for a, b in zip(e_t, f_t):
            assert torch.equal(a, b)


class TestShapes:
    def test_toy_shape_schedule_64(self, toy_encoder):
        # Hand-computed stride arithmetic: 64 -> 32, 16, 8, 4, 2 with the toy widths.
        pyramid = toy_encoder.extract_pyramid(torch.rand(1, 3, 64, 64))
        expected = [(8, 32, 32), (16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]
        got = [tuple(level.shape[1:]) for level in pyramid]
        assert got == expected

    @pytest.mark.parametrize("size", [32, 64, 96])
    def test_level_i_is_input_over_2_pow_i(self, toy_encoder, size):
        pyramid = toy_encoder.extract_pyramid(torch.rand(1, 3, size, size))
        for i, level in enumerate(pyramid, start=1):
            assert level.shape[-1] == size // (2 ** i)

    def test_indivisible_size_rejected(self, toy_encoder):
        with pytest.raises(ValueError, match="divisible by 32"):
            toy_encoder.extract_pyramid(torch.rand(1, 3, 60, 60))

    def test_zero_input_zero_biases_gives_zero_pyramid(self):
        torch.manual_seed(0)
        enc = UnionEncoder(toy_config()).eval()
        # Zero the additive terms; ReLU fixes 0 at 0, so zero propagates.
        with torch.no_grad():
            for m in enc.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m.bias.zero_()
                    m.running_mean.zero_()
        for level in enc.extract_pyramid(torch.zeros(1, 3, 64, 64)):
            assert torch.all(level == 0)

    def test_finite_output_for_finite_input(self, toy_encoder):
        for level in toy_encoder.extract_pyramid(torch.rand(2, 3, 64, 64) * 10):
            assert torch.isfinite(level).all()


class TestEncoderGradients:
    def test_input_gradients_match_finite_differences(self):
        torch.manual_seed(1)
        enc = UnionEncoder(toy_config()).double().eval()
        x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        gen = torch.Generator().manual_seed(2)
        projs = None

        def scalar(a):
            nonlocal projs
            levels = enc(a)
            if projs is None:
                projs = [torch.randn(l.shape, generator=gen, dtype=torch.float64)
                         for l in levels]
            return sum((p * l).sum() for p, l in zip(projs, levels))

        assert input_grad_error(scalar, [x]) <= 1e-4


class TestComplexity:
    def test_single_conv_param_count(self):
        conv = nn.Conv2d(2, 4, 3, padding=1)
        params, macs = count_params_and_macs(conv, torch.zeros(1, 2, 5, 5))
        assert params == 2 * 4 * 9 + 4 == 76
        assert macs == 4 * 5 * 5 * (2 * 9)

    def test_identity_model_counts_zero(self):
        params, macs = count_params_and_macs(nn.Identity(), torch.zeros(1, 3, 8, 8))
        assert (params, macs) == (0, 0)

    def test_res2net50_encoder_builds_and_counts(self):
        cfg = validate_config(ModelConfig(encoder="res2net50", input_size=64))
        torch.manual_seed(0)
        enc = UnionEncoder(cfg).eval()
        pyramid = enc.extract_pyramid(torch.rand(1, 3, 64, 64))
        assert [l.shape[1] for l in pyramid] == [64, 256, 512, 1024, 2048]
        params, macs = count_params_and_macs(enc, torch.zeros(1, 3, 64, 64))
        # Res2Net-50 backbone weight count, published order of magnitude.
        assert 20_000_000 < params < 30_000_000
        assert macs > 0
