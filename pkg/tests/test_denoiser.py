"""Denoiser U-Net: shapes, validation, conditioning, gradient integrity."""

import pytest
import torch

from helpers import finite_difference_check
from mwtdiff.denoiser import DenoiserSpec, DenoiserUNet
from mwtdiff.diffusion import NoiseSchedule, noise_prediction_loss
from mwtdiff.mwt_encoder import MWTEncoder, SFTHeads


def micro_spec():
    return DenoiserSpec(base_channels=8, channel_mults=(1, 2, 4), num_heads=2,
                        time_dim=16, text_dim=8)


@pytest.fixture
def unet():
    torch.manual_seed(0)
    return DenoiserUNet(micro_spec(), t_max=100)


def inputs(batch=2, size=16, text_dim=8, seed=0):
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, 4, size, size, generator=gen)
    t = torch.randint(1, 101, (batch,), generator=gen)
    text = torch.randn(batch, 5, text_dim, generator=gen)
    return z, t, text


class TestForward:
    def test_output_matches_latent_shape(self, unet):
        z, t, text = inputs()
        assert unet(z, t, text).shape == z.shape

    def test_fresh_model_predicts_zero(self, unet):
        """Zero-initialized output convolution silences the whole net."""
        z, t, text = inputs()
        out = unet(z, t, text)
        assert torch.equal(out, torch.zeros_like(out))

    def test_works_on_other_latent_sizes(self, unet):
        z, t, text = inputs(size=8)
        assert unet(z, t, text).shape == z.shape

    @pytest.mark.parametrize("t_bad", [0, 101])
    def test_timestep_range_enforced(self, unet, t_bad):
        z, _, text = inputs()
        with pytest.raises(ValueError, match=r"\[1, 100\]"):
            unet(z, torch.tensor([t_bad, 1]), text)

    def test_text_width_enforced(self, unet):
        z, t, _ = inputs()
        with pytest.raises(ValueError, match="text"):
            unet(z, t, torch.randn(2, 5, 9))

    def test_indivisible_latent_rejected(self, unet):
        with pytest.raises(ValueError, match="divisible"):
            unet(torch.randn(1, 4, 10, 10), torch.tensor([1]),
                 torch.randn(1, 5, 8))

    def test_wrong_cond_count_rejected(self, unet):
        from mwtdiff.mwt_encoder import SFTParams

        z, t, text = inputs()
        bad = SFTParams(pairs=[(torch.zeros(2, 8, 16, 16), torch.zeros(2, 8, 16, 16))] * 2)
        with pytest.raises(ValueError, match="modulation sites"):
            unet(z, t, text, cond=bad)

    def test_modulation_sites_descend_in_resolution(self, unet):
        assert unet.modulation_sites == [(8, 1), (16, 2), (32, 4)]


class TestConditioningEquivalence:
    def test_fresh_sft_heads_change_nothing(self, unet):
        """Zero-initialized SFT heads leave the prediction untouched."""
        torch.manual_seed(1)
        with torch.no_grad():  # give the net a visible output first
            unet.conv_out.weight.normal_(0, 0.05)
            unet.conv_out.bias.normal_(0, 0.05)
        enc = MWTEncoder(latent_channels=4, bundle_dim=24, level_channels=[8, 16, 32])
        heads = SFTHeads([8, 16, 32], [c for c, _ in unet.modulation_sites])
        z, t, text = inputs()
        feats = enc(torch.randn(2, 4, 16, 16), torch.randn(2, 24))
        base = unet(z, t, text)
        modulated = unet(z, t, text, cond=heads(feats))
        assert (base - modulated).abs().max().item() <= 1e-7

    def test_trained_sft_heads_do_change_output(self, unet):
        torch.manual_seed(2)
        with torch.no_grad():
            unet.conv_out.weight.normal_(0, 0.05)
        enc = MWTEncoder(4, 24, [8, 16, 32])
        heads = SFTHeads([8, 16, 32], [c for c, _ in unet.modulation_sites])
        with torch.no_grad():  # pretend training moved the heads
            for head in heads.heads:
                head.net[-1].weight.normal_(0, 0.1)
        z, t, text = inputs()
        feats = enc(torch.randn(2, 4, 16, 16), torch.randn(2, 24))
        base = unet(z, t, text)
        modulated = unet(z, t, text, cond=heads(feats))
        assert (base - modulated).abs().max().item() > 1e-4


class TestCaptionPathway:
    def test_captions_matter_after_training(self, unet):
        """A few optimization steps wake up the cross-attention path."""
        torch.manual_seed(3)
        z, t, _ = inputs()
        text_a = torch.randn(2, 5, 8)
        text_b = torch.randn(2, 5, 8)
        opt = torch.optim.Adam(unet.parameters(), lr=1e-3)
        for _ in range(8):
            loss = ((unet(z, t, text_a) - torch.randn_like(z)) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        out_a = unet(z, t, text_a)
        out_b = unet(z, t, text_b)
        assert (out_a - out_b).abs().max().item() > 1e-6

    def test_timestep_matters_after_training(self, unet):
        torch.manual_seed(4)
        z, _, text = inputs()
        opt = torch.optim.Adam(unet.parameters(), lr=1e-3)
        for _ in range(8):
            t = torch.randint(1, 101, (2,))
            loss = ((unet(z, t, text) - torch.randn_like(z)) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        a = unet(z, torch.tensor([1, 1]), text)
        b = unet(z, torch.tensor([100, 100]), text)
        assert (a - b).abs().max().item() > 1e-6


def test_training_loss_gradients_match_finite_differences():
    """End-to-end objective gradient against central differences."""
    torch.manual_seed(5)
    sched = NoiseSchedule.linear(50)
    unet = DenoiserUNet(micro_spec(), t_max=50)
    with torch.no_grad():  # zero conv_out would zero most gradients
        unet.conv_out.weight.normal_(0, 0.1)
        unet.conv_out.bias.normal_(0, 0.1)
    z0 = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    eps = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    t = torch.tensor([25])
    text = torch.randn(1, 4, 8, dtype=torch.float64)

    def loss_fn(m):
        return noise_prediction_loss(sched, lambda zt, tt: m(zt, tt, text), z0, t, eps)

    assert finite_difference_check(unet, loss_fn, num_probes=20, seed=2) <= 1e-3
