"""Latent-space noise predictor.

A compact three-level U-Net over 4-channel latents. Timestep information
enters every residual block through a learned embedding; caption tokens
enter through cross-attention at the two coarser levels; conditioning
features, when provided, modulate one residual block per level via the
spatial feature transform right before the residual add. The output
convolution starts at zero so an untrained model predicts zero noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .embeddings import sinusoid_features
from .mwt_encoder import SFTParams, sft_affine


@dataclass
class DenoiserSpec:
    latent_channels: int = 4
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    num_heads: int = 4
    time_dim: int = 128
    text_dim: int = 64

    def __post_init__(self):
        if len(self.channel_mults) != 3:
            raise ValueError("this denoiser is fixed at 3 levels")


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


class ResBlock(nn.Module):
    """GroupNorm/SiLU/conv pair with a timestep shift and optional SFT."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = _gn(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = _gn(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(
        self,
        x: torch.Tensor,
        temb: torch.Tensor,
        sft: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        if sft is not None:
            h = sft_affine(h, sft[0], sft[1])
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Feature tokens attend over the caption token sequence."""

    def __init__(self, channels: int, text_dim: int, num_heads: int):
        super().__init__()
        if channels % num_heads:
            raise ValueError(f"channels {channels} not divisible by heads {num_heads}")
        self.num_heads = num_heads
        self.scale = (channels // num_heads) ** -0.5
        self.norm = _gn(channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(text_dim, channels)
        self.v = nn.Linear(text_dim, channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        B, C, H, W = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)

        def heads(t):
            return t.reshape(B, -1, self.num_heads, C // self.num_heads).transpose(1, 2)

        q = heads(self.q(tokens))
        k = heads(self.k(text))
        v = heads(self.v(text))
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, H * W, C)
        out = self.proj(out).transpose(1, 2).reshape(B, C, H, W)
        return x + out


class DenoiserUNet(nn.Module):
    """Three-level conditional U-Net predicting the corrupting noise."""

    def __init__(self, spec: DenoiserSpec, t_max: int):
        super().__init__()
        self.spec = spec
        self.t_max = t_max
        c1, c2, c3 = (spec.base_channels * m for m in spec.channel_mults)

        self.time_embed = nn.Sequential(
            nn.Linear(spec.time_dim, spec.time_dim),
            nn.SiLU(),
            nn.Linear(spec.time_dim, spec.time_dim),
        )

        self.conv_in = nn.Conv2d(spec.latent_channels, c1, 3, padding=1)
        self.down_block1 = ResBlock(c1, c1, spec.time_dim)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down_block2 = ResBlock(c2, c2, spec.time_dim)
        self.down_attn2 = CrossAttention(c2, spec.text_dim, spec.num_heads)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.down_block3 = ResBlock(c3, c3, spec.time_dim)
        self.down_attn3 = CrossAttention(c3, spec.text_dim, spec.num_heads)

        self.mid_block1 = ResBlock(c3, c3, spec.time_dim)  # modulation site 2
        self.mid_attn = CrossAttention(c3, spec.text_dim, spec.num_heads)
        self.mid_block2 = ResBlock(c3, c3, spec.time_dim)

        self.up2 = nn.ConvTranspose2d(c3, c2, 2, stride=2)
        self.up_block2 = ResBlock(c2 + c2, c2, spec.time_dim)  # modulation site 1
        self.up_attn2 = CrossAttention(c2, spec.text_dim, spec.num_heads)
        self.up1 = nn.ConvTranspose2d(c2, c1, 2, stride=2)
        self.up_block1 = ResBlock(c1 + c1, c1, spec.time_dim)  # modulation site 0

        self.norm_out = _gn(c1)
        self.conv_out = nn.Conv2d(c1, spec.latent_channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    @property
    def modulation_sites(self) -> list[tuple[int, int]]:
        """(channels, downscale factor) per SFT site, finest first."""
        c1, c2, c3 = (self.spec.base_channels * m for m in self.spec.channel_mults)
        return [(c1, 1), (c2, 2), (c3, 4)]

    def forward(
        self,
        z_t: torch.Tensor,
        t_steps: torch.Tensor,
        text: torch.Tensor,
        cond: SFTParams | None = None,
    ) -> torch.Tensor:
        if z_t.dim() != 4 or z_t.shape[1] != self.spec.latent_channels:
            raise ValueError(
                f"expected (B, {self.spec.latent_channels}, h, w) latents, "
                f"got {tuple(z_t.shape)}"
            )
        if z_t.shape[-2] % 4 or z_t.shape[-1] % 4:
            raise ValueError(
                f"latent spatial shape {tuple(z_t.shape[-2:])} must be divisible by 4"
            )
        if t_steps.dim() != 1 or t_steps.shape[0] != z_t.shape[0]:
            raise ValueError("t_steps must be a (B,) tensor matching the batch")
        if t_steps.is_floating_point():
            raise ValueError("t_steps must be integer-typed")
        if torch.any(t_steps < 1) or torch.any(t_steps > self.t_max):
            raise ValueError(f"timesteps must lie in [1, {self.t_max}]")
        if text.dim() != 3 or text.shape[0] != z_t.shape[0] or text.shape[2] != self.spec.text_dim:
            raise ValueError(
                f"text must be (B, L, {self.spec.text_dim}), got {tuple(text.shape)}"
            )
        if cond is not None and len(cond) != 3:
            raise ValueError(
                f"this denoiser has 3 modulation sites, got {len(cond)} parameter pairs"
            )
        sft = cond.pairs if cond is not None else [None, None, None]

        dtype = self.conv_in.weight.dtype
        temb = self.time_embed(sinusoid_features(t_steps, self.spec.time_dim).to(dtype))

        h1 = self.down_block1(self.conv_in(z_t), temb)
        h2 = self.down_attn2(self.down_block2(self.down1(h1), temb), text)
        h3 = self.down_attn3(self.down_block3(self.down2(h2), temb), text)

        m = self.mid_block1(h3, temb, sft[2])
        m = self.mid_attn(m, text)
        m = self.mid_block2(m, temb)

        u2 = self.up_block2(torch.cat([self.up2(m), h2], dim=1), temb, sft[1])
        u2 = self.up_attn2(u2, text)
        u1 = self.up_block1(torch.cat([self.up1(u2), h1], dim=1), temb, sft[0])

        return self.conv_out(nn.functional.silu(self.norm_out(u1)))
