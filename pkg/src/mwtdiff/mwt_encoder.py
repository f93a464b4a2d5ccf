"""Conditioning encoder and spatial feature transform layers.

The encoder walks the conditioning latent (the encoded upsampled LR
image) down a small convolutional trunk, injecting the conditioning
bundle b at every scale through a learned projection, and emits one
feature map per denoiser modulation site. Each site's SFT head turns
that feature map into a (gamma, beta) pair; the affine is
(1 + gamma) * f + beta, and because the heads' final convolutions start
at zero the whole pathway is exactly the identity at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .embeddings import ConditioningBundle, MetadataEmbedder, TimestepEmbedder


def sft_affine(f_dif: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Elementwise (1 + gamma) * f_dif + beta with strict shape agreement."""
    if gamma.shape != f_dif.shape or beta.shape != f_dif.shape:
        raise ValueError(
            f"modulation shapes {tuple(gamma.shape)}/{tuple(beta.shape)} must match "
            f"features {tuple(f_dif.shape)}"
        )
    return (1.0 + gamma) * f_dif + beta


class SFTLayer(nn.Module):
    """Predicts a (gamma, beta) pair from one conditioning feature map.

    The closing convolution is zero-initialized, so a fresh layer
    modulates nothing.
    """

    def __init__(self, cond_channels: int, feature_channels: int, hidden: int = 64):
        super().__init__()
        self.feature_channels = feature_channels
        self.net = nn.Sequential(
            nn.Conv2d(cond_channels, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, 2 * feature_channels, 3, padding=1),
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def params(self, f_cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        gamma, beta = self.net(f_cond).chunk(2, dim=1)
        return gamma, beta

    def forward(self, f_dif: torch.Tensor, f_cond: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.params(f_cond)
        return sft_affine(f_dif, gamma, beta)


@dataclass
class MultiScaleFeatures:
    """Per-site conditioning maps, finest scale first."""

    features: list[torch.Tensor]

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class SFTParams:
    """Per-site (gamma, beta) pairs, aligned with MultiScaleFeatures order."""

    pairs: list[tuple[torch.Tensor, torch.Tensor]]

    def __len__(self) -> int:
        return len(self.pairs)


class SFTHeads(nn.Module):
    """One SFT head per modulation site."""

    def __init__(self, cond_channels: list[int], feature_channels: list[int], hidden: int = 64):
        super().__init__()
        if len(cond_channels) != len(feature_channels):
            raise ValueError(
                f"got {len(cond_channels)} conditioning scales for "
                f"{len(feature_channels)} modulation sites"
            )
        self.heads = nn.ModuleList(
            SFTLayer(c, f, hidden) for c, f in zip(cond_channels, feature_channels)
        )

    def forward(self, features: MultiScaleFeatures) -> SFTParams:
        if len(features) != len(self.heads):
            raise ValueError(
                f"expected {len(self.heads)} feature maps, got {len(features)}"
            )
        return SFTParams(
            pairs=[head.params(f) for head, f in zip(self.heads, features.features)]
        )


class _TrunkBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(math.gcd(8, channels), channels)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv(nn.functional.silu(self.norm(x)))


class MWTEncoder(nn.Module):
    """Multi-scale conditioning encoder over the LR latent and bundle b.

    Produces len(level_channels) feature maps; level i lives at 1/2**i of
    the latent resolution with level_channels[i] channels.
    """

    def __init__(
        self,
        latent_channels: int,
        bundle_dim: int,
        level_channels: list[int],
        hidden: int = 64,
    ):
        super().__init__()
        if len(level_channels) < 1:
            raise ValueError("need at least one conditioning level")
        self.bundle_dim = bundle_dim
        self.level_channels = list(level_channels)
        self.stem = nn.Conv2d(latent_channels, level_channels[0], 3, padding=1)
        self.bundle_projs = nn.ModuleList(
            nn.Linear(bundle_dim, c) for c in level_channels
        )
        self.blocks = nn.ModuleList(_TrunkBlock(c) for c in level_channels)
        self.heads = nn.ModuleList(
            nn.Conv2d(c, c, 3, padding=1) for c in level_channels
        )
        self.downs = nn.ModuleList(
            nn.Conv2d(level_channels[i], level_channels[i + 1], 3, stride=2, padding=1)
            for i in range(len(level_channels) - 1)
        )

    def forward(self, z_cond: torch.Tensor, b: torch.Tensor) -> MultiScaleFeatures:
        if z_cond.dim() != 4:
            raise ValueError(f"expected NCHW latents, got {tuple(z_cond.shape)}")
        if b.dim() != 2 or b.shape[0] != z_cond.shape[0]:
            raise ValueError(
                f"bundle must be (B, {self.bundle_dim}) matching the batch, "
                f"got {tuple(b.shape)}"
            )
        if b.shape[1] != self.bundle_dim:
            raise ValueError(
                f"bundle width {b.shape[1]} does not match encoder width {self.bundle_dim}"
            )
        feats = []
        x = self.stem(z_cond)
        for i, (proj, block, head) in enumerate(
            zip(self.bundle_projs, self.blocks, self.heads)
        ):
            x = x + proj(b)[:, :, None, None]
            x = block(x)
            feats.append(head(x))
            if i < len(self.downs):
                x = self.downs[i](x)
        return MultiScaleFeatures(features=feats)


class DeltaEncoder(nn.Module):
    """The full conditioning encoder: bundle assembly plus the trunk.

    Owns the learned metadata and timestep embedders; the wavelet vector
    w arrives precomputed (it comes from the frozen wavelet transformer).
    Metadata can be passed either as records or as precomputed sinusoid
    features, which keeps training loops off the numpy path.
    """

    def __init__(
        self,
        d_embed: int,
        t_max: int,
        latent_channels: int,
        level_channels: list[int],
        hidden: int = 64,
    ):
        super().__init__()
        self.d_embed = d_embed
        self.meta = MetadataEmbedder(d_embed)
        self.time = TimestepEmbedder(d_embed, t_max)
        self.trunk = MWTEncoder(
            latent_channels=latent_channels,
            bundle_dim=3 * d_embed,
            level_channels=level_channels,
            hidden=hidden,
        )

    @property
    def bundle_dim(self) -> int:
        return 3 * self.d_embed

    def bundle(
        self,
        meta_features: torch.Tensor,
        w: torch.Tensor,
        t_steps: torch.Tensor,
    ) -> ConditioningBundle:
        """Assemble b = [m | w | t] from precomputed pieces."""
        m = self.meta.proj(meta_features.to(self.meta.proj.weight.dtype))
        t = self.time(t_steps)
        if w.shape != m.shape:
            raise ValueError(
                f"w shape {tuple(w.shape)} does not match m {tuple(m.shape)}"
            )
        return ConditioningBundle(m=m, w=w, t=t)

    def forward(
        self,
        z_cond: torch.Tensor,
        meta_features: torch.Tensor,
        w: torch.Tensor,
        t_steps: torch.Tensor,
    ) -> MultiScaleFeatures:
        b = self.bundle(meta_features, w, t_steps).b
        return self.trunk(z_cond, b)
