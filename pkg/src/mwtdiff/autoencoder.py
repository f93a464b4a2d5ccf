"""Convolutional autoencoder that defines the diffusion latent space.

Spatial compression is 4x with a small channel bottleneck. A tiny KL
penalty (off by default weight only, not architecture) keeps the
posterior from drifting arbitrarily far from a unit ball; with
kl_weight=0 the model degrades gracefully to a plain autoencoder that
encodes through the posterior mean alone. Diffusion always consumes the
posterior mean scaled by a fitted constant so latents are near unit
variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .images import ImageTensor, hwc_to_nchw, nchw_to_hwc


@dataclass
class LatentTensor:
    """Latent for one image: float32 CHW plus the global scale in force."""

    data: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"expected CHW latent, got shape {self.data.shape}")


def _block(channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.GroupNorm(8, channels),
        nn.SiLU(),
        nn.Conv2d(channels, channels, 3, padding=1),
    )


class ConvVAE(nn.Module):
    """4x-downsampling encoder/decoder pair with a diagonal Gaussian posterior."""

    scale_factor = 4

    def __init__(self, latent_channels: int = 4, base_channels: int = 32):
        super().__init__()
        self.latent_channels = latent_channels
        c = base_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(3, c, 3, padding=1),
            _block(c),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            _block(2 * c),
            nn.Conv2d(2 * c, 2 * c, 3, stride=2, padding=1),
            _block(2 * c),
            nn.Conv2d(2 * c, 2 * latent_channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, 2 * c, 3, padding=1),
            _block(2 * c),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * c, 2 * c, 3, padding=1),
            _block(2 * c),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * c, c, 3, padding=1),
            _block(c),
            nn.Conv2d(c, 3, 3, padding=1),
        )

    def _check_images(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(x.shape)}")
        if x.shape[-2] % self.scale_factor or x.shape[-1] % self.scale_factor:
            raise ValueError(
                f"spatial shape {tuple(x.shape[-2:])} must be divisible by "
                f"{self.scale_factor}"
            )
        if x.min() < 0.0 or x.max() > 1.0:
            raise ValueError(
                f"pixel values outside [0, 1]: min={float(x.min()):.4f} "
                f"max={float(x.max()):.4f}"
            )

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Posterior parameters (mu, logvar), each (B, C_lat, H/4, W/4)."""
        self._check_images(x)
        mu, logvar = self.encoder(x).chunk(2, dim=1)
        return mu, logvar.clamp(-30.0, 20.0)

    def encode_mean(self, x: torch.Tensor) -> torch.Tensor:
        """Deterministic latent: the posterior mean."""
        return self.encode(x)[0]

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """Map latents back to [0,1] images."""
        if z.dim() != 4 or z.shape[1] != self.latent_channels:
            raise ValueError(
                f"expected (B, {self.latent_channels}, h, w) latents, got {tuple(z.shape)}"
            )
        return torch.sigmoid(self.decoder(z))

    def forward(
        self, x: torch.Tensor, sample: bool, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Full pass; returns (reconstruction, mu, logvar)."""
        mu, logvar = self.encode(x)
        z = mu
        if sample:
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
            z = mu + (0.5 * logvar).exp() * noise
        return self.decode(z), mu, logvar

    # Convenience single-image API over the container types.

    def encode_image(self, image: ImageTensor, scale: float = 1.0) -> LatentTensor:
        with torch.no_grad():
            mu = self.encode_mean(hwc_to_nchw(image.data))
        return LatentTensor(data=(mu[0] * scale).numpy(), scale=scale)

    def decode_latent(self, latent: LatentTensor) -> ImageTensor:
        z = torch.from_numpy(latent.data / latent.scale)[None]
        with torch.no_grad():
            img = self.decode(z)
        return ImageTensor(data=nchw_to_hwc(img)[0], role="sr")


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Mean KL between the diagonal posterior and a standard normal."""
    return 0.5 * torch.mean(mu.pow(2) + logvar.exp() - 1.0 - logvar)


def train_vae(
    model: ConvVAE,
    images: torch.Tensor,
    epochs: int,
    lr: float,
    batch_size: int,
    kl_weight: float,
    seed: int,
    log=None,
) -> dict:
    """Reconstruction training; returns per-epoch loss history.

    With kl_weight > 0 the encoder is sampled through the
    reparameterization trick; with kl_weight == 0 no sampling happens and
    the KL term is dropped entirely.
    """
    if kl_weight < 0:
        raise ValueError(f"kl_weight must be >= 0, got {kl_weight}")
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    model.train()
    for epoch in range(epochs):
        perm = torch.randperm(images.shape[0], generator=gen)
        tot_rec, tot_kl, seen = 0.0, 0.0, 0
        for i in range(0, perm.shape[0], batch_size):
            batch = images[perm[i : i + batch_size]]
            recon, mu, logvar = model(batch, sample=kl_weight > 0, generator=gen)
            rec = torch.mean((recon - batch) ** 2)
            loss = rec
            kl = torch.zeros(())
            if kl_weight > 0:
                kl = kl_divergence(mu, logvar)
                loss = rec + kl_weight * kl
            opt.zero_grad()
            loss.backward()
            opt.step()
            n = batch.shape[0]
            tot_rec += rec.item() * n
            tot_kl += kl.item() * n
            seen += n
        history.append(
            {"epoch": epoch + 1, "recon_mse": tot_rec / seen, "kl": tot_kl / seen}
        )
        if log is not None:
            log(
                f"vae epoch {epoch + 1}/{epochs} recon {tot_rec / seen:.5f} "
                f"kl {tot_kl / seen:.3f}"
            )
    model.eval()
    return {"history": history}


def fit_latent_scale(model: ConvVAE, images: torch.Tensor, batch_size: int = 64) -> float:
    """Reciprocal standard deviation of posterior means over a sample set."""
    model.eval()
    sq_sum, mean_sum, count = 0.0, 0.0, 0
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            mu = model.encode_mean(images[i : i + batch_size])
            sq_sum += float((mu**2).sum())
            mean_sum += float(mu.sum())
            count += mu.numel()
    var = sq_sum / count - (mean_sum / count) ** 2
    std = max(float(np.sqrt(max(var, 0.0))), 1e-8)
    return 1.0 / std
