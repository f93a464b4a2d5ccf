"""Wavelet vision transformer.

A four-stage pyramid transformer whose attention downsamples keys and
values with an orthonormal Haar step instead of strided convolution: the
LL band supplies a lossless quarter-resolution token set, and the high
frequency bands re-enter through the inverse transform so detail survives
the bottleneck. The pooled final stage yields both category logits and
the w conditioning vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .utils import count_parameters


def haar_dwt2(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Single-level orthonormal Haar analysis on an NCHW tensor.

    Returns (ll, lh, hl, hh), each (B, C, H/2, W/2), matching the numpy
    transform in :mod:`mwtdiff.wavelet` band for band.
    """
    if x.dim() != 4:
        raise ValueError(f"expected NCHW, got shape {tuple(x.shape)}")
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise ValueError(
            f"spatial shape {tuple(x.shape[-2:])} must be even; pad the input first"
        )
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0
    hl = (a + b - c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return ll, lh, hl, hh


def haar_idwt2(
    ll: torch.Tensor, lh: torch.Tensor, hl: torch.Tensor, hh: torch.Tensor
) -> torch.Tensor:
    """Exact inverse of :func:`haar_dwt2`."""
    for name, band in (("lh", lh), ("hl", hl), ("hh", hh)):
        if band.shape != ll.shape:
            raise ValueError(f"subband {name} shape {tuple(band.shape)} != ll {tuple(ll.shape)}")
    a = (ll + lh + hl + hh) / 2.0
    b = (ll - lh + hl - hh) / 2.0
    c = (ll + lh - hl - hh) / 2.0
    d = (ll - lh - hl + hh) / 2.0
    top = torch.stack((a, b), dim=-1).flatten(-2)
    bottom = torch.stack((c, d), dim=-1).flatten(-2)
    return torch.stack((top, bottom), dim=-2).flatten(-3, -2)


class WaveletAttention(nn.Module):
    """Multi-head attention with wavelet-reduced keys and values.

    Queries come from the full token grid and from the LL tokens; both
    attend to keys/values built on the LL band alone. The attended LL map
    is recombined with the untouched detail bands through the inverse
    transform, and the output projection fuses the full-resolution
    attention result with that reconstruction.
    """

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(2 * dim, dim)
        self.capture_attention = False
        self.last_attention: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
        B, N, C = x.shape
        H, W = hw
        if H * W != N:
            raise ValueError(f"token count {N} does not match grid {H}x{W}")
        fmap = x.transpose(1, 2).reshape(B, C, H, W)
        ll, lh, hl, hh = haar_dwt2(fmap)
        ll_tokens = ll.flatten(2).transpose(1, 2)  # (B, N/4, C)

        q_all = self.q(torch.cat([x, ll_tokens], dim=1))
        k, v = self.kv(ll_tokens).chunk(2, dim=-1)

        def heads(t):
            return t.reshape(B, -1, self.num_heads, C // self.num_heads).transpose(1, 2)

        qh, kh, vh = heads(q_all), heads(k), heads(v)
        attn = torch.softmax(qh @ kh.transpose(-2, -1) * self.scale, dim=-1)
        if self.capture_attention:
            self.last_attention = attn.detach()
        out = (attn @ vh).transpose(1, 2).reshape(B, -1, C)

        out_x, out_ll = out[:, :N], out[:, N:]
        ll_attended = out_ll.transpose(1, 2).reshape(B, C, H // 2, W // 2)
        recon = haar_idwt2(ll_attended, lh, hl, hh)
        recon_tokens = recon.flatten(2).transpose(1, 2)
        return self.proj(torch.cat([out_x, recon_tokens], dim=-1))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class WaveletBlock(nn.Module):
    """Pre-norm transformer block around wavelet attention.

    Operates on feature maps (B, C, H, W) with even H and W so the
    attention can always take one Haar step.
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WaveletAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        if fmap.dim() != 4:
            raise ValueError(f"expected NCHW, got shape {tuple(fmap.shape)}")
        B, C, H, W = fmap.shape
        if H % 2 or W % 2:
            raise ValueError(f"spatial shape ({H}, {W}) must be even for the transform")
        x = fmap.flatten(2).transpose(1, 2)
        x = x + self.attn(self.norm1(x), (H, W))
        x = x + self.mlp(self.norm2(x))
        return x.transpose(1, 2).reshape(B, C, H, W)


@dataclass
class WaveViTSpec:
    """Architecture hyperparameters."""

    stage_depths: tuple[int, ...] = (2, 2, 2, 2)
    stage_dims: tuple[int, ...] = (32, 64, 128, 256)
    num_heads: tuple[int, ...] = (2, 4, 4, 8)
    patch_size: int = 4
    mlp_ratio: float = 2.0
    num_categories: int = 4
    d_embed_out: int = 128

    def __post_init__(self):
        if not (len(self.stage_depths) == len(self.stage_dims) == len(self.num_heads) == 4):
            raise ValueError("stage_depths, stage_dims, num_heads must each have 4 entries")
        if any(d < 1 for d in self.stage_depths):
            raise ValueError("every stage needs at least one block")


class WaveViT(nn.Module):
    """Four-stage wavelet transformer for classification and embeddings."""

    def __init__(self, spec: WaveViTSpec):
        super().__init__()
        self.spec = spec
        dims = spec.stage_dims
        self.patch_embed = nn.Conv2d(3, dims[0], spec.patch_size, stride=spec.patch_size)
        self.stages = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i in range(4):
            blocks = nn.ModuleList(
                WaveletBlock(dims[i], spec.num_heads[i], spec.mlp_ratio)
                for _ in range(spec.stage_depths[i])
            )
            self.stages.append(blocks)
            if i < 3:
                self.downsamples.append(nn.Conv2d(dims[i], dims[i + 1], 3, stride=2, padding=1))
        self.norm = nn.LayerNorm(dims[3])
        self.head = nn.Linear(dims[3], spec.num_categories)
        self.embed_proj = nn.Linear(dims[3], spec.d_embed_out)
        self.apply(self._init)

    @staticmethod
    def _init(m):
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)

    @property
    def min_input(self) -> int:
        # one Haar step must be possible in the last stage
        return self.spec.patch_size * 2**3 * 2

    def _check_input(self, images: torch.Tensor) -> None:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W), got {tuple(images.shape)}")
        H, W = images.shape[-2:]
        need = self.spec.patch_size * 2**3 * 2
        if H % need or W % need:
            raise ValueError(
                f"input spatial shape ({H}, {W}) must be divisible by {need} "
                f"(patch size times three downsamples times one wavelet step)"
            )

    def stage_features(self, images: torch.Tensor) -> list[torch.Tensor]:
        """Feature maps after each stage, normalized input assumed [0,1]."""
        self._check_input(images)
        x = self.patch_embed(images * 2.0 - 1.0)
        feats = []
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x)
            feats.append(x)
            if i < 3:
                x = self.downsamples[i](x)
        return feats

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (logits, w) for a batch of [0,1] RGB images."""
        feats = self.stage_features(images)
        tokens = feats[-1].flatten(2).transpose(1, 2)
        pooled = self.norm(tokens).mean(dim=1)
        return self.head(pooled), self.embed_proj(pooled)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """The w vector alone."""
        return self.forward(images)[1]


def pretrain_wavevit(
    model: WaveViT,
    train_images: torch.Tensor,
    train_labels: torch.Tensor,
    val_images: torch.Tensor,
    val_labels: torch.Tensor,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    log=None,
) -> dict:
    """Supervised category pretraining; returns accuracy history.

    Expects image tensors in [0,1] NCHW and int64 labels. The returned
    dict carries per-epoch train loss and validation top-1 accuracy.
    The model is left holding the weights of the best validation epoch,
    so a late divergence cannot poison the saved checkpoint.
    """
    if train_labels.unique().numel() < 2:
        raise ValueError("pretraining needs at least 2 distinct categories")
    if train_images.shape[0] != train_labels.shape[0]:
        raise ValueError("train images and labels disagree on batch size")

    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    history = []

    def val_top1() -> float:
        model.eval()
        hits = 0
        with torch.no_grad():
            for i in range(0, val_images.shape[0], batch_size):
                logits, _ = model(val_images[i : i + batch_size])
                hits += (logits.argmax(dim=1) == val_labels[i : i + batch_size]).sum().item()
        model.train()
        return hits / max(1, val_images.shape[0])

    best_acc = -1.0
    best_state: dict[str, torch.Tensor] = {}

    model.train()
    for epoch in range(epochs):
        perm = torch.randperm(train_images.shape[0], generator=gen)
        total, seen = 0.0, 0
        for i in range(0, perm.shape[0], batch_size):
            idx = perm[i : i + batch_size]
            logits, _ = model(train_images[idx])
            loss = loss_fn(logits, train_labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * idx.shape[0]
            seen += idx.shape[0]
        acc = val_top1()
        history.append({"epoch": epoch + 1, "train_loss": total / seen, "val_top1": acc})
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if log is not None:
            log(f"wavevit epoch {epoch + 1}/{epochs} loss {total / seen:.4f} val_top1 {acc:.3f}")
    if best_state:
        model.load_state_dict(best_state)
    final = best_acc if history else val_top1()
    model.eval()
    return {
        "val_top1": final,
        "history": history,
        "parameters": count_parameters(model),
    }
