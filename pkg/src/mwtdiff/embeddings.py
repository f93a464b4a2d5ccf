"""Scalar sinusoidal embeddings and the conditioning bundle.

Scalars (metadata fields, diffusion timesteps) are lifted to vectors with
the classic interleaved sin/cos ladder rather than quantized into text,
so nearby values stay nearby in embedding space. The three conditioning
vectors m (metadata), w (wavelet content), and t (timestep) concatenate
into a single bundle b of width 3 * d_embed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

METADATA_FIELDS = ("lon", "lat", "gsd", "cloud_cover", "year", "month", "day")


def sinusoidal_embed(value: float, dim: int) -> np.ndarray:
    """Embed one scalar into ``dim`` interleaved sin/cos coordinates.

    out[2i]   = sin(value / 10000**(2i/dim))
    out[2i+1] = cos(value / 10000**(2i/dim))

    Returns a float64 vector of length ``dim``. ``dim`` must be even and
    at least 2; ``value`` must be finite.
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"dim must be an even integer >= 2, got {dim}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"value must be finite, got {value}")
    i = np.arange(dim // 2, dtype=np.float64)
    freqs = 10000.0 ** (-2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(value * freqs)
    out[1::2] = np.cos(value * freqs)
    return out


def sinusoid_features(values: torch.Tensor, dim: int) -> torch.Tensor:
    """Batched torch version of :func:`sinusoidal_embed`.

    ``values`` has shape (B,); the result has shape (B, dim) and follows the
    input dtype for float inputs (integers are promoted to float32).
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"dim must be an even integer >= 2, got {dim}")
    if values.dim() != 1:
        raise ValueError(f"values must be 1-D, got shape {tuple(values.shape)}")
    dtype = values.dtype if values.is_floating_point() else torch.float32
    vals = values.to(dtype)
    i = torch.arange(dim // 2, dtype=dtype)
    freqs = torch.pow(torch.tensor(10000.0, dtype=dtype), -2.0 * i / dim)
    angles = vals[:, None] * freqs[None, :]
    out = torch.empty(values.shape[0], dim, dtype=dtype)
    out[:, 0::2] = torch.sin(angles)
    out[:, 1::2] = torch.cos(angles)
    return out


_RANGES = {
    "lon": (-180.0, 180.0),
    "lat": (-90.0, 90.0),
    "cloud_cover": (0.0, 1.0),
}


@dataclass
class MetadataRecord:
    """Acquisition metadata for one scene.

    Angles are degrees, gsd is meters per pixel, cloud_cover is a fraction
    in [0, 1], and the date is a plain calendar triple.
    """

    lon: float
    lat: float
    gsd: float
    cloud_cover: float
    year: int
    month: int
    day: int

    def validate(self) -> None:
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if not self.gsd > 0:
            raise ValueError(f"gsd={self.gsd} must be positive")
        if self.year < 0:
            raise ValueError(f"year={self.year} must be non-negative")
        if not 1 <= self.month <= 12:
            raise ValueError(f"month={self.month} outside [1, 12]")
        if not 1 <= self.day <= 31:
            raise ValueError(f"day={self.day} outside [1, 31]")

    def as_values(self) -> np.ndarray:
        """Field values in canonical order, as float64."""
        return np.array([float(getattr(self, f)) for f in METADATA_FIELDS])

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetadataRecord":
        raw = json.loads(text)
        missing = [f for f in METADATA_FIELDS if f not in raw]
        if missing:
            raise ValueError(f"metadata record missing fields: {missing}")
        extra = [k for k in raw if k not in METADATA_FIELDS]
        if extra:
            raise ValueError(f"metadata record has unknown fields: {extra}")
        rec = cls(
            lon=float(raw["lon"]),
            lat=float(raw["lat"]),
            gsd=float(raw["gsd"]),
            cloud_cover=float(raw["cloud_cover"]),
            year=int(raw["year"]),
            month=int(raw["month"]),
            day=int(raw["day"]),
        )
        rec.validate()
        return rec


def _item_width(d_embed: int, num_items: int) -> int:
    """Even per-item sinusoid width close to d_embed / num_items."""
    return max(2, 2 * round(d_embed / (2 * num_items)))


class MetadataEmbedder(nn.Module):
    """Maps a MetadataRecord to an m vector of width d_embed.

    Each of the seven fields gets its own sinusoid ladder at roughly
    d_embed/7 width; ladders are concatenated and linearly projected, which
    equals projecting each item separately and summing.
    """

    def __init__(self, d_embed: int):
        super().__init__()
        if d_embed < 2 or d_embed % 2 != 0:
            raise ValueError(f"d_embed must be an even integer >= 2, got {d_embed}")
        self.d_embed = d_embed
        self.item_width = _item_width(d_embed, len(METADATA_FIELDS))
        self.proj = nn.Linear(self.item_width * len(METADATA_FIELDS), d_embed)

    def features(self, records: list[MetadataRecord]) -> torch.Tensor:
        """Raw concatenated sinusoid features, shape (B, 7 * item_width)."""
        rows = []
        for rec in records:
            rec.validate()
            parts = [sinusoidal_embed(v, self.item_width) for v in rec.as_values()]
            rows.append(np.concatenate(parts))
        feats = torch.from_numpy(np.stack(rows))
        return feats.to(self.proj.weight.dtype)

    def forward(self, records: list[MetadataRecord]) -> torch.Tensor:
        return self.proj(self.features(records))


class TimestepEmbedder(nn.Module):
    """Maps integer diffusion timesteps to t vectors of width d_embed."""

    def __init__(self, d_embed: int, t_max: int):
        super().__init__()
        if d_embed < 2 or d_embed % 2 != 0:
            raise ValueError(f"d_embed must be an even integer >= 2, got {d_embed}")
        if t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {t_max}")
        self.d_embed = d_embed
        self.t_max = t_max
        self.map = nn.Sequential(
            nn.Linear(d_embed, d_embed),
            nn.SiLU(),
            nn.Linear(d_embed, d_embed),
        )

    def forward(self, t_steps: torch.Tensor) -> torch.Tensor:
        if t_steps.dim() == 0:
            t_steps = t_steps[None]
        if t_steps.is_floating_point():
            raise ValueError("t_steps must be integer-typed")
        if torch.any(t_steps < 0) or torch.any(t_steps > self.t_max):
            bad = t_steps[(t_steps < 0) | (t_steps > self.t_max)][0].item()
            raise ValueError(f"timestep {bad} outside [0, {self.t_max}]")
        feats = sinusoid_features(t_steps, self.d_embed)
        return self.map(feats.to(self.map[0].weight.dtype))


@dataclass
class ConditioningBundle:
    """The three conditioning vectors and their fixed-order concatenation."""

    m: torch.Tensor
    w: torch.Tensor
    t: torch.Tensor

    def __post_init__(self):
        shapes = {x.shape for x in (self.m, self.w, self.t)}
        if len(shapes) != 1:
            raise ValueError(
                f"m, w, t must share a shape, got "
                f"{tuple(self.m.shape)}, {tuple(self.w.shape)}, {tuple(self.t.shape)}"
            )

    @property
    def b(self) -> torch.Tensor:
        """Concatenation [m | w | t] along the last axis."""
        return torch.cat([self.m, self.w, self.t], dim=-1)

    @property
    def d_embed(self) -> int:
        return self.m.shape[-1]

    def split(self, b: torch.Tensor) -> "ConditioningBundle":
        """Recover components from a concatenated bundle of matching width."""
        d = self.d_embed
        if b.shape[-1] != 3 * d:
            raise ValueError(f"bundle width {b.shape[-1]} != 3 * {d}")
        return ConditioningBundle(b[..., :d], b[..., d : 2 * d], b[..., 2 * d :])


def assemble_bundle(m: torch.Tensor, w: torch.Tensor, t: torch.Tensor) -> ConditioningBundle:
    """Bundle the three conditioning vectors, checking widths agree."""
    return ConditioningBundle(m=m, w=w, t=t)
