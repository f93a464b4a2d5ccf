"""Run configuration.

A ``RunConfig`` is a tree of dataclasses, one section per pipeline area.
Every field has a default so the zero-config desk-scale run works out of
the box. Configs load from TOML, accept ``section.key=value`` overrides,
reject unknown keys, and hash to a stable hex digest that is stamped into
every artifact the pipeline writes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

DEFAULT_CATEGORIES = ["airport", "crop field", "residential area", "water body"]


@dataclass
class DataConfig:
    """Synthetic dataset generation and loading."""

    root: str = ""  # empty means <run_dir>/data
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_CATEGORIES))
    train_scenes: int = 2000
    val_scenes: int = 200
    hr_size: int = 64
    scale: int = 4
    blur_sigma_min: float = 0.4
    blur_sigma_max: float = 1.2
    noise_sigma_min: float = 0.0
    noise_sigma_max: float = 0.03
    compression_prob: float = 0.3
    compression_quality_min: int = 40
    compression_quality_max: int = 85
    downscale_mode: str = "area"


@dataclass
class VAEConfig:
    """Image autoencoder that defines the latent space."""

    latent_channels: int = 4
    base_channels: int = 32
    epochs: int = 14
    batch_size: int = 32
    lr: float = 2e-3
    kl_weight: float = 1e-6


@dataclass
class WaveViTConfig:
    """Wavelet vision transformer used for conditioning and metrics."""

    stage_depths: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    stage_dims: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    patch_size: int = 4
    num_heads: list[int] = field(default_factory=lambda: [2, 4, 4, 8])
    mlp_ratio: float = 2.0
    epochs: int = 4
    batch_size: int = 32
    lr: float = 8e-4


@dataclass
class DiffusionConfig:
    """Noise schedule and sampling."""

    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sample_steps: int = 200


@dataclass
class UNetConfig:
    """Latent-space noise predictor."""

    base_channels: int = 32
    channel_mults: list[int] = field(default_factory=lambda: [1, 2, 4])
    num_heads: int = 4
    time_dim: int = 128
    text_dim: int = 64
    caption_len: int = 12


@dataclass
class MWTConfig:
    """Conditioning encoder: metadata, wavelet, and time branches."""

    d_embed: int = 128
    level_channels: list[int] = field(default_factory=lambda: [32, 64, 128])
    hidden_channels: int = 64


@dataclass
class TrainConfig:
    """Optimization budgets for the two diffusion phases."""

    seed: int = 1234
    lr: float = 5e-5
    batch_size: int = 16
    base_steps: int = 1400
    mwt_steps: int = 1100
    log_every: int = 100
    ema_decay: float = 0.999  # 0 saves the raw final weights instead


@dataclass
class EvalConfig:
    """Evaluation protocol."""

    num_scenes: int = 50
    sample_steps: int = 200
    sample_seed: int = 77
    fid_min_per_category: int = 16
    x0_clip: float = 1.5  # 0 disables the denoised-estimate bound


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)
    wavevit: WaveViTConfig = field(default_factory=WaveViTConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    mwt: MWTConfig = field(default_factory=MWTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Stable hex digest of the full configuration tree."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def validate(self) -> None:
        if self.data.scale < 1:
            raise ConfigError("data.scale must be >= 1")
        if self.data.hr_size % self.data.scale != 0:
            raise ConfigError("data.hr_size must be divisible by data.scale")
        if self.mwt.d_embed <= 0 or self.mwt.d_embed % 2 != 0:
            raise ConfigError("mwt.d_embed must be a positive even integer")
        if len(self.wavevit.stage_depths) != 4 or len(self.wavevit.stage_dims) != 4:
            raise ConfigError("wavevit stages must have exactly 4 entries")
        if len(self.mwt.level_channels) != len(self.unet.channel_mults):
            raise ConfigError(
                "mwt.level_channels must have one entry per unet level "
                f"(got {len(self.mwt.level_channels)} vs {len(self.unet.channel_mults)})"
            )
        if self.data.downscale_mode not in ("area", "bilinear"):
            raise ConfigError("data.downscale_mode must be 'area' or 'bilinear'")
        if self.diffusion.sample_steps > self.diffusion.train_steps:
            raise ConfigError("diffusion.sample_steps cannot exceed train_steps")
        if len(self.data.categories) < 2:
            raise ConfigError("data.categories needs at least 2 entries")
        if not 0.0 <= self.train.ema_decay < 1.0:
            raise ConfigError("train.ema_decay must lie in [0, 1)")
        if self.eval.x0_clip < 0.0:
            raise ConfigError("eval.x0_clip must be >= 0 (0 disables)")


_SECTIONS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(section: str, key: str, default: Any, raw: Any) -> Any:
    """Coerce a parsed TOML value onto a default's type, or fail loudly."""
    if isinstance(default, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"{section}.{key} expects a boolean, got {raw!r}")
        return raw
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{section}.{key} expects an integer, got {raw!r}")
        if isinstance(raw, float) and not raw.is_integer():
            raise ConfigError(f"{section}.{key} expects an integer, got {raw!r}")
        return int(raw)
    if isinstance(default, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{section}.{key} expects a number, got {raw!r}")
        return float(raw)
    if isinstance(default, str):
        if not isinstance(raw, str):
            raise ConfigError(f"{section}.{key} expects a string, got {raw!r}")
        return raw
    if isinstance(default, list):
        if not isinstance(raw, list):
            raise ConfigError(f"{section}.{key} expects a list, got {raw!r}")
        return list(raw)
    raise ConfigError(f"{section}.{key} has unsupported type {type(default).__name__}")


def _apply_section(cfg: RunConfig, section: str, mapping: dict[str, Any]) -> None:
    if section not in _SECTIONS:
        known = ", ".join(sorted(_SECTIONS))
        raise ConfigError(f"unknown config section {section!r}; known sections: {known}")
    target = getattr(cfg, section)
    valid = {f.name for f in fields(target)}
    for key, raw in mapping.items():
        if key not in valid:
            known = ", ".join(sorted(valid))
            raise ConfigError(f"unknown key {section}.{key}; known keys: {known}")
        default = getattr(target, key)
        setattr(target, key, _coerce(section, key, default, raw))


def parse_override(text: str) -> tuple[str, str, Any]:
    """Split a ``section.key=value`` override, parsing value as TOML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, _, literal = text.partition("=")
    dotted = dotted.strip()
    if dotted.count(".") != 1:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    section, key = dotted.split(".")
    try:
        parsed = tomllib.loads(f"v = {literal.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = literal.strip()  # bare strings are allowed unquoted
    return section, key, parsed


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus dotted overrides."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"could not parse {p}: {exc}") from exc
        for section, mapping in doc.items():
            if not isinstance(mapping, dict):
                raise ConfigError(
                    f"top-level key {section!r} must be a table, got {mapping!r}"
                )
            _apply_section(cfg, section, mapping)
    for text in overrides or []:
        section, key, value = parse_override(text)
        _apply_section(cfg, section, {key: value})
    cfg.validate()
    return cfg


def paper_scale(cfg: RunConfig | None = None) -> RunConfig:
    """Preset matching the published full-scale configuration.

    Not runnable on a desk machine; exists so the conditioning bundle width
    and schedule can be checked at the published operating point.
    """
    cfg = cfg or RunConfig()
    cfg.mwt.d_embed = 1024
    cfg.data.hr_size = 512
    cfg.data.scale = 4
    cfg.diffusion.train_steps = 1000
    cfg.diffusion.sample_steps = 200
    cfg.wavevit.stage_dims = [64, 128, 320, 448]
    cfg.wavevit.stage_depths = [3, 4, 6, 3]
    return cfg
