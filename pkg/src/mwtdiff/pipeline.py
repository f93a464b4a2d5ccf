"""Phase orchestration: artifact layout, training phases, sampling, eval.

The pipeline runs in phases, each leaving a checkpoint behind:

  generate-data     -> <run>/data/...
  pretrain-wavevit  -> checkpoints/wavevit.ckpt
  train-vae         -> checkpoints/vae.ckpt (carries the latent scale)
  train-base        -> checkpoints/base_unet.ckpt + caption.ckpt
  train-mwt         -> checkpoints/mwt_encoder.ckpt + sft.ckpt

The second diffusion phase trains only the conditioning encoder and the
SFT heads against a frozen backbone; fingerprints taken before and after
prove it. Ablation variants retrain that phase with one conditioning
stream silenced and park their checkpoints in a subdirectory.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .autoencoder import ConvVAE, fit_latent_scale, train_vae
from .captions import Caption, CaptionEncoder
from .checkpoint import (
    load_archive,
    load_state_arrays,
    module_fingerprint,
    save_archive,
    state_arrays,
)
from .config import RunConfig
from .datagen import ScenePair, build_dataset, load_dataset, read_manifest, write_dataset
from .denoiser import DenoiserSpec, DenoiserUNet
from .diffusion import NoiseSchedule, ddpm_sample, noise_prediction_loss
from .errors import ConfigError, DependencyError
from .images import ImageTensor, bicubic_resize, hwc_to_nchw, nchw_to_hwc
from .metrics import EvalReport, evaluate_pairs, select_eval_pairs, write_report
from .mwt_encoder import DeltaEncoder, SFTHeads
from .utils import freeze_module, stable_seed, torch_generator
from .wavevit import WaveViT, WaveViTSpec, pretrain_wavevit

ABLATIONS = ("full", "no_wavevit", "no_text")

CHECKPOINTS = {
    "wavevit": "wavevit.ckpt",
    "vae": "vae.ckpt",
    "base_unet": "base_unet.ckpt",
    "caption": "caption.ckpt",
    "mwt_encoder": "mwt_encoder.ckpt",
    "sft": "sft.ckpt",
}


@dataclass
class RunPaths:
    run_dir: Path

    @classmethod
    def at(cls, run_dir: str | Path) -> "RunPaths":
        return cls(run_dir=Path(run_dir))

    @property
    def checkpoints(self) -> Path:
        return self.run_dir / "checkpoints"

    @property
    def reports(self) -> Path:
        return self.run_dir / "reports"

    def data_root(self, cfg: RunConfig) -> Path:
        if cfg.data.root:
            return Path(cfg.data.root)
        return self.run_dir / "data"

    def checkpoint(self, name: str, ablation: str = "full") -> Path:
        fname = CHECKPOINTS[name]
        if ablation != "full" and name in ("mwt_encoder", "sft"):
            return self.checkpoints / "ablations" / ablation / fname
        return self.checkpoints / fname


PRODUCED_BY = {
    "wavevit": "mwtdiff pretrain-wavevit",
    "vae": "mwtdiff train-vae",
    "base_unet": "mwtdiff train-base",
    "caption": "mwtdiff train-base",
    "mwt_encoder": "mwtdiff train-mwt",
    "sft": "mwtdiff train-mwt",
}


def _check_hash(archive, cfg: RunConfig, what: str, allow_mismatch: bool) -> None:
    want = cfg.config_hash()
    if archive.config_hash and archive.config_hash != want and not allow_mismatch:
        raise DependencyError(
            f"{what} was produced under config {archive.config_hash}, current "
            f"config hashes to {want}; regenerate it or pass --allow-mismatch"
        )


def _load_required(paths: RunPaths, name: str, ablation: str = "full"):
    """load_archive with an error that names the producing command."""
    path = paths.checkpoint(name, ablation)
    if not path.exists():
        cmd = PRODUCED_BY[name]
        if ablation != "full" and name in ("mwt_encoder", "sft"):
            cmd += f" --ablation {ablation}"
        raise DependencyError(f"missing checkpoint {path}; run `{cmd}` first")
    return load_archive(path)


def _require_dataset(
    paths: RunPaths, cfg: RunConfig, allow_mismatch: bool = False
) -> Path:
    root = paths.data_root(cfg)
    if not (root / "manifest.json").exists():
        raise DependencyError(
            f"no dataset at {root}; run `mwtdiff generate-data` first"
        )
    manifest = read_manifest(root)
    want = cfg.config_hash()
    have = manifest.get("config_hash", "")
    if have and have != want and not allow_mismatch:
        raise DependencyError(
            f"dataset at {root} was generated under config {have}, current "
            f"config hashes to {want}; regenerate it or pass --allow-mismatch"
        )
    return root


# ---------------------------------------------------------------- builders


def build_wavevit(cfg: RunConfig, vocabulary: list[str]) -> WaveViT:
    torch.manual_seed(stable_seed(cfg.train.seed, "build:wavevit"))
    spec = WaveViTSpec(
        stage_depths=tuple(cfg.wavevit.stage_depths),
        stage_dims=tuple(cfg.wavevit.stage_dims),
        num_heads=tuple(cfg.wavevit.num_heads),
        patch_size=cfg.wavevit.patch_size,
        mlp_ratio=cfg.wavevit.mlp_ratio,
        num_categories=len(vocabulary),
        d_embed_out=cfg.mwt.d_embed,
    )
    return WaveViT(spec)


def build_vae(cfg: RunConfig) -> ConvVAE:
    torch.manual_seed(stable_seed(cfg.train.seed, "build:vae"))
    return ConvVAE(
        latent_channels=cfg.vae.latent_channels, base_channels=cfg.vae.base_channels
    )


def build_caption_encoder(cfg: RunConfig, vocabulary: list[str]) -> CaptionEncoder:
    torch.manual_seed(stable_seed(cfg.train.seed, "build:caption"))
    return CaptionEncoder(
        vocabulary, d_text=cfg.unet.text_dim, seq_len=cfg.unet.caption_len
    )


def build_unet(cfg: RunConfig) -> DenoiserUNet:
    torch.manual_seed(stable_seed(cfg.train.seed, "build:unet"))
    spec = DenoiserSpec(
        latent_channels=cfg.vae.latent_channels,
        base_channels=cfg.unet.base_channels,
        channel_mults=tuple(cfg.unet.channel_mults),
        num_heads=cfg.unet.num_heads,
        time_dim=cfg.unet.time_dim,
        text_dim=cfg.unet.text_dim,
    )
    return DenoiserUNet(spec, t_max=cfg.diffusion.train_steps)


def build_conditioner(cfg: RunConfig, unet: DenoiserUNet) -> tuple[DeltaEncoder, SFTHeads]:
    """Build the trainable phase-two pair, checking structural agreement."""
    sites = unet.modulation_sites
    level_channels = list(cfg.mwt.level_channels)
    if len(level_channels) != len(sites):
        raise ConfigError(
            f"conditioning encoder emits {len(level_channels)} scales but the "
            f"denoiser has {len(sites)} modulation sites"
        )
    torch.manual_seed(stable_seed(cfg.train.seed, "build:delta"))
    delta = DeltaEncoder(
        d_embed=cfg.mwt.d_embed,
        t_max=cfg.diffusion.train_steps,
        latent_channels=cfg.vae.latent_channels,
        level_channels=level_channels,
        hidden=cfg.mwt.hidden_channels,
    )
    torch.manual_seed(stable_seed(cfg.train.seed, "build:sft"))
    heads = SFTHeads(
        cond_channels=level_channels,
        feature_channels=[c for c, _ in sites],
        hidden=cfg.mwt.hidden_channels,
    )
    return delta, heads


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule.linear(
        cfg.diffusion.train_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end
    )


# ------------------------------------------------------------ data helpers


def _dataset_vocabulary(
    paths: RunPaths, cfg: RunConfig, allow_mismatch: bool = False
) -> list[str]:
    root = _require_dataset(paths, cfg, allow_mismatch)
    return list(read_manifest(root)["vocabulary"])


def pairs_to_tensors(pairs: list[ScenePair]) -> dict:
    """Stack a split into model-ready tensors (HR, upsampled LR, labels)."""
    hr = hwc_to_nchw([p.hr.data for p in pairs])
    lr_up = hwc_to_nchw(
        [bicubic_resize(p.lr.data, p.hr.hw) for p in pairs]
    )
    return {"hr": hr, "lr_up": lr_up, "pairs": pairs}


def _encode_latents(
    vae: ConvVAE, images: torch.Tensor, scale: float, batch_size: int = 64
) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            outs.append(vae.encode_mean(images[i : i + batch_size]) * scale)
    return torch.cat(outs)


def _embed_w(model: WaveViT, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            outs.append(model.embed(images[i : i + batch_size]))
    return torch.cat(outs)


def _meta_features(delta: DeltaEncoder, pairs: list[ScenePair]) -> torch.Tensor:
    return delta.meta.features([p.metadata for p in pairs])


# ------------------------------------------------------------------ phases


def run_generate_data(cfg: RunConfig, run_dir: str | Path, log=None) -> dict:
    """Generate and write the paired dataset; returns the manifest."""
    t0 = time.time()
    paths = RunPaths.at(run_dir)
    root = paths.data_root(cfg)
    splits = build_dataset(
        categories=cfg.data.categories,
        train_scenes=cfg.data.train_scenes,
        val_scenes=cfg.data.val_scenes,
        master_seed=cfg.train.seed,
        hr_size=cfg.data.hr_size,
        scale=cfg.data.scale,
        recipe_kwargs=dict(
            blur_sigma_range=(cfg.data.blur_sigma_min, cfg.data.blur_sigma_max),
            noise_sigma_range=(cfg.data.noise_sigma_min, cfg.data.noise_sigma_max),
            compression_prob=cfg.data.compression_prob,
            quality_range=(cfg.data.compression_quality_min, cfg.data.compression_quality_max),
            downscale_mode=cfg.data.downscale_mode,
        ),
        log=log,
    )
    manifest = write_dataset(
        root, splits, cfg.data.categories, cfg.train.seed,
        cfg.data.hr_size, cfg.data.scale, config_hash=cfg.config_hash(),
    )
    manifest["elapsed_sec"] = round(time.time() - t0, 2)
    if log is not None:
        total = sum(manifest["splits"].values())
        log(f"wrote {total} scenes to {root} in {manifest['elapsed_sec']}s")
    return manifest


def run_pretrain_wavevit(
    cfg: RunConfig, run_dir: str | Path, log=None, allow_mismatch: bool = False
) -> dict:
    """Phase: supervised category pretraining of the wavelet transformer."""
    t0 = time.time()
    paths = RunPaths.at(run_dir)
    root = _require_dataset(paths, cfg, allow_mismatch)
    vocab = _dataset_vocabulary(paths, cfg, allow_mismatch)
    train_pairs = load_dataset(root, "train")
    val_pairs = load_dataset(root, "val")
    cat_to_idx = {c: i for i, c in enumerate(vocab)}

    model = build_wavevit(cfg, vocab)
    tr = pairs_to_tensors(train_pairs)
    va = pairs_to_tensors(val_pairs)
    tr_y = torch.tensor([cat_to_idx[p.category] for p in train_pairs])
    va_y = torch.tensor([cat_to_idx[p.category] for p in val_pairs])

    report = pretrain_wavevit(
        model, tr["hr"], tr_y, va["hr"], va_y,
        epochs=cfg.wavevit.epochs, lr=cfg.wavevit.lr,
        batch_size=cfg.wavevit.batch_size,
        seed=stable_seed(cfg.train.seed, "pretrain-wavevit"), log=log,
    )
    save_archive(
        paths.checkpoint("wavevit"), state_arrays(model),
        config_hash=cfg.config_hash(), phase="pretrain-wavevit",
        extra={"vocabulary": vocab, "val_top1": report["val_top1"]},
    )
    report["elapsed_sec"] = round(time.time() - t0, 2)
    paths.reports.mkdir(parents=True, exist_ok=True)
    (paths.reports / "wavevit_pretrain.json").write_text(
        json.dumps(report, indent=2, sort_keys=True)
    )
    return report


def run_train_vae(
    cfg: RunConfig, run_dir: str | Path, log=None, allow_mismatch: bool = False
) -> dict:
    """Phase: reconstruction training of the latent autoencoder."""
    t0 = time.time()
    paths = RunPaths.at(run_dir)
    train_pairs = load_dataset(_require_dataset(paths, cfg, allow_mismatch), "train")
    images = pairs_to_tensors(train_pairs)["hr"]

    model = build_vae(cfg)
    report = train_vae(
        model, images, epochs=cfg.vae.epochs, lr=cfg.vae.lr,
        batch_size=cfg.vae.batch_size, kl_weight=cfg.vae.kl_weight,
        seed=stable_seed(cfg.train.seed, "train-vae"), log=log,
    )
    latent_scale = fit_latent_scale(model, images)
    report["latent_scale"] = latent_scale

    # reconstruction quality on a held-out slice, for the record
    val_pairs = load_dataset(_require_dataset(paths, cfg, allow_mismatch), "val")
    val_images = pairs_to_tensors(val_pairs[:64])["hr"]
    with torch.no_grad():
        recon = model.decode(model.encode_mean(val_images))
        mse = float(((recon - val_images) ** 2).mean())
    report["val_recon_psnr"] = float(10.0 * np.log10(1.0 / max(mse, 1e-12)))

    save_archive(
        paths.checkpoint("vae"), state_arrays(model),
        config_hash=cfg.config_hash(), phase="train-vae",
        extra={"latent_scale": latent_scale, "val_recon_psnr": report["val_recon_psnr"]},
    )
    report["elapsed_sec"] = round(time.time() - t0, 2)
    paths.reports.mkdir(parents=True, exist_ok=True)
    (paths.reports / "vae_train.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if log is not None:
        log(
            f"vae: latent_scale {latent_scale:.4f}, "
            f"val recon psnr {report['val_recon_psnr']:.2f} dB"
        )
    return report


def _load_frozen_vae(paths: RunPaths, cfg: RunConfig, allow_mismatch: bool) -> tuple[ConvVAE, float]:
    arc = _load_required(paths, "vae")
    _check_hash(arc, cfg, "vae checkpoint", allow_mismatch)
    vae = build_vae(cfg)
    load_state_arrays(vae, arc.params)
    freeze_module(vae)
    return vae, float(arc.extra["latent_scale"])


def _load_frozen_wavevit(paths: RunPaths, cfg: RunConfig, vocab: list[str], allow_mismatch: bool) -> WaveViT:
    arc = _load_required(paths, "wavevit")
    _check_hash(arc, cfg, "wavevit checkpoint", allow_mismatch)
    model = build_wavevit(cfg, vocab)
    load_state_arrays(model, arc.params)
    freeze_module(model)
    return model


class _EMA:
    """Exponential moving average over a parameter list.

    Small-batch training leaves the late-step weights noisy; checkpoints
    are taken from the averaged weights instead of the last raw step, the
    usual practice for diffusion models.
    """

    def __init__(self, params: list[torch.nn.Parameter], decay: float):
        self.decay = decay
        self.params = params
        self.shadow = [p.detach().clone() for p in params]

    def update(self) -> None:
        with torch.no_grad():
            for s, p in zip(self.shadow, self.params):
                s.mul_(self.decay).add_(p.detach(), alpha=1.0 - self.decay)

    def copy_to_params(self) -> None:
        with torch.no_grad():
            for s, p in zip(self.shadow, self.params):
                p.copy_(s)


def run_train_base(cfg: RunConfig, run_dir: str | Path, log=None, allow_mismatch: bool = False) -> dict:
    """Phase one: denoiser and caption table learn on clean HR latents."""
    t0 = time.time()
    paths = RunPaths.at(run_dir)
    vocab = _dataset_vocabulary(paths, cfg, allow_mismatch)
    train_pairs = load_dataset(_require_dataset(paths, cfg, allow_mismatch), "train")
    vae, latent_scale = _load_frozen_vae(paths, cfg, allow_mismatch)

    unet = build_unet(cfg)
    caption_enc = build_caption_encoder(cfg, vocab)
    schedule = build_schedule(cfg)

    tensors = pairs_to_tensors(train_pairs)
    z0 = _encode_latents(vae, tensors["hr"], latent_scale)
    token_ids = torch.tensor(
        [caption_enc.token_ids(p.caption) for p in train_pairs], dtype=torch.int64
    )

    gen = torch_generator(cfg.train.seed, "train-base")
    params = list(unet.parameters()) + list(caption_enc.parameters())
    opt = torch.optim.Adam(params, lr=cfg.train.lr)
    ema = _EMA(params, cfg.train.ema_decay) if cfg.train.ema_decay > 0 else None
    n = z0.shape[0]
    losses = []
    unet.train()
    caption_enc.train()
    for step in range(cfg.train.base_steps):
        idx = torch.randint(0, n, (cfg.train.batch_size,), generator=gen)
        t_steps = torch.randint(1, schedule.num_steps + 1, (cfg.train.batch_size,), generator=gen)
        eps = torch.randn(z0[idx].shape, generator=gen)
        text = caption_enc.table(token_ids[idx])

        loss = noise_prediction_loss(
            schedule, lambda zt, tt: unet(zt, tt, text), z0[idx], t_steps, eps
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        if ema is not None:
            ema.update()
        losses.append(float(loss.detach()))
        if log is not None and (step + 1) % cfg.train.log_every == 0:
            recent = float(np.mean(losses[-cfg.train.log_every :]))
            log(f"base step {step + 1}/{cfg.train.base_steps} loss {recent:.4f}")

    if ema is not None:
        ema.copy_to_params()
    unet.eval()
    caption_enc.eval()
    save_archive(
        paths.checkpoint("base_unet"), state_arrays(unet),
        config_hash=cfg.config_hash(), phase="train-base",
        extra={"latent_scale": latent_scale},
    )
    save_archive(
        paths.checkpoint("caption"), state_arrays(caption_enc),
        config_hash=cfg.config_hash(), phase="train-base",
        extra={"vocabulary": vocab},
    )
    first = float(np.mean(losses[:100])) if len(losses) >= 100 else float(np.mean(losses))
    last = float(np.mean(losses[-100:]))
    report = {
        "losses": losses,
        "first100_mean": first,
        "last100_mean": last,
        "elapsed_sec": round(time.time() - t0, 2),
    }
    paths.reports.mkdir(parents=True, exist_ok=True)
    (paths.reports / "base_train.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if log is not None:
        log(f"base: loss {first:.4f} -> {last:.4f} in {report['elapsed_sec']}s")
    return report


def run_train_mwt(
    cfg: RunConfig,
    run_dir: str | Path,
    log=None,
    ablation: str = "full",
    allow_mismatch: bool = False,
) -> dict:
    """Phase two: conditioning encoder and SFT heads against a frozen backbone."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
    t0 = time.time()
    paths = RunPaths.at(run_dir)
    vocab = _dataset_vocabulary(paths, cfg, allow_mismatch)
    train_pairs = load_dataset(_require_dataset(paths, cfg, allow_mismatch), "train")

    vae, latent_scale = _load_frozen_vae(paths, cfg, allow_mismatch)
    wavevit = _load_frozen_wavevit(paths, cfg, vocab, allow_mismatch)

    unet_arc = _load_required(paths, "base_unet")
    _check_hash(unet_arc, cfg, "base denoiser checkpoint", allow_mismatch)
    unet = build_unet(cfg)
    load_state_arrays(unet, unet_arc.params)
    freeze_module(unet)

    cap_arc = _load_required(paths, "caption")
    _check_hash(cap_arc, cfg, "caption checkpoint", allow_mismatch)
    caption_enc = build_caption_encoder(cfg, vocab)
    load_state_arrays(caption_enc, cap_arc.params)
    freeze_module(caption_enc)

    frozen_before = {
        "vae": module_fingerprint(vae),
        "wavevit": module_fingerprint(wavevit),
        "base_unet": module_fingerprint(unet),
        "caption": module_fingerprint(caption_enc),
    }

    delta, sft_heads = build_conditioner(cfg, unet)
    schedule = build_schedule(cfg)

    tensors = pairs_to_tensors(train_pairs)
    z0 = _encode_latents(vae, tensors["hr"], latent_scale)
    z_cond = _encode_latents(vae, tensors["lr_up"], latent_scale)
    if ablation == "no_wavevit":
        w_all = torch.zeros(z0.shape[0], cfg.mwt.d_embed)
    else:
        w_all = _embed_w(wavevit, tensors["lr_up"])
    meta_feats = _meta_features(delta, train_pairs)
    with torch.no_grad():
        if ablation == "no_text":
            text_all = caption_enc.encode_null(1).expand(z0.shape[0], -1, -1).contiguous()
        else:
            token_ids = torch.tensor(
                [caption_enc.token_ids(p.caption) for p in train_pairs], dtype=torch.int64
            )
            text_all = caption_enc.table(token_ids)

    gen = torch_generator(cfg.train.seed, f"train-mwt:{ablation}")
    params = list(delta.parameters()) + list(sft_heads.parameters())
    opt = torch.optim.Adam(params, lr=cfg.train.lr)
    ema = _EMA(params, cfg.train.ema_decay) if cfg.train.ema_decay > 0 else None
    n = z0.shape[0]
    losses = []
    delta.train()
    sft_heads.train()
    for step in range(cfg.train.mwt_steps):
        idx = torch.randint(0, n, (cfg.train.batch_size,), generator=gen)
        t_steps = torch.randint(1, schedule.num_steps + 1, (cfg.train.batch_size,), generator=gen)
        eps = torch.randn(z0[idx].shape, generator=gen)
        zc, wb, mf, text = z_cond[idx], w_all[idx], meta_feats[idx], text_all[idx]

        def denoise(zt, tt):
            feats = delta(zc, mf, wb, tt)
            return unet(zt, tt, text, cond=sft_heads(feats))

        loss = noise_prediction_loss(schedule, denoise, z0[idx], t_steps, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if ema is not None:
            ema.update()
        losses.append(float(loss.detach()))
        if log is not None and (step + 1) % cfg.train.log_every == 0:
            recent = float(np.mean(losses[-cfg.train.log_every :]))
            log(f"mwt[{ablation}] step {step + 1}/{cfg.train.mwt_steps} loss {recent:.4f}")

    frozen_after = {
        "vae": module_fingerprint(vae),
        "wavevit": module_fingerprint(wavevit),
        "base_unet": module_fingerprint(unet),
        "caption": module_fingerprint(caption_enc),
    }
    for name in frozen_before:
        if frozen_before[name] != frozen_after[name]:
            raise RuntimeError(
                f"freeze contract violated: {name} changed during the "
                f"conditioning phase"
            )

    if ema is not None:
        ema.copy_to_params()
    delta.eval()
    sft_heads.eval()
    save_archive(
        paths.checkpoint("mwt_encoder", ablation), state_arrays(delta),
        config_hash=cfg.config_hash(), phase="train-mwt",
        extra={"ablation": ablation},
    )
    save_archive(
        paths.checkpoint("sft", ablation), state_arrays(sft_heads),
        config_hash=cfg.config_hash(), phase="train-mwt",
        extra={"ablation": ablation},
    )
    first = float(np.mean(losses[:100])) if len(losses) >= 100 else float(np.mean(losses))
    last = float(np.mean(losses[-100:]))
    report = {
        "ablation": ablation,
        "losses": losses,
        "first100_mean": first,
        "last100_mean": last,
        "frozen_fingerprints": frozen_after,
        "elapsed_sec": round(time.time() - t0, 2),
    }
    paths.reports.mkdir(parents=True, exist_ok=True)
    suffix = "" if ablation == "full" else f"_{ablation}"
    (paths.reports / f"mwt_train{suffix}.json").write_text(
        json.dumps(report, indent=2, sort_keys=True)
    )
    if log is not None:
        log(f"mwt[{ablation}]: loss {first:.4f} -> {last:.4f} in {report['elapsed_sec']}s")
    return report


# ---------------------------------------------------------------- sampling


class SuperResolver:
    """Loads the trained stack and runs conditional latent sampling."""

    def __init__(
        self,
        cfg: RunConfig,
        vae: ConvVAE,
        wavevit: WaveViT,
        caption_enc: CaptionEncoder,
        unet: DenoiserUNet,
        delta: DeltaEncoder,
        sft_heads: SFTHeads,
        latent_scale: float,
        ablation: str = "full",
    ):
        self.cfg = cfg
        self.vae = vae
        self.wavevit = wavevit
        self.caption_enc = caption_enc
        self.unet = unet
        self.delta = delta
        self.sft_heads = sft_heads
        self.latent_scale = latent_scale
        self.ablation = ablation
        self.schedule = build_schedule(cfg)

    @classmethod
    def from_run_dir(
        cls,
        cfg: RunConfig,
        run_dir: str | Path,
        ablation: str = "full",
        allow_mismatch: bool = False,
    ) -> "SuperResolver":
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
        paths = RunPaths.at(run_dir)
        vocab = _dataset_vocabulary(paths, cfg, allow_mismatch)
        vae, latent_scale = _load_frozen_vae(paths, cfg, allow_mismatch)
        wavevit = _load_frozen_wavevit(paths, cfg, vocab, allow_mismatch)

        unet_arc = _load_required(paths, "base_unet")
        _check_hash(unet_arc, cfg, "base denoiser checkpoint", allow_mismatch)
        unet = build_unet(cfg)
        load_state_arrays(unet, unet_arc.params)
        freeze_module(unet)

        cap_arc = _load_required(paths, "caption")
        _check_hash(cap_arc, cfg, "caption checkpoint", allow_mismatch)
        caption_enc = build_caption_encoder(cfg, vocab)
        load_state_arrays(caption_enc, cap_arc.params)
        freeze_module(caption_enc)

        delta, sft_heads = build_conditioner(cfg, unet)
        delta_arc = _load_required(paths, "mwt_encoder", ablation)
        _check_hash(delta_arc, cfg, "conditioning encoder checkpoint", allow_mismatch)
        load_state_arrays(delta, delta_arc.params)
        freeze_module(delta)
        sft_arc = _load_required(paths, "sft", ablation)
        _check_hash(sft_arc, cfg, "SFT checkpoint", allow_mismatch)
        load_state_arrays(sft_heads, sft_arc.params)
        freeze_module(sft_heads)

        return cls(cfg, vae, wavevit, caption_enc, unet, delta, sft_heads,
                   latent_scale, ablation)

    def super_resolve_arrays(
        self,
        lr_images: list[np.ndarray],
        records: list,
        captions: list,
        seed: int,
        num_steps: int | None = None,
    ) -> list[ImageTensor]:
        """Sample SR outputs for raw LR arrays, deterministically."""
        if not lr_images:
            return []
        steps = num_steps or self.cfg.eval.sample_steps
        scale = self.cfg.data.scale
        lr_up = hwc_to_nchw(
            [
                bicubic_resize(lr, (lr.shape[0] * scale, lr.shape[1] * scale))
                for lr in lr_images
            ]
        )
        n = lr_up.shape[0]
        with torch.no_grad():
            z_cond = self.vae.encode_mean(lr_up) * self.latent_scale
            if self.ablation == "no_wavevit":
                w = torch.zeros(n, self.cfg.mwt.d_embed)
            else:
                w = self.wavevit.embed(lr_up)
            if self.ablation == "no_text":
                text = self.caption_enc.encode_null(n)
            else:
                text = self.caption_enc(captions)
            meta_feats = self.delta.meta.features(records)

            def denoise(zt, tt):
                feats = self.delta(z_cond, meta_feats, w, tt)
                return self.unet(zt, tt, text, cond=self.sft_heads(feats))

            z0_hat = ddpm_sample(
                self.schedule, denoise, tuple(z_cond.shape), steps, seed,
                x0_clip=self.cfg.eval.x0_clip or None,
            )
            images = self.vae.decode(z0_hat / self.latent_scale)
        return [ImageTensor(im, role="sr") for im in nchw_to_hwc(images.clamp(0, 1))]

    def super_resolve_batch(
        self,
        pairs: list[ScenePair],
        seed: int,
        num_steps: int | None = None,
    ) -> list[ImageTensor]:
        """Sample SR outputs for a batch of dataset scenes."""
        return self.super_resolve_arrays(
            [p.lr.data for p in pairs],
            [p.metadata for p in pairs],
            [p.caption for p in pairs],
            seed,
            num_steps,
        )

    def super_resolve(
        self, pair: ScenePair, seed: int, num_steps: int | None = None
    ) -> ImageTensor:
        return self.super_resolve_batch([pair], seed, num_steps)[0]


# -------------------------------------------------------------- evaluation


def run_evaluate(
    cfg: RunConfig,
    run_dir: str | Path,
    ablation: str = "full",
    log=None,
    allow_mismatch: bool = False,
    batch_size: int = 25,
    categories_filter=None,
    limit_per_category=None,
) -> EvalReport:
    """Score the trained model on the validation split; writes reports.

    By default the window is the first ``eval.num_scenes`` pairs of the
    val split. Passing ``categories_filter`` or ``limit_per_category``
    switches to a first-N-per-category subset instead.
    """
    t0 = time.time()
    paths = RunPaths.at(run_dir)
    resolver = SuperResolver.from_run_dir(cfg, run_dir, ablation, allow_mismatch)
    val_pairs = load_dataset(_require_dataset(paths, cfg, allow_mismatch), "val")
    if categories_filter is not None or limit_per_category is not None:
        val_pairs = select_eval_pairs(val_pairs, categories_filter, limit_per_category)
    else:
        val_pairs = val_pairs[: cfg.eval.num_scenes]
    if log is not None:
        log(f"sampling {len(val_pairs)} scenes ({ablation}, {cfg.eval.sample_steps} steps)")

    outputs: dict[str, ImageTensor] = {}
    for i in range(0, len(val_pairs), batch_size):
        chunk = val_pairs[i : i + batch_size]
        seed = stable_seed(cfg.eval.sample_seed, f"eval:{ablation}:{i}")
        for pair, sr in zip(chunk, resolver.super_resolve_batch(chunk, seed)):
            outputs[pair.scene_id] = sr
        if log is not None:
            log(f"sampled {min(i + batch_size, len(val_pairs))}/{len(val_pairs)}")

    report = evaluate_pairs(
        lambda p: outputs[p.scene_id],
        val_pairs,
        resolver.wavevit,
        fid_min_per_category=cfg.eval.fid_min_per_category,
        config_hash=cfg.config_hash(),
        log=log,
    )
    out_dir = paths.reports / f"eval_{ablation}"
    paths_written = write_report(report, out_dir)
    if log is not None:
        agg = report.aggregates
        overall = report.fid.get("overall")
        fid_text = f"{overall:.2f}" if overall is not None else "n/a"
        log(
            f"eval[{ablation}]: psnr {agg['psnr']['mean']:.2f} dB "
            f"(bicubic {agg['psnr_bicubic']['mean']:.2f}), "
            f"lpips {agg['lpips']['mean']:.4f} "
            f"(bicubic {agg['lpips_bicubic']['mean']:.4f}), "
            f"fid {fid_text} "
            f"[{round(time.time() - t0, 1)}s] -> {paths_written['json']}"
        )
    return report


def run_ablate(
    cfg: RunConfig,
    run_dir: str | Path,
    modes: list[str] | None = None,
    log=None,
    allow_mismatch: bool = False,
) -> dict:
    """Retrain the conditioning phase per ablation and compare to full.

    Produces a delta table (ablation minus full) over the aggregate
    metrics; positive fid/lpips deltas mean the ablation is worse.
    """
    modes = modes or ["no_wavevit", "no_text"]
    for mode in modes:
        if mode not in ABLATIONS or mode == "full":
            raise ConfigError(f"ablation modes must be drawn from {ABLATIONS[1:]}")
    paths = RunPaths.at(run_dir)

    full_report_path = paths.reports / "eval_full" / "report.json"
    if full_report_path.exists():
        full = json.loads(full_report_path.read_text())
    else:
        full = run_evaluate(cfg, run_dir, "full", log, allow_mismatch).to_json_dict()

    table = {"full": full["aggregates"] | {"fid": full["fid"]}}
    deltas = {}
    for mode in modes:
        run_train_mwt(cfg, run_dir, log, ablation=mode, allow_mismatch=allow_mismatch)
        rep = run_evaluate(cfg, run_dir, mode, log, allow_mismatch).to_json_dict()
        table[mode] = rep["aggregates"] | {"fid": rep["fid"]}
        deltas[mode] = {
            "psnr": rep["aggregates"]["psnr"]["mean"] - full["aggregates"]["psnr"]["mean"],
            "lpips": rep["aggregates"]["lpips"]["mean"] - full["aggregates"]["lpips"]["mean"],
            "fid": (rep["fid"].get("overall") or 0.0) - (full["fid"].get("overall") or 0.0),
        }
    summary = {
        "config_hash": cfg.config_hash(),
        "table": table,
        "deltas_vs_full": deltas,
    }
    paths.reports.mkdir(parents=True, exist_ok=True)
    (paths.reports / "ablation_report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True)
    )
    if log is not None:
        for mode, d in deltas.items():
            log(
                f"ablation {mode}: delta psnr {d['psnr']:+.2f} dB, "
                f"delta lpips {d['lpips']:+.4f}, delta fid {d['fid']:+.2f}"
            )
    return summary
