"""Image quality metrics and the evaluation harness.

Distribution distance (fid_proxy) and perceptual distance (lpips_proxy)
are computed in the wavelet transformer's feature spaces instead of an
external inception/VGG network, keeping the whole stack self-contained.
PSNR and SSIM are standard pixel-space references.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from skimage.metrics import structural_similarity

from .images import ImageTensor, bicubic_resize, hwc_to_nchw, make_grid, save_png
from .wavevit import WaveViT


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity for HWC float images in [0, 1]."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(
        structural_similarity(a, b, channel_axis=2, data_range=1.0)
    )


def _psd_sqrt_trace(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """tr((sigma_a sigma_b)^1/2) via the symmetrized product.

    Uses tr((A B)^1/2) = tr((B^1/2 A B^1/2)^1/2); the inner matrix is
    symmetric PSD up to rounding, so tiny negative eigenvalues are
    clamped instead of going complex.
    """
    vals_b, vecs_b = np.linalg.eigh(sigma_b)
    vals_b = np.clip(vals_b, 0.0, None)
    root_b = (vecs_b * np.sqrt(vals_b)) @ vecs_b.T
    inner = root_b @ sigma_a @ root_b
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -1e-6:
        raise ValueError(
            f"product matrix has eigenvalue {vals.min():.3e}; features are degenerate"
        )
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def fid_proxy(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between two embedding sets of shape (N, D)."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    for name, x in (("features_a", a), ("features_b", b)):
        if x.ndim != 2:
            raise ValueError(f"{name} must be (N, D), got shape {x.shape}")
        if x.shape[0] < 2:
            raise ValueError(f"{name} needs at least 2 rows for a covariance")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sigma_a = np.cov(a, rowvar=False)
    sigma_b = np.cov(b, rowvar=False)
    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    cov_term = float(np.trace(sigma_a) + np.trace(sigma_b)) - 2.0 * _psd_sqrt_trace(
        sigma_a, sigma_b
    )
    return mean_term + cov_term


def embed_images(model: WaveViT, images: list[np.ndarray], batch_size: int = 32) -> np.ndarray:
    """w embeddings for a list of HWC [0,1] images, shape (N, d_embed_out)."""
    model.eval()
    chunks = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = hwc_to_nchw(images[i : i + batch_size])
            chunks.append(model.embed(batch).numpy())
    return np.concatenate(chunks, axis=0)


def lpips_proxy(model: WaveViT, a: np.ndarray, b: np.ndarray) -> float:
    """Stage-averaged normalized feature distance between two images.

    Each stage's features are unit-normalized along channels at every
    spatial site before the squared difference, so the result is zero
    exactly for identical inputs and symmetric in its arguments.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    model.eval()
    batch = hwc_to_nchw([a, b])
    with torch.no_grad():
        feats = model.stage_features(batch)
    total = 0.0
    for f in feats:
        norm = f / (f.norm(dim=1, keepdim=True) + 1e-10)
        total += float(((norm[0] - norm[1]) ** 2).mean())
    return total / len(feats)


@dataclass
class SceneScore:
    """Per-scene metrics for the model and the bicubic baseline."""

    scene_id: str
    category: str
    psnr: float
    ssim: float
    lpips: float
    psnr_bicubic: float
    ssim_bicubic: float
    lpips_bicubic: float


@dataclass
class EvalReport:
    scores: list[SceneScore]
    aggregates: dict
    fid: dict
    config_hash: str = ""
    grid_rows: list = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "num_scenes": len(self.scores),
            "aggregates": self.aggregates,
            "fid": self.fid,
            "scores": [asdict(s) for s in self.scores],
        }


def _mean_std(values: list[float]) -> dict:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return {"mean": math.inf, "std": 0.0}
    return {
        "mean": float(np.mean(finite)),
        "std": float(np.std(finite)),
    }


def select_eval_pairs(pairs, categories_filter=None, limit_per_category=None):
    """Pick the evaluation subset: the first N pairs of each category.

    ``categories_filter`` keeps only the named categories (None keeps
    all); ``limit_per_category`` caps how many pairs of each category
    survive, in their original order (None keeps every match). Raises
    if the result is empty or the cap is not positive.
    """
    if limit_per_category is not None and limit_per_category <= 0:
        raise ValueError(
            f"limit_per_category must be positive, got {limit_per_category}"
        )
    if categories_filter is not None:
        wanted = set(categories_filter)
        present = {p.category for p in pairs}
        unknown = sorted(wanted - present)
        if unknown:
            raise ValueError(
                f"unknown categories {unknown}; available: {sorted(present)}"
            )
        pairs = [p for p in pairs if p.category in wanted]
    if limit_per_category is not None:
        taken: dict[str, int] = {}
        kept = []
        for p in pairs:
            n = taken.get(p.category, 0)
            if n < limit_per_category:
                kept.append(p)
                taken[p.category] = n + 1
        pairs = kept
    if not pairs:
        raise ValueError("evaluation subset is empty after filtering")
    return list(pairs)


def evaluate_pairs(
    sr_fn,
    pairs,
    feature_model: WaveViT,
    fid_min_per_category: int = 16,
    keep_grid_rows: int = 8,
    config_hash: str = "",
    log=None,
) -> EvalReport:
    """Score a super-resolver against ground truth and a bicubic baseline.

    ``sr_fn(pair) -> ImageTensor`` produces the model output for one
    scene. fid_proxy is reported overall and per category, the latter
    only where at least ``fid_min_per_category`` scenes exist on each
    side.
    """
    if not pairs:
        raise ValueError("no pairs to evaluate")
    scores = []
    grid_rows = []
    sr_images, hr_images = [], []
    by_category: dict[str, tuple[list, list]] = {}
    for i, pair in enumerate(pairs):
        sr = sr_fn(pair)
        if not isinstance(sr, ImageTensor):
            sr = ImageTensor(np.asarray(sr), role="sr")
        hr = pair.hr.data
        if sr.data.shape != hr.shape:
            raise ValueError(
                f"{pair.scene_id}: model output {sr.data.shape} != hr {hr.shape}"
            )
        up = bicubic_resize(pair.lr.data, hr.shape[:2])
        scores.append(
            SceneScore(
                scene_id=pair.scene_id,
                category=pair.category,
                psnr=psnr(sr.data, hr),
                ssim=ssim(sr.data, hr),
                lpips=lpips_proxy(feature_model, sr.data, hr),
                psnr_bicubic=psnr(up, hr),
                ssim_bicubic=ssim(up, hr),
                lpips_bicubic=lpips_proxy(feature_model, up, hr),
            )
        )
        sr_images.append(sr.data)
        hr_images.append(hr)
        slot = by_category.setdefault(pair.category, ([], []))
        slot[0].append(sr.data)
        slot[1].append(hr)
        if len(grid_rows) < keep_grid_rows:
            grid_rows.append([up, sr.data, hr])
        if log is not None and (i + 1) % 10 == 0:
            log(f"evaluated {i + 1}/{len(pairs)} scenes")

    fid: dict[str, float | None] = {}
    if len(sr_images) >= 2:
        sr_feats = embed_images(feature_model, sr_images)
        hr_feats = embed_images(feature_model, hr_images)
        fid["overall"] = fid_proxy(sr_feats, hr_feats)
    for cat, (srs, hrs) in sorted(by_category.items()):
        if len(srs) >= fid_min_per_category:
            fid[cat] = fid_proxy(
                embed_images(feature_model, srs), embed_images(feature_model, hrs)
            )
        else:
            fid[cat] = None

    aggregates = {
        "psnr": _mean_std([s.psnr for s in scores]),
        "ssim": _mean_std([s.ssim for s in scores]),
        "lpips": _mean_std([s.lpips for s in scores]),
        "psnr_bicubic": _mean_std([s.psnr_bicubic for s in scores]),
        "ssim_bicubic": _mean_std([s.ssim_bicubic for s in scores]),
        "lpips_bicubic": _mean_std([s.lpips_bicubic for s in scores]),
    }
    return EvalReport(
        scores=scores,
        aggregates=aggregates,
        fid=fid,
        config_hash=config_hash,
        grid_rows=grid_rows,
    )


def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, report.csv, and a comparison grid PNG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    json_path = out / "report.json"
    json_path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    paths["json"] = json_path

    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [
            "scene_id", "category", "psnr", "ssim", "lpips",
            "psnr_bicubic", "ssim_bicubic", "lpips_bicubic",
        ]
        writer.writerow(cols)
        for s in report.scores:
            writer.writerow([getattr(s, c) for c in cols])
    paths["csv"] = csv_path

    if report.grid_rows:
        grid_path = out / "grid.png"
        save_png(grid_path, make_grid(report.grid_rows))
        paths["grid"] = grid_path
    return paths
