"""Synthetic scene generation and paired degradation.

Scenes are procedural textures drawn from four archetypes (gridded
pavement, field stripes, building blocks, smooth water) keyed off the
category name, so captions, metadata, and pixels stay mutually
consistent. Scene content is a pure function of (category, seed); the
low-resolution partner is produced by an explicit degradation recipe
(blur, downscale, sensor noise, optional JPEG round-trip) stored with
the pair.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .captions import Caption, CAPTION_TEMPLATE
from .embeddings import MetadataRecord
from .errors import DataError
from .images import ImageTensor, load_png, save_png

ARCHETYPES = ("grid", "stripes", "blocks", "smooth")

_KEYWORDS = {
    "grid": ("airport", "airfield", "runway", "road", "port", "station", "parking"),
    "stripes": ("crop", "field", "farm", "orchard", "vineyard"),
    "blocks": ("residential", "building", "urban", "city", "town", "industrial"),
    "smooth": ("water", "lake", "river", "sea", "pond", "reservoir"),
}


def _stable_hash(*parts) -> int:
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def category_archetype(category: str) -> str:
    """Pick the texture family for a category, by keyword then by hash."""
    lowered = category.lower()
    for arch, words in _KEYWORDS.items():
        if any(w in lowered for w in words):
            return arch
    return ARCHETYPES[_stable_hash("archetype", lowered) % len(ARCHETYPES)]


_PALETTES = {
    "grid": (np.array([0.32, 0.32, 0.34]), np.array([0.85, 0.85, 0.82])),
    "stripes": (np.array([0.20, 0.42, 0.16]), np.array([0.55, 0.62, 0.25])),
    "blocks": (np.array([0.52, 0.42, 0.33]), np.array([0.75, 0.35, 0.28])),
    "smooth": (np.array([0.08, 0.22, 0.45]), np.array([0.25, 0.45, 0.62])),
}


def _render_grid(rng: np.random.Generator, size: int) -> np.ndarray:
    base, line = _PALETTES["grid"]
    img = np.tile(base, (size, size, 1))
    img += rng.normal(0, 0.02, size=(size, size, 1))
    period = int(rng.integers(8, 17))
    width = int(rng.integers(1, 3))
    phase_r = int(rng.integers(0, period))
    phase_c = int(rng.integers(0, period))
    rows = (np.arange(size) + phase_r) % period < width
    cols = (np.arange(size) + phase_c) % period < width
    img[rows, :, :] = line * rng.uniform(0.85, 1.0)
    img[:, cols, :] = line * rng.uniform(0.85, 1.0)
    # one wide runway-like band
    start = int(rng.integers(0, size - size // 6))
    band = slice(start, start + size // 8 + 1)
    if rng.random() < 0.5:
        img[band, :, :] = base * 0.6
    else:
        img[:, band, :] = base * 0.6
    return img


def _render_stripes(rng: np.random.Generator, size: int) -> np.ndarray:
    dark, bright = _PALETTES["stripes"]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(3.0, 8.0) * 2 * np.pi / size
    wave = np.sin((np.cos(theta) * xx + np.sin(theta) * yy) * freq + rng.uniform(0, 6.28))
    mix = (wave * 0.5 + 0.5)[..., None]
    img = dark * (1 - mix) + bright * mix
    img += rng.normal(0, 0.015, size=(size, size, 3))
    return img


def _render_blocks(rng: np.random.Generator, size: int) -> np.ndarray:
    ground, roof = _PALETTES["blocks"]
    img = np.tile(ground, (size, size, 1)) + rng.normal(0, 0.02, size=(size, size, 1))
    for _ in range(int(rng.integers(6, 13))):
        h = int(rng.integers(size // 10, size // 3))
        w = int(rng.integers(size // 10, size // 3))
        r = int(rng.integers(0, size - h))
        c = int(rng.integers(0, size - w))
        color = roof * rng.uniform(0.6, 1.2) + rng.normal(0, 0.04, size=3)
        img[r : r + h, c : c + w] = color
    return img


def _render_smooth(rng: np.random.Generator, size: int) -> np.ndarray:
    deep, shallow = _PALETTES["smooth"]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    field = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 2.5, size=2)
        field += rng.uniform(0.2, 0.5) * np.sin(
            2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 6.28)
        )
    mix = ((field - field.min()) / (np.ptp(field) + 1e-9))[..., None]
    img = deep * (1 - mix) + shallow * mix
    img += rng.normal(0, 0.008, size=(size, size, 3))
    return img


_RENDERERS = {
    "grid": _render_grid,
    "stripes": _render_stripes,
    "blocks": _render_blocks,
    "smooth": _render_smooth,
}


def render_scene(category: str, seed: int, hr_size: int = 64) -> np.ndarray:
    """Pure scene content for (category, seed): float32 HWC in [0, 1]."""
    rng = np.random.default_rng(_stable_hash("scene", category.lower(), seed))
    arch = category_archetype(category)
    img = _RENDERERS[arch](rng, hr_size)
    # small per-category hue signature so same-archetype categories differ
    tint = np.array(
        [
            (_stable_hash("tint-r", category.lower()) % 1000) / 1000.0,
            (_stable_hash("tint-g", category.lower()) % 1000) / 1000.0,
            (_stable_hash("tint-b", category.lower()) % 1000) / 1000.0,
        ]
    )
    img = img * 0.92 + tint * 0.08
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class DegradationRecipe:
    """Everything needed to reproduce an LR image from its HR partner."""

    blur_sigma: float
    noise_sigma: float
    jpeg_quality: int | None
    downscale_mode: str
    noise_seed: int

    def validate(self) -> None:
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma={self.blur_sigma} must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma={self.noise_sigma} must be >= 0")
        if self.jpeg_quality is not None and not 1 <= self.jpeg_quality <= 100:
            raise ValueError(f"jpeg_quality={self.jpeg_quality} outside [1, 100]")
        if self.downscale_mode not in ("area", "bilinear"):
            raise ValueError(
                f"downscale_mode={self.downscale_mode!r} must be 'area' or 'bilinear'"
            )

    @classmethod
    def identity(cls) -> "DegradationRecipe":
        """No blur, no noise, no compression: pure area downscale."""
        return cls(
            blur_sigma=0.0, noise_sigma=0.0, jpeg_quality=None,
            downscale_mode="area", noise_seed=0,
        )


def sample_recipe(
    rng: np.random.Generator,
    blur_sigma_range: tuple[float, float] = (0.4, 1.2),
    noise_sigma_range: tuple[float, float] = (0.0, 0.03),
    compression_prob: float = 0.3,
    quality_range: tuple[int, int] = (40, 85),
    downscale_mode: str = "area",
) -> DegradationRecipe:
    quality = None
    if rng.random() < compression_prob:
        quality = int(rng.integers(quality_range[0], quality_range[1] + 1))
    recipe = DegradationRecipe(
        blur_sigma=float(rng.uniform(*blur_sigma_range)),
        noise_sigma=float(rng.uniform(*noise_sigma_range)),
        jpeg_quality=quality,
        downscale_mode=downscale_mode,
        noise_seed=int(rng.integers(0, 2**31 - 1)),
    )
    recipe.validate()
    return recipe


def block_mean_downscale(hr: np.ndarray, scale: int) -> np.ndarray:
    """Exact area downscale: mean over scale x scale blocks."""
    h, w = hr.shape[:2]
    if h % scale or w % scale:
        raise ValueError(f"image shape ({h}, {w}) not divisible by scale {scale}")
    return hr.reshape(h // scale, scale, w // scale, scale, -1).mean(axis=(1, 3))


def degrade(hr: np.ndarray, recipe: DegradationRecipe, scale: int) -> np.ndarray:
    """Apply the recorded degradation chain to an HR image."""
    recipe.validate()
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    img = np.asarray(hr, dtype=np.float32)
    if recipe.blur_sigma > 0:
        img = cv2.GaussianBlur(img, (0, 0), recipe.blur_sigma)
    if recipe.downscale_mode == "area":
        img = block_mean_downscale(img, scale).astype(np.float32)
    else:
        h, w = img.shape[:2]
        img = cv2.resize(img, (w // scale, h // scale), interpolation=cv2.INTER_LINEAR)
    if recipe.noise_sigma > 0:
        rng = np.random.default_rng(recipe.noise_seed)
        img = img + rng.normal(0, recipe.noise_sigma, size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    if recipe.jpeg_quality is not None:
        buf = io.BytesIO()
        Image.fromarray((img * 255.0).round().astype(np.uint8)).save(
            buf, format="JPEG", quality=recipe.jpeg_quality
        )
        buf.seek(0)
        with Image.open(buf) as im:
            img = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return img.astype(np.float32)


@dataclass
class ScenePair:
    """One training example: HR/LR images plus everything that made them."""

    scene_id: str
    category: str
    split: str
    hr: ImageTensor
    lr: ImageTensor
    metadata: MetadataRecord
    caption: Caption
    recipe: DegradationRecipe

    def validate(self, scale: int) -> None:
        hh, hw = self.hr.hw
        lh, lw = self.lr.hw
        if hh != lh * scale or hw != lw * scale:
            raise ValueError(
                f"{self.scene_id}: hr {self.hr.hw} is not {scale}x lr {self.lr.hw}"
            )
        self.metadata.validate()
        if self.caption.category != self.category:
            raise ValueError(
                f"{self.scene_id}: caption names {self.caption.category!r}, "
                f"pair is {self.category!r}"
            )
        self.recipe.validate()


def _sample_metadata(rng: np.random.Generator) -> MetadataRecord:
    rec = MetadataRecord(
        lon=float(rng.uniform(-180.0, 180.0)),
        lat=float(rng.uniform(-60.0, 70.0)),
        gsd=float(rng.uniform(0.3, 1.2)),
        cloud_cover=float(rng.uniform(0.0, 0.5)),
        year=int(rng.integers(2002, 2018)),
        month=int(rng.integers(1, 13)),
        day=int(rng.integers(1, 29)),
    )
    rec.validate()
    return rec


def slugify(category: str) -> str:
    return category.lower().replace(" ", "-")


def generate_scene(
    category: str,
    seed: int,
    hr_size: int = 64,
    scale: int = 4,
    recipe: DegradationRecipe | None = None,
    split: str = "train",
) -> ScenePair:
    """Build one fully deterministic HR/LR pair.

    Content depends only on (category, seed); metadata and, when not
    supplied, the degradation recipe are derived from the same seed.
    """
    content = render_scene(category, seed, hr_size)
    meta_rng = np.random.default_rng(_stable_hash("meta", category.lower(), seed))
    metadata = _sample_metadata(meta_rng)
    # haze: cloud cover visibly whitens the scene, tying metadata to pixels
    haze = metadata.cloud_cover * 0.3
    content = np.clip(content * (1 - haze) + haze, 0.0, 1.0).astype(np.float32)
    if recipe is None:
        recipe = sample_recipe(
            np.random.default_rng(_stable_hash("recipe", category.lower(), seed))
        )
    lr = degrade(content, recipe, scale)
    caption = Caption(
        text=CAPTION_TEMPLATE.format(category=category), category=category
    )
    pair = ScenePair(
        scene_id=f"{split}-{slugify(category)}-{seed:08d}",
        category=category,
        split=split,
        hr=ImageTensor(content, role="hr"),
        lr=ImageTensor(lr, role="lr"),
        metadata=metadata,
        caption=caption,
        recipe=recipe,
    )
    pair.validate(scale)
    return pair


def build_dataset(
    categories: list[str],
    train_scenes: int,
    val_scenes: int,
    master_seed: int,
    hr_size: int = 64,
    scale: int = 4,
    recipe_kwargs: dict | None = None,
    log=None,
) -> dict[str, list[ScenePair]]:
    """Generate balanced train/val scene lists."""
    if len(categories) != len(set(categories)):
        raise ValueError("categories must be unique")
    out: dict[str, list[ScenePair]] = {}
    for split, count in (("train", train_scenes), ("val", val_scenes)):
        pairs = []
        for i in range(count):
            category = categories[i % len(categories)]
            seed = _stable_hash("pair-seed", master_seed, split, i) % (10**8)
            recipe = sample_recipe(
                np.random.default_rng(_stable_hash("pair-recipe", master_seed, split, i)),
                **(recipe_kwargs or {}),
            )
            pairs.append(
                generate_scene(category, seed, hr_size, scale, recipe, split)
            )
            if log is not None and (i + 1) % 500 == 0:
                log(f"{split}: generated {i + 1}/{count} scenes")
        out[split] = pairs
    return out


def write_dataset(
    root: str | Path,
    splits: dict[str, list[ScenePair]],
    vocabulary: list[str],
    master_seed: int,
    hr_size: int,
    scale: int,
    config_hash: str = "",
) -> dict:
    """Write the on-disk layout and return the manifest."""
    root = Path(root)
    hasher = hashlib.sha256()
    counts = {}
    for split, pairs in splits.items():
        hr_dir = root / split / "hr"
        lr_dir = root / split / "lr"
        hr_dir.mkdir(parents=True, exist_ok=True)
        lr_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for pair in sorted(pairs, key=lambda p: p.scene_id):
            save_png(hr_dir / f"{pair.scene_id}.png", pair.hr.data)
            save_png(lr_dir / f"{pair.scene_id}.png", pair.lr.data)
            recipe = asdict(pair.recipe)
            lines.append(
                json.dumps(
                    {
                        "scene_id": pair.scene_id,
                        "category": pair.category,
                        "caption": pair.caption.text,
                        "metadata": json.loads(pair.metadata.to_json()),
                        "recipe": recipe,
                    },
                    sort_keys=True,
                )
            )
        (root / split / "metadata.jsonl").write_text("\n".join(lines) + "\n")
        for line in lines:
            hasher.update(line.encode("utf-8"))
        for f in sorted(hr_dir.iterdir()) + sorted(lr_dir.iterdir()):
            hasher.update(f.read_bytes())
        counts[split] = len(pairs)
    manifest = {
        "vocabulary": list(vocabulary),
        "hr_size": hr_size,
        "scale": scale,
        "splits": counts,
        "master_seed": master_seed,
        "config_hash": config_hash,
        "content_hash": hasher.hexdigest(),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_manifest(root: str | Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from exc


def load_dataset(
    root: str | Path, split: str, shuffle_seed: int | None = None
) -> list[ScenePair]:
    """Load one split back into memory, validating every pair.

    Order is sorted by scene id, optionally shuffled by a seeded
    generator so iteration order is reproducible either way.
    """
    root = Path(root)
    manifest = read_manifest(root)
    meta_path = root / split / "metadata.jsonl"
    if split not in manifest["splits"]:
        raise DataError(f"split {split!r} not recorded in {root / 'manifest.json'}")
    if not meta_path.exists():
        raise DataError(f"missing metadata file {meta_path}")
    scale = int(manifest["scale"])
    vocabulary = manifest["vocabulary"]
    pairs = []
    for lineno, line in enumerate(meta_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{meta_path}:{lineno}: bad JSON: {exc}") from exc
        try:
            scene_id = row["scene_id"]
            hr_path = root / split / "hr" / f"{scene_id}.png"
            lr_path = root / split / "lr" / f"{scene_id}.png"
            if not hr_path.exists() or not lr_path.exists():
                raise DataError(f"{scene_id}: image files missing under {root / split}")
            metadata = MetadataRecord.from_json(json.dumps(row["metadata"]))
            raw_recipe = dict(row["recipe"])
            recipe = DegradationRecipe(**raw_recipe)
            recipe.validate()
            pair = ScenePair(
                scene_id=scene_id,
                category=row["category"],
                split=split,
                hr=ImageTensor(load_png(hr_path), role="hr"),
                lr=ImageTensor(load_png(lr_path), role="lr"),
                metadata=metadata,
                caption=Caption.parse(row["caption"], vocabulary),
                recipe=recipe,
            )
            pair.validate(scale)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{meta_path}:{lineno}: invalid record: {exc}") from exc
        pairs.append(pair)
    expected = manifest["splits"][split]
    if len(pairs) != expected:
        raise DataError(
            f"{root}: split {split!r} has {len(pairs)} records, manifest says {expected}"
        )
    pairs.sort(key=lambda p: p.scene_id)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(pairs))
        pairs = [pairs[i] for i in order]
    return pairs
