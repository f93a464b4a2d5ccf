"""Image containers and conversion helpers.

Images move through the pipeline as float32 HWC arrays in [0, 1]. Torch
models take NCHW tensors; the helpers here convert between the two and
handle PNG IO through Pillow.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image


@dataclass
class ImageTensor:
    """A single image: float32 HWC in [0, 1] plus its role in a pair."""

    data: np.ndarray
    role: str = "hr"  # hr | lr | sr

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 array, got shape {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError(
                f"pixel values outside [0, 1]: min={self.data.min():.4f} "
                f"max={self.data.max():.4f}"
            )

    @property
    def hw(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


def hwc_to_nchw(images: np.ndarray | list[np.ndarray]) -> torch.Tensor:
    """Stack HWC float arrays into a float32 NCHW tensor."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def nchw_to_hwc(batch: torch.Tensor) -> list[np.ndarray]:
    """Split an NCHW tensor back into float32 HWC arrays."""
    arr = batch.detach().cpu().float().permute(0, 2, 3, 1).numpy()
    return [np.ascontiguousarray(a) for a in arr]


def save_png(path: str | Path, image: np.ndarray) -> None:
    """Write a float [0,1] HWC image as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(Path(path))


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG into a float32 [0,1] HWC array."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def bicubic_resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bicubic resize to (H, W), clipped back to [0, 1]."""
    h, w = size
    out = cv2.resize(
        np.asarray(image, dtype=np.float32), (w, h), interpolation=cv2.INTER_CUBIC
    )
    return np.clip(out, 0.0, 1.0)


def make_grid(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile images into a grid; each row is resized to its tallest member."""
    row_imgs = []
    for row in rows:
        target_h = max(im.shape[0] for im in row)
        cells = []
        for im in row:
            if im.shape[0] != target_h:
                scale = target_h / im.shape[0]
                im = cv2.resize(
                    im,
                    (int(round(im.shape[1] * scale)), target_h),
                    interpolation=cv2.INTER_NEAREST,
                )
            cells.append(np.clip(im, 0.0, 1.0))
        spacer = np.ones((target_h, pad, 3), dtype=np.float32)
        glued = cells[0]
        for c in cells[1:]:
            glued = np.concatenate([glued, spacer, c], axis=1)
        row_imgs.append(glued)
    width = max(r.shape[1] for r in row_imgs)
    padded = []
    for r in row_imgs:
        if r.shape[1] < width:
            fill = np.ones((r.shape[0], width - r.shape[1], 3), dtype=np.float32)
            r = np.concatenate([r, fill], axis=1)
        padded.append(r)
        padded.append(np.ones((pad, width, 3), dtype=np.float32))
    return np.concatenate(padded[:-1], axis=0)
