"""Orthonormal 2-D Haar wavelet transform.

Pure numpy, implemented with stride-2 slicing rather than convolution
since the Haar kernels have support 2. The transform is orthonormal: a
constant patch of value c has LL coefficient 2c per 2x2 block, detail
bands measure horizontal/vertical/diagonal contrast, and total energy is
preserved exactly (up to float rounding).

Subband naming: the first letter is the filter along rows (vertical
axis), the second along columns. LH therefore responds to horizontal
intensity transitions within a row, HL to vertical ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class WaveletLevel:
    """Subbands of one decomposition level, each of shape (H/2, W/2[, C])."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def detail_energy(self) -> float:
        return float(
            np.sum(self.lh**2) + np.sum(self.hl**2) + np.sum(self.hh**2)
        )


@dataclass
class WaveletPyramid:
    """Multi-level decomposition; levels[0] is the finest."""

    levels: list[WaveletLevel]
    base_shape: tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def coarsest_ll(self) -> np.ndarray:
        return self.levels[-1].ll

    def energy(self) -> float:
        """Total squared coefficient energy: coarsest LL plus all details."""
        total = float(np.sum(self.coarsest_ll**2))
        for lvl in self.levels:
            total += lvl.detail_energy()
        return total


def _check_even(shape: tuple[int, ...], depth: int) -> None:
    h, w = shape[0], shape[1]
    div = 2**depth
    if h % div != 0 or w % div != 0:
        pad_h = ((h + div - 1) // div) * div
        pad_w = ((w + div - 1) // div) * div
        raise ValueError(
            f"spatial shape ({h}, {w}) not divisible by 2**depth={div}; "
            f"pad the input to ({pad_h}, {pad_w}) first"
        )


def dwt2_level(x: np.ndarray) -> WaveletLevel:
    """One orthonormal Haar analysis step on a 2-D or HWC array."""
    if x.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D or HWC array, got ndim={x.ndim}")
    _check_even(x.shape, 1)
    x = np.asarray(x, dtype=np.float64)
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0
    hl = (a + b - c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return WaveletLevel(ll=ll, lh=lh, hl=hl, hh=hh)


def idwt2_level(level: WaveletLevel) -> np.ndarray:
    """Invert one analysis step exactly."""
    ll, lh, hl, hh = level.ll, level.lh, level.hl, level.hh
    for name, band in (("lh", lh), ("hl", hl), ("hh", hh)):
        if band.shape != ll.shape:
            raise ValueError(
                f"subband {name} shape {band.shape} does not match ll {ll.shape}"
            )
    h, w = ll.shape[0], ll.shape[1]
    out = np.empty((2 * h, 2 * w) + ll.shape[2:], dtype=np.float64)
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 0::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def dwt2(image: np.ndarray, depth: int = 1) -> WaveletPyramid:
    """Decompose an image to ``depth`` levels.

    Args:
        image: 2-D grayscale or HWC array; H and W must be divisible by
            2**depth.
        depth: number of cascade levels, at least 1.

    Returns:
        A WaveletPyramid whose level k has subbands of shape
        (H / 2**(k+1), W / 2**(k+1)[, C]).
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if image.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D or HWC array, got ndim={image.ndim}")
    _check_even(image.shape, depth)
    levels = []
    current = np.asarray(image, dtype=np.float64)
    for _ in range(depth):
        lvl = dwt2_level(current)
        levels.append(lvl)
        current = lvl.ll
    return WaveletPyramid(levels=levels, base_shape=image.shape)


def idwt2(pyramid: WaveletPyramid) -> np.ndarray:
    """Reconstruct the image a pyramid was built from."""
    if not pyramid.levels:
        raise ValueError("pyramid has no levels")
    current = pyramid.coarsest_ll
    for lvl in reversed(pyramid.levels):
        merged = WaveletLevel(ll=current, lh=lvl.lh, hl=lvl.hl, hh=lvl.hh)
        current = idwt2_level(merged)
    if current.shape != tuple(pyramid.base_shape):
        raise ValueError(
            f"reconstruction shape {current.shape} does not match recorded "
            f"base shape {tuple(pyramid.base_shape)}"
        )
    return current
