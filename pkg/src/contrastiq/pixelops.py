"""Pixel-level transforms feeding the deviation features.

All operations are pure: they take a GrayImage and return a new one (or a
scalar), never mutating their input.
"""

from __future__ import annotations

import numpy as np

from .imgio import GrayImage


class DegenerateOutputError(Exception):
    """Downsampling would produce an image with zero rows or columns."""


def round_half_away(value: float) -> int:
    """Round half away from zero (Python's round() is half-to-even)."""
    return int(np.floor(value + 0.5)) if value >= 0 else -int(np.floor(-value + 0.5))


def downsample_factor(height: int, width: int) -> int:
    """Block size for resolution-flattening: max(2, round(min(h, w) / 512))."""
    if height < 1 or width < 1:
        raise ValueError(f"invalid image dimensions {height}x{width}")
    return max(2, round_half_away(min(height, width) / 512.0))


def downsample(img: GrayImage, m: int) -> GrayImage:
    """Box-average the image over m-by-m blocks.

    Output dimensions are floor(h/m) x floor(w/m); trailing rows and columns
    that do not fill a block are dropped.
    """
    if m < 2:
        raise ValueError(f"downsample factor must be >= 2, got {m}")
    out_h, out_w = img.height // m, img.width // m
    if out_h == 0 or out_w == 0:
        raise DegenerateOutputError(
            f"{img.height}x{img.width} image collapses to {out_h}x{out_w} at factor {m}"
        )
    cropped = img.data[: out_h * m, : out_w * m]
    means = cropped.reshape(out_h, m, out_w, m).mean(axis=(1, 3))
    # block means of values in [0, 1] can exceed the bound only by rounding fuzz
    return GrayImage(np.clip(means, 0.0, 1.0))


def complement(img: GrayImage) -> GrayImage:
    """Intensity inversion x -> 1 - x (the normalized 255 - L)."""
    return GrayImage(1.0 - img.data)


def fast_pow(x, k: int):
    """x**k for positive integer k by square-and-multiply.

    Works on scalars and arrays alike; costs floor(log2 k) squarings plus
    popcount(k) - 1 extra multiplies instead of k - 1.
    """
    if k < 1:
        raise ValueError(f"exponent must be a positive integer, got {k}")
    result = None
    base = x
    while True:
        if k & 1:
            result = base if result is None else result * base
        k >>= 1
        if not k:
            break
        base = base * base
    return result


def power_law(img: GrayImage, q: int) -> GrayImage:
    """Pixel-wise x -> x**q, the transform that amplifies contrast distortion."""
    if q < 1:
        raise ValueError(f"power-law exponent must be a positive integer, got {q}")
    if q == 1:
        return img
    return GrayImage(fast_pow(img.data, q))
