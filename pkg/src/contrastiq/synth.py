"""Synthetic contrast-distorted dataset generator.

Produces gamma-remapped and mean-shifted variants of procedural grayscale
scenes, with a pseudo subjective score that decreases monotonically in
distortion severity.  The output (PGM files plus a manifest) exercises the
full train/evaluate pipeline without any third-party imagery.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .imgio import DatasetManifest, DatasetRecord, GrayImage, write_manifest, write_pgm

KIND_GAMMA = "gamma"
KIND_MEANSHIFT = "meanshift"
DEFAULT_KINDS = (KIND_GAMMA, KIND_MEANSHIFT)
DEFAULT_LEVELS = (0.0, 0.12, 0.25, 0.45, 0.7)


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion instance: gamma exponent g or additive shift delta."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind == KIND_GAMMA:
            if not self.param > 0.0:
                raise ValueError(f"gamma exponent must be positive, got {self.param}")
        elif self.kind == KIND_MEANSHIFT:
            if not -1.0 <= self.param <= 1.0:
                raise ValueError(f"mean shift must lie in [-1, 1], got {self.param}")
        else:
            raise ValueError(f"unknown distortion kind {self.kind!r}")

    @property
    def severity(self) -> float:
        """|log g| for gamma, |delta| for mean shift; 0 means identity."""
        if self.kind == KIND_GAMMA:
            return abs(math.log(self.param))
        return abs(self.param)


def apply_distortion(img: GrayImage, spec: DistortionSpec) -> GrayImage:
    """Gamma: x -> x**g.  Mean shift: x -> clip(x + delta, 0, 1)."""
    if spec.kind == KIND_GAMMA:
        if spec.param == 1.0:
            return img
        return GrayImage(np.power(img.data, spec.param))
    if spec.param == 0.0:
        return img
    return GrayImage(np.clip(img.data + spec.param, 0.0, 1.0))


def pseudo_mos(severity: float) -> float:
    """Monotone decreasing severity-to-score map onto [1, 9]; 9 at severity 0."""
    if severity < 0.0:
        raise ValueError(f"severity must be >= 0, got {severity}")
    return 1.0 + 8.0 / (1.0 + severity)


def generate_sources(count: int, height: int = 64, width: int = 64,
                     seed: int = 0) -> list[tuple[str, GrayImage]]:
    """Deterministic procedural scenes: mid-gray-dominant gratings plus noise.

    Intensities are squashed into (0.05, 0.95) so both distortion families
    have room to act before clipping.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    yy, xx = np.meshgrid(
        np.arange(height, dtype=np.float64) / height,
        np.arange(width, dtype=np.float64) / width,
        indexing="ij",
    )
    sources = []
    for i in range(count):
        rng = np.random.default_rng([np.uint32(seed), np.uint32(i)])
        img = np.full((height, width), 0.5)
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 6.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.05, 0.18)
            img += amp * np.cos(2.0 * np.pi * (fy * yy + fx * xx) + phase)
        img += rng.normal(0.0, 0.02, size=img.shape)
        img = 0.5 + 0.45 * np.tanh(1.6 * (img - 0.5))
        sources.append((f"c{i:03d}", GrayImage(img)))
    return sources


def spec_for_severity(kind: str, severity: float) -> DistortionSpec:
    """Canonical parameterization: gamma compresses toward black (g = e^s),
    mean shift brightens (delta = +s).

    The two kinds move the deviation features in opposite directions, which
    keeps severity recoverable from features across the whole dataset.
    """
    if severity < 0.0:
        raise ValueError(f"severity must be >= 0, got {severity}")
    if kind == KIND_GAMMA:
        return DistortionSpec(kind, math.exp(severity))
    if kind == KIND_MEANSHIFT:
        return DistortionSpec(kind, severity)
    raise ValueError(f"unknown distortion kind {kind!r}")


def make_dataset(sources: list[tuple[str, GrayImage]], out_dir: str,
                 kinds=DEFAULT_KINDS, levels=DEFAULT_LEVELS,
                 score_map=pseudo_mos) -> DatasetManifest:
    """Write every source x kind x severity combination under out_dir.

    File naming is `content_<id>_<kind>_<level index>.pgm`; the manifest is
    written alongside as manifest.csv and also returned.  Output depends
    only on the arguments, so reruns are byte-identical.
    """
    if len(sources) < 2:
        raise ValueError(f"need at least 2 source images, got {len(sources)}")
    kinds = list(kinds)
    levels = [float(v) for v in levels]
    if not kinds or not levels:
        raise ValueError("kinds and levels must be nonempty")
    for severity in levels:
        if severity < 0.0:
            raise ValueError(f"severities must be >= 0, got {severity}")

    os.makedirs(out_dir, exist_ok=True)
    records = []
    for content_id, img in sources:
        for kind in kinds:
            for li, severity in enumerate(levels):
                spec = spec_for_severity(kind, severity)
                distorted = apply_distortion(img, spec)
                name = f"content_{content_id}_{kind}_{li:02d}.pgm"
                write_pgm(distorted, os.path.join(out_dir, name))
                records.append(DatasetRecord(
                    image_path=name,
                    mos=score_map(severity),
                    distortion=kind,
                    content_id=content_id,
                    severity=severity,
                ))
    manifest = DatasetManifest(records=records, base_dir=out_dir)
    write_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest
