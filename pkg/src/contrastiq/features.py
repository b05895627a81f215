"""The three-number feature vector: two high-order deviation statistics and entropy.

The quality signal is the Minkowski deviation of order rho, computed on the
power-law transformed image and on its complement, plus the Shannon entropy
of the 256-bin intensity histogram.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .imgio import GrayImage, load_gray, quantize_levels
from .pixelops import complement, downsample, downsample_factor, fast_pow, power_law

DEFAULT_RHO = 64
DEFAULT_Q = 8


@dataclass(frozen=True)
class MdmParams:
    """Deviation order rho and power-law exponent q (defaults 64 and 8)."""

    rho: int = DEFAULT_RHO
    q: int = DEFAULT_Q

    def __post_init__(self):
        if self.rho < 1:
            raise ValueError(f"rho must be >= 1, got {self.rho}")
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")


@dataclass(frozen=True)
class FeatureVector:
    """Per-image features: deviation of the image, of its complement, and entropy."""

    mdm_d: float
    mdm_dc: float
    entropy_bits: float

    def __post_init__(self):
        values = (self.mdm_d, self.mdm_dc, self.entropy_bits)
        if not all(np.isfinite(v) for v in values):
            raise ValueError(f"non-finite feature value in {values}")
        if not (0.0 <= self.mdm_d <= 1.0 and 0.0 <= self.mdm_dc <= 1.0):
            raise ValueError(f"deviation features outside [0, 1]: {values}")
        if not (0.0 <= self.entropy_bits <= 8.0):
            raise ValueError(f"entropy outside [0, 8]: {self.entropy_bits}")

    def as_array(self) -> np.ndarray:
        return np.array([self.mdm_d, self.mdm_dc, self.entropy_bits], dtype=np.float64)


def minkowski_deviation(img: GrayImage, rho: int) -> float:
    """Resolution-normalized deviation of order rho around the mean.

    ((1/N) * sum |x_i - mean|**rho) ** (1/rho).  Order 1 is the mean absolute
    deviation, order 2 the population standard deviation.  The largest
    deviation is factored out before raising to the rho-th power, so sums of
    ~1e-300 terms never arise at high orders.
    """
    if rho < 1:
        raise ValueError(f"rho must be >= 1, got {rho}")
    x = img.data.ravel()
    dev = np.abs(x - x.mean())
    d_max = dev.max()
    if d_max == 0.0:
        return 0.0
    scaled = dev / d_max
    return float(d_max * fast_pow(scaled, rho).mean() ** (1.0 / rho))


def mdm_feature(img: GrayImage, params: MdmParams) -> float:
    """Fourth root of the order-rho deviation of the power-law transformed image."""
    return minkowski_deviation(power_law(img, params.q), params.rho) ** 0.25


def entropy(img: GrayImage) -> float:
    """Shannon entropy (bits) of the 256-level intensity histogram.

    Pixels quantize to round(x*255); empty levels contribute nothing
    (0*log 0 = 0 convention).
    """
    counts = np.bincount(quantize_levels(img).ravel(), minlength=256)
    probs = counts[counts > 0] / img.pixel_count
    return float(-(probs * np.log2(probs)).sum())


def extract(img: GrayImage, params: MdmParams = MdmParams(), use_downsample: bool = True) -> FeatureVector:
    """Compute the full feature vector for one image.

    With use_downsample the image is first box-averaged by
    max(2, round(min(h, w)/512)); all three features then see the same
    reduced pixels.
    """
    if use_downsample:
        img = downsample(img, downsample_factor(img.height, img.width))
    return FeatureVector(
        mdm_d=mdm_feature(img, params),
        mdm_dc=mdm_feature(complement(img), params),
        entropy_bits=entropy(img),
    )


_FEATURE_COLUMNS = ["path", "mdm_d", "mdm_dc", "entropy", "mos"]
_FEATURE_COLUMNS_FULL = _FEATURE_COLUMNS + ["distortion", "content_id"]


def _extract_one(args) -> np.ndarray:
    path, params, use_downsample = args
    return extract(load_gray(path), params, use_downsample=use_downsample).as_array()


def extract_batch(paths, params: MdmParams = MdmParams(), use_downsample: bool = True,
                  jobs: int = 1) -> np.ndarray:
    """Feature matrix of shape (len(paths), 3), row order matching paths.

    jobs > 1 fans the per-image work out to worker processes; results come
    back in input order either way.
    """
    payloads = [(str(p), params, use_downsample) for p in paths]
    if jobs <= 1:
        rows = [_extract_one(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_extract_one, payloads))
    if not rows:
        return np.zeros((0, 3), dtype=np.float64)
    return np.vstack(rows)


def write_feature_csv(path: str, rows: list[dict]) -> None:
    """Write extracted features with 17-significant-digit reals.

    Each row dict carries path/features/mos plus optional distortion and
    content_id; the wider header is used when any row has them.
    """
    full = any("content_id" in r for r in rows)
    columns = _FEATURE_COLUMNS_FULL if full else _FEATURE_COLUMNS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            out = [r["path"]]
            out += [format(r[k], ".17g") for k in ("mdm_d", "mdm_dc", "entropy")]
            out.append(format(r["mos"], ".17g"))
            if full:
                out += [r.get("distortion", ""), r.get("content_id", "")]
            writer.writerow(out)


def read_feature_csv(path: str) -> list[dict]:
    """Read a feature CSV back into row dicts (floats parsed, labels kept)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty feature file")
        header = [h.strip() for h in header]
        if header not in (_FEATURE_COLUMNS, _FEATURE_COLUMNS_FULL):
            raise ValueError(f"{path}: unexpected feature header {header}")
        rows = []
        for row in reader:
            if not row:
                continue
            rec = {"path": row[0]}
            rec["mdm_d"], rec["mdm_dc"], rec["entropy"] = (float(v) for v in row[1:4])
            rec["mos"] = float(row[4])
            if len(header) == 7:
                rec["distortion"], rec["content_id"] = row[5], row[6]
            rows.append(rec)
    if not rows:
        raise ValueError(f"{path}: no feature rows")
    return rows
