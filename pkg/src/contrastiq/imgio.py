"""Image decoding and dataset manifest parsing.

Images are loaded as normalized grayscale (float64 in [0, 1]).  Supported
formats are PGM (P2/P5, maxval 255) and PNG (8-bit gray or 8-bit RGB).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np


class ImageError(Exception):
    """Base class for image decoding failures."""


class UnsupportedFormatError(ImageError):
    """File is not one of the supported image formats."""


class CorruptFileError(ImageError):
    """File matches a supported format but cannot be fully decoded."""


class ZeroDimensionError(ImageError):
    """Image header declares a zero width or height."""


class ManifestError(Exception):
    """Base class for dataset manifest parsing failures."""


class MissingColumnError(ManifestError):
    """Manifest header does not match the documented column layout."""


class BadNumberError(ManifestError):
    """A numeric manifest field failed to parse (1-based data row in .row)."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmptyManifestError(ManifestError):
    """Manifest contains a header but no data rows."""


# BT.601 luma weights used to collapse RGB inputs to a single channel.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114

_DISTORTION_TAGS = ("gamma", "meanshift")


@dataclass
class GrayImage:
    """Grayscale image: 2-D row-major array of intensities in [0, 1].

    The pixel array is frozen after construction so images can be shared
    freely across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D pixel array, got ndim={arr.ndim}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ZeroDimensionError(f"degenerate image shape {arr.shape}")
        lo, hi = float(arr.min()), float(arr.max())
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={lo}, max={hi}")
        arr.flags.writeable = False
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def pixel_count(self) -> int:
        return self.data.size


@dataclass
class DatasetRecord:
    """One manifest row: an image path with its subjective score and labels."""

    image_path: str
    mos: float
    distortion: str  # "gamma", "meanshift" or "other:<tag>"
    content_id: str
    severity: float | None = None

    def __post_init__(self):
        if not self.content_id:
            raise ManifestError("content_id must be nonempty")
        if self.distortion not in _DISTORTION_TAGS and not self.distortion.startswith("other:"):
            raise ManifestError(f"unknown distortion label {self.distortion!r}")


@dataclass
class DatasetManifest:
    """Ordered collection of dataset records plus the directory they resolve against."""

    records: list[DatasetRecord] = field(default_factory=list)
    base_dir: str = "."

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, record: DatasetRecord) -> str:
        """Absolute-ish path for a record (relative paths resolve against base_dir)."""
        if os.path.isabs(record.image_path):
            return record.image_path
        return os.path.join(self.base_dir, record.image_path)

    def content_ids(self) -> list[str]:
        """Distinct content ids in sorted order."""
        return sorted({r.content_id for r in self.records})


def load_gray(path: str) -> GrayImage:
    """Load an image file as normalized grayscale.

    8-bit levels map to L/255; RGB collapses through BT.601 luma before
    normalization.  Raises UnsupportedFormatError, CorruptFileError or
    ZeroDimensionError.
    """
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] in (b"P2", b"P5"):
        return _load_pgm(path)
    if head == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    raise UnsupportedFormatError(f"{path}: not a PGM (P2/P5) or PNG file")


def _load_pgm(path: str) -> GrayImage:
    with open(path, "rb") as fh:
        blob = fh.read()

    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        # skip whitespace and '#' comment lines between header tokens
        while pos < len(blob):
            c = blob[pos : pos + 1]
            if c.isspace():
                pos += 1
            elif c == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFileError(f"{path}: truncated PGM header")
        return blob[start:pos]

    magic = next_token()
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise CorruptFileError(f"{path}: malformed PGM header") from exc

    if width == 0 or height == 0:
        raise ZeroDimensionError(f"{path}: zero image dimension {width}x{height}")
    if width < 0 or height < 0:
        raise CorruptFileError(f"{path}: negative image dimension")
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: only maxval 255 PGM is supported, got {maxval}")

    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte separates header from raster
        raster = blob[pos : pos + n]
        if len(raster) < n:
            raise CorruptFileError(f"{path}: raster has {len(raster)} of {n} expected bytes")
        levels = np.frombuffer(raster, dtype=np.uint8, count=n)
    else:  # P2
        try:
            levels = np.array([int(next_token()) for _ in range(n)], dtype=np.int64)
        except (ValueError, CorruptFileError) as exc:
            raise CorruptFileError(f"{path}: truncated or malformed P2 raster") from exc
        if levels.min() < 0 or levels.max() > 255:
            raise CorruptFileError(f"{path}: P2 sample outside [0, 255]")

    data = levels.astype(np.float64).reshape(height, width) / 255.0
    return GrayImage(data)


def _load_png(path: str) -> GrayImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.float64)
                data = arr / 255.0
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.float64)
                luma = _LUMA_R * arr[..., 0] + _LUMA_G * arr[..., 1] + _LUMA_B * arr[..., 2]
                data = luma / 255.0
            elif mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
                # explicit rejection beats silently truncating 16-bit data
                raise UnsupportedFormatError(f"{path}: 16-bit PNG is not supported")
            else:
                raise UnsupportedFormatError(f"{path}: unsupported PNG mode {mode!r}")
    except UnidentifiedImageError as exc:
        raise CorruptFileError(f"{path}: undecodable PNG") from exc
    except (OSError, SyntaxError) as exc:
        raise CorruptFileError(f"{path}: truncated or corrupt PNG") from exc

    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise ZeroDimensionError(f"{path}: zero image dimension")
    return GrayImage(np.clip(data, 0.0, 1.0))


def quantize_levels(img: GrayImage) -> np.ndarray:
    """8-bit levels round(x*255), half away from zero, as a uint8 array."""
    return np.floor(img.data * 255.0 + 0.5).astype(np.uint8)


def write_pgm(img: GrayImage, path: str, binary: bool = True) -> None:
    """Write an image as a maxval-255 PGM (P5 by default, P2 when binary=False)."""
    levels = quantize_levels(img)
    header = f"P5\n{img.width} {img.height}\n255\n" if binary else f"P2\n{img.width} {img.height}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(levels.tobytes())
        else:
            for row in levels:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode("ascii"))


_MANIFEST_COLUMNS = ["path", "mos", "distortion", "content_id"]


def parse_manifest(path: str) -> DatasetManifest:
    """Parse a dataset manifest CSV.

    Expected header: path,mos,distortion,content_id[,severity].  Relative
    image paths resolve against the manifest's directory.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyManifestError(f"{path}: empty file") from None

        header = [h.strip() for h in header]
        if header != _MANIFEST_COLUMNS and header != _MANIFEST_COLUMNS + ["severity"]:
            missing = [c for c in _MANIFEST_COLUMNS if c not in header]
            if missing:
                raise MissingColumnError(f"{path}: header is missing column(s) {missing}")
            raise MissingColumnError(
                f"{path}: header must be path,mos,distortion,content_id[,severity], got {header}"
            )
        has_severity = len(header) == 5

        records = []
        for row_index, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ManifestError(f"{path}: row {row_index} has {len(row)} fields, expected {len(header)}")
            rec_path, mos_s, distortion, content_id = (cell.strip() for cell in row[:4])
            try:
                mos = float(mos_s)
            except ValueError:
                raise BadNumberError(row_index, f"mos value {mos_s!r} is not a number") from None
            if not np.isfinite(mos):
                raise BadNumberError(row_index, f"mos value {mos_s!r} is not finite")
            severity = None
            if has_severity and row[4].strip():
                try:
                    severity = float(row[4])
                except ValueError:
                    raise BadNumberError(row_index, f"severity value {row[4]!r} is not a number") from None
            try:
                records.append(
                    DatasetRecord(
                        image_path=rec_path,
                        mos=mos,
                        distortion=distortion,
                        content_id=content_id,
                        severity=severity,
                    )
                )
            except ManifestError as exc:
                raise ManifestError(f"{path}: row {row_index}: {exc}") from None

    if not records:
        raise EmptyManifestError(f"{path}: no data rows")
    return DatasetManifest(records=records, base_dir=os.path.dirname(os.path.abspath(path)))


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write a manifest CSV with the documented header (severity column included)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_COLUMNS + ["severity"])
        for rec in manifest.records:
            sev = "" if rec.severity is None else format(rec.severity, ".17g")
            writer.writerow([rec.image_path, format(rec.mos, ".17g"), rec.distortion, rec.content_id, sev])
