"""Deterministic preprocessing of grayscale signature scans.

Pipeline: Otsu threshold -> background cleanup -> content crop with a
2-pixel margin -> bilinear resize to the network input size -> scale to
[0,1].  Images are 8-bit grayscale, dark ink on light background; binary
PGM (P5) is the native format, PNG is accepted through Pillow.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ndgrad import Tensor, save_tensors, load_tensors


class DegenerateHistogramError(ValueError):
    """Raised when thresholding an image with a single intensity."""


class EmptyContentError(ValueError):
    """Raised when cropping an image with no foreground pixels."""


BACKGROUND = 255
CROP_MARGIN = 2


@dataclass
class PrepConfig:
    """Target network input size; both dims must be at least 8."""

    target_h: int = 128
    target_w: int = 200

    def __post_init__(self):
        if self.target_h < 8 or self.target_w < 8:
            raise ValueError("target dims must be >= 8")


# ---------------------------------------------------------------------------
# PGM / PNG I/O
# ---------------------------------------------------------------------------


def _read_pgm_token(f) -> bytes:
    """Next whitespace-delimited header token, skipping # comments."""
    token = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated PGM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval <= 255 into a uint8 [H,W] array."""
    with open(path, "rb") as f:
        magic = _read_pgm_token(f)
        if magic != b"P5":
            raise ValueError(f"{path}: expected binary PGM (P5), got {magic!r}")
        width = int(_read_pgm_token(f))
        height = int(_read_pgm_token(f))
        maxval = int(_read_pgm_token(f))
        if not (0 < maxval <= 255):
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        data = f.read(width * height)
        if len(data) != width * height:
            raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_image(path) -> np.ndarray:
    """Load a grayscale image; PGM natively, anything else via Pillow."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def _check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a nonempty 2-D image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 intensities, got {img.dtype}")
    return img


def otsu_threshold(img: np.ndarray) -> int:
    """Threshold maximizing between-class variance over the 256-bin histogram.

    Classes are {intensity <= t} and {intensity > t}; ties resolve to the
    lowest threshold.
    """
    img = _check_gray(img)
    counts = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(counts) < 2:
        raise DegenerateHistogramError("image has a single intensity level")
    total = counts.sum()
    levels = np.arange(256, dtype=np.float64)
    cum_count = np.cumsum(counts)
    cum_sum = np.cumsum(counts * levels)
    grand = cum_sum[-1]
    w0 = cum_count
    w1 = total - cum_count
    valid = (w0 > 0) & (w1 > 0)
    variance = np.zeros(256)
    mu0 = np.divide(cum_sum, w0, out=np.zeros(256), where=valid)
    mu1 = np.divide(grand - cum_sum, w1, out=np.zeros(256), where=valid)
    variance[valid] = (w0 * w1)[valid] * (mu0 - mu1)[valid] ** 2
    return int(np.argmax(variance))


def clean_background(img: np.ndarray, threshold: int) -> np.ndarray:
    """Push every pixel strictly above the threshold to pure background."""
    img = _check_gray(img)
    out = img.copy()
    out[img > threshold] = BACKGROUND
    return out


def crop_to_content(img: np.ndarray, margin: int = CROP_MARGIN) -> np.ndarray:
    """Tight bounding box of non-background pixels plus a clamped margin."""
    img = _check_gray(img)
    mask = img != BACKGROUND
    if not mask.any():
        raise EmptyContentError("image contains only background")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0 = max(0, rows[0] - margin)
    r1 = min(img.shape[0], rows[-1] + 1 + margin)
    c0 = max(0, cols[0] - margin)
    c1 = min(img.shape[1], cols[-1] + 1 + margin)
    return img[r0:r1, c0:c1]


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample to (out_h, out_w); align-corners-false convention.

    Source coordinates are (dst + 0.5) * in/out - 0.5, clamped to the valid
    range, so a same-size resize reproduces the input exactly.  Returns a
    float64 array (still on the 0..255 scale).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bottom = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def normalize01(img: np.ndarray) -> Tensor:
    """Map the 0..255 scale to [0,1] and add the channel axis."""
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return Tensor(arr.reshape((1,) + arr.shape))


def preprocess(raw: np.ndarray, cfg: PrepConfig) -> Tensor:
    """Full pipeline; output is a [1, target_h, target_w] tensor in [0,1]."""
    threshold = otsu_threshold(raw)
    cleaned = clean_background(raw, threshold)
    cropped = crop_to_content(cleaned)
    resized = bilinear_resize(cropped, cfg.target_h, cfg.target_w)
    return normalize01(resized)


# ---------------------------------------------------------------------------
# dataset manifest and preprocessed cache
# ---------------------------------------------------------------------------

LABELS = ("genuine", "forged")


@dataclass(frozen=True)
class ManifestRow:
    path: str        # image path relative to the manifest's directory
    identity: str
    label: str       # "genuine" or "forged"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "identity", "label"])
        for row in rows:
            writer.writerow([row.path, row.identity, row.label])


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "identity", "label"]:
            raise ValueError(f"{path}: bad manifest header {header}")
        return [ManifestRow(*row) for row in reader]


def build_cache(manifest_path, cfg: PrepConfig, cache_path) -> int:
    """Preprocess every manifest image into a float32 tensor container.

    Entries are keyed by the manifest path column.  Returns the image count.
    """
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    arrays = {}
    for row in rows:
        img = read_image(manifest_path.parent / row.path)
        arrays[row.path] = preprocess(img, cfg).data
    save_tensors(cache_path, arrays)
    return len(arrays)


def load_cache(cache_path, rows) -> dict[str, np.ndarray]:
    """Load cached tensors for the given manifest rows, keyed by path."""
    arrays = load_tensors(cache_path)
    missing = [r.path for r in rows if r.path not in arrays]
    if missing:
        raise ValueError(f"cache is missing {len(missing)} entries, "
                         f"first: {missing[0]!r}")
    return {r.path: arrays[r.path] for r in rows}
