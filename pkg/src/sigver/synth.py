"""Synthetic signature corpus generator.

Each identity owns a stroke skeleton: a few smoothed polylines sweeping
left to right like a scrawled name.  Genuine samples re-render the
skeleton with mild per-point jitter plus small global slant/scale/shift
variation; forgeries exaggerate the per-point displacement and add a
per-stroke rotation, imitating a forger who reproduces the overall shape
but not the fine dynamics.  Rendering is anti-aliased dark-on-light and
fully deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageprep import ManifestRow, write_manifest, write_pgm
from .rng import substream

# Global style variation applied to every sample (genuine and forged).
SLANT_RANGE = 0.15        # shear factor
SCALE_RANGE = 0.08        # relative size change
SHIFT_RANGE = 3.0         # pixels
THICKNESS_JITTER = 0.2    # relative
FORGERY_ROTATION = 10.0   # degrees, per stroke, forgeries only
INK_DEPTH = 215           # darkest stroke pixel = 255 - INK_DEPTH


@dataclass
class SynthConfig:
    """Corpus dimensions and the two distortion levels.

    jitter is the per-point displacement (pixels) of genuine re-renders;
    distortion is the forger's displacement and must exceed jitter.
    """

    identities: int = 40
    genuine_per_identity: int = 10
    forged_per_identity: int = 10
    raw_h: int = 96
    raw_w: int = 150
    jitter: float = 1.5
    distortion: float = 4.5

    def __post_init__(self):
        if self.identities < 1:
            raise ValueError("identities must be >= 1")
        if self.genuine_per_identity < 2:
            raise ValueError("need at least 2 genuine samples per identity")
        if self.forged_per_identity < 1:
            raise ValueError("need at least 1 forged sample per identity")
        if self.raw_h < 32 or self.raw_w < 32:
            raise ValueError("raw canvas must be at least 32x32")
        if self.jitter <= 0:
            raise ValueError("jitter must be > 0")
        if self.distortion <= self.jitter:
            raise ValueError("distortion must exceed jitter")


@dataclass
class IdentitySpec:
    """One writer's signature skeleton."""

    identity: str
    strokes: list            # list of [m,2] float arrays, (x, y) pixel coords
    thickness: float

    def __post_init__(self):
        if len(self.strokes) < 3:
            raise ValueError("a skeleton needs at least 3 strokes")
        if self.thickness <= 0:
            raise ValueError("thickness must be > 0")


def make_identity(identity: str, cfg: SynthConfig,
                  rng: np.random.Generator) -> IdentitySpec:
    """Random skeleton: 3-5 strokes sweeping left to right with wiggle."""
    h, w = cfg.raw_h, cfg.raw_w
    n_strokes = int(rng.integers(3, 6))
    strokes = []
    for _ in range(n_strokes):
        n_pts = int(rng.integers(4, 8))
        x0 = rng.uniform(0.08, 0.30) * w
        x1 = rng.uniform(0.70, 0.92) * w
        xs = np.sort(rng.uniform(x0, x1, size=n_pts))
        xs[0], xs[-1] = x0, x1
        mid = rng.uniform(0.35, 0.65) * h
        amp = rng.uniform(0.10, 0.28) * h
        ys = mid + rng.uniform(-amp, amp, size=n_pts)
        strokes.append(np.column_stack([xs, ys]))
    thickness = float(rng.uniform(1.4, 2.4))
    return IdentitySpec(identity, strokes, thickness)


def _chaikin(points: np.ndarray, rounds: int = 2) -> np.ndarray:
    """Corner-cutting smoothing; keeps endpoints."""
    for _ in range(rounds):
        if len(points) < 3:
            break
        new = [points[0]]
        for a, b in zip(points[:-1], points[1:]):
            new.append(0.75 * a + 0.25 * b)
            new.append(0.25 * a + 0.75 * b)
        new.append(points[-1])
        points = np.asarray(new)
    return points


def _stamp_segment(ink: np.ndarray, p0: np.ndarray, p1: np.ndarray,
                   thickness: float) -> None:
    """Max-blend anti-aliased coverage of one thick segment into the buffer."""
    h, w = ink.shape
    reach = thickness / 2.0 + 1.5
    x_lo = max(0, int(math.floor(min(p0[0], p1[0]) - reach)))
    x_hi = min(w - 1, int(math.ceil(max(p0[0], p1[0]) + reach)))
    y_lo = max(0, int(math.floor(min(p0[1], p1[1]) - reach)))
    y_hi = min(h - 1, int(math.ceil(max(p0[1], p1[1]) + reach)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float64)
    px = xs[None, :] - p0[0]
    py = ys[:, None] - p0[1]
    v = p1 - p0
    seg_len2 = float(v @ v)
    if seg_len2 < 1e-12:
        dist = np.hypot(px, py)
    else:
        t = np.clip((px * v[0] + py * v[1]) / seg_len2, 0.0, 1.0)
        dist = np.hypot(px - t * v[0], py - t * v[1])
    coverage = np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0)
    region = ink[y_lo:y_hi + 1, x_lo:x_hi + 1]
    np.maximum(region, coverage, out=region)


def _rotate(points: np.ndarray, degrees: float) -> np.ndarray:
    center = points.mean(axis=0)
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    rel = points - center
    return center + rel @ np.array([[c, -s], [s, c]]).T


def render_sample(spec: IdentitySpec, cfg: SynthConfig, forged: bool,
                  rng: np.random.Generator) -> np.ndarray:
    """Render one sample of the identity onto a fresh 255 canvas."""
    h, w = cfg.raw_h, cfg.raw_w
    sigma = cfg.distortion if forged else cfg.jitter
    slant = rng.uniform(-SLANT_RANGE, SLANT_RANGE)
    scale = 1.0 + rng.uniform(-SCALE_RANGE, SCALE_RANGE)
    shift = rng.uniform(-SHIFT_RANGE, SHIFT_RANGE, size=2)
    center = np.array([w / 2.0, h / 2.0])
    ink = np.zeros((h, w))
    for stroke in spec.strokes:
        pts = stroke + rng.normal(0.0, sigma, size=stroke.shape)
        if forged:
            pts = _rotate(pts, rng.uniform(-FORGERY_ROTATION, FORGERY_ROTATION))
        rel = (pts - center) * scale
        rel[:, 0] += slant * rel[:, 1]
        pts = center + rel + shift
        pts[:, 0] = np.clip(pts[:, 0], 2.0, w - 3.0)
        pts[:, 1] = np.clip(pts[:, 1], 2.0, h - 3.0)
        pts = _chaikin(pts)
        thickness = spec.thickness * (1.0 + rng.uniform(-THICKNESS_JITTER,
                                                        THICKNESS_JITTER))
        for a, b in zip(pts[:-1], pts[1:]):
            _stamp_segment(ink, a, b, thickness)
    img = np.rint(255.0 - ink * INK_DEPTH)
    return img.astype(np.uint8)


def generate_dataset(cfg: SynthConfig, out_dir, seed: int) -> list[ManifestRow]:
    """Write the full corpus and its manifest; returns the manifest rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(cfg.identities - 1)))
    rows: list[ManifestRow] = []
    for idx in range(cfg.identities):
        identity = f"id{idx:0{width}d}"
        spec = make_identity(identity, cfg, substream(seed, "synth", idx, 0))
        for j in range(cfg.genuine_per_identity):
            img = render_sample(spec, cfg, forged=False,
                                rng=substream(seed, "synth", idx, 1, j))
            name = f"{identity}_g{j:02d}.pgm"
            write_pgm(out_dir / name, img)
            rows.append(ManifestRow(name, identity, "genuine"))
        for j in range(cfg.forged_per_identity):
            img = render_sample(spec, cfg, forged=True,
                                rng=substream(seed, "synth", idx, 2, j))
            name = f"{identity}_f{j:02d}.pgm"
            write_pgm(out_dir / name, img)
            rows.append(ManifestRow(name, identity, "forged"))
    write_manifest(out_dir / "manifest.csv", rows)
    return rows


def split_writers(rows, ratios, rng: np.random.Generator):
    """Partition identities into train/val/test manifests.

    ratios is a (train, val, test) triple summing to 1.  Validation and
    test sizes are floors of their fractions; training takes the rest.
    Every identity lands in exactly one split.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
        raise ValueError(f"ratios must be three positive values summing to 1, "
                         f"got {ratios}")
    identities = sorted({row.identity for row in rows})
    n = len(identities)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    if n_train < 1 or n_val < 1 or n_test < 1:
        raise ValueError(f"too few identities ({n}) for ratios {ratios}")
    order = [identities[i] for i in rng.permutation(n)]
    train_ids = set(order[:n_train])
    val_ids = set(order[n_train:n_train + n_val])
    test_ids = set(order[n_train + n_val:])
    train = [r for r in rows if r.identity in train_ids]
    val = [r for r in rows if r.identity in val_ids]
    test = [r for r in rows if r.identity in test_ids]
    return train, val, test
