"""Synthetic alignment-pair generation from registered image pairs.

Given a directory of co-registered (rgb, ir) image pairs, each pair yields
k training tuples: four ground-truth corner locations are drawn inside the
target frame, the perspective transform that maps them onto the fixed
corners of an n x n patch is solved, and the ir image is warped through it
to produce the unregistered source patch. The transform's inverse (source
frame -> target frame) and the drawn corners are stored as ground truth.

Input files are discovered as ``<stem>_rgb.png`` / ``<stem>_ir.png``. The
emitted manifest is line-oriented JSON, one object per pair:

    {"pair_id": ..., "target_path": ..., "source_path": ...,
     "h": [9 row-major reals], "corners": [[x, y] * 4],  # TL,TR,BR,BL
     "split": "train" | "test"}

The train/test split is disjoint by input image, never by pair, so no
scene leaks across the boundary.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, sampler
from .errors import ConfigError, FormatError, SamplingExhausted
from .geometry import CornerSet, Homography, fixed_corners
from .images import load_image, save_image

MANIFEST_NAME = "manifest.jsonl"
_MAX_REJECTS = 1000

# seed-sequence domain keys so the split draw and per-pair draws never collide
_SPLIT_KEY = 0
_PAIR_KEY = 1


@dataclass
class DatagenConfig:
    target_size: int = 192
    source_size: int = 128
    jitter_radius: float = 32.0
    pairs_per_image: int = 10
    rng_seed: int = 0
    test_fraction: float = 0.25

    def validate(self) -> None:
        if self.target_size < 2 or self.source_size < 2:
            raise ConfigError("target_size/source_size must be >= 2")
        if self.source_size > self.target_size:
            raise ConfigError("source_size cannot exceed target_size")
        if self.jitter_radius < 0:
            raise ConfigError("jitter_radius must be >= 0")
        if self.pairs_per_image < 1:
            raise ConfigError("pairs_per_image must be >= 1")
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ConfigError("test_fraction must be in [0, 1]")


@dataclass
class AlignmentPair:
    """One training/evaluation tuple.

    ``gt_homography`` maps source-frame coordinates onto the target frame;
    applying it to the fixed source corners reproduces ``gt_corners``.
    """

    pair_id: str
    target: np.ndarray       # (T, T, 3) in [0, 1]
    source: np.ndarray       # (n, n, 3) in [0, 1]
    gt_homography: Homography
    gt_corners: CornerSet    # target frame
    split: str = "train"


def _centered_box(cfg: DatagenConfig) -> np.ndarray:
    off = (cfg.target_size - cfg.source_size) / 2.0
    m = cfg.source_size - 1.0
    return np.array(
        [[off, off], [off + m, off], [off + m, off + m], [off, off + m]], dtype=np.float64
    )


def _is_convex(pts: np.ndarray) -> bool:
    cross = np.empty(4)
    for i in range(4):
        a, b, c = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        cross[i] = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return bool(np.all(cross > 0) or np.all(cross < 0))


def sample_gt_corners(cfg: DatagenConfig, rng: np.random.Generator) -> CornerSet:
    """Draw ground-truth corners: centered box plus per-corner uniform jitter.

    Rejects draws whose quadrilateral is non-convex, too small, or sticks
    out of the target frame; raises SamplingExhausted after 1000 rejects
    (a sign the jitter radius is infeasible for the frame).
    """
    box = _centered_box(cfg)
    hi = cfg.target_size - 1.0
    for _ in range(_MAX_REJECTS):
        pts = box + rng.uniform(-cfg.jitter_radius, cfg.jitter_radius, size=(4, 2))
        if not (np.all(pts >= 0.0) and np.all(pts <= hi)):
            continue
        if not _is_convex(pts):
            continue
        if abs(geometry.quad_area(pts)) <= geometry.AREA_EPS:
            continue
        return CornerSet(pts, frame="target")
    raise SamplingExhausted(
        f"no feasible corner set after {_MAX_REJECTS} draws (jitter_radius={cfg.jitter_radius})"
    )


def make_pair(
    registered_rgb: np.ndarray,
    registered_ir: np.ndarray,
    cfg: DatagenConfig,
    rng: np.random.Generator,
    pair_id: str = "pair",
) -> AlignmentPair:
    """Cut one source patch out of a registered pair and record its truth."""
    t = cfg.target_size
    if registered_rgb.shape[:2] != (t, t) or registered_ir.shape[:2] != (t, t):
        raise FormatError(
            f"registered images must be {t}x{t}, got {registered_rgb.shape} / {registered_ir.shape}"
        )
    gt_corners = sample_gt_corners(cfg, rng)
    # target-frame quad -> fixed source square; its inverse is the ground truth
    to_fixed = geometry.from_four_points(gt_corners, fixed_corners(cfg.source_size))
    source = sampler.warp_image(registered_ir, to_fixed, (cfg.source_size, cfg.source_size))
    return AlignmentPair(
        pair_id=pair_id,
        target=registered_rgb,
        source=source,
        gt_homography=geometry.inverse(to_fixed),
        gt_corners=gt_corners,
    )


def _discover_inputs(image_pair_dir: Path) -> list[tuple[str, Path, Path]]:
    stems = []
    for rgb_path in sorted(image_pair_dir.glob("*_rgb.png")):
        stem = rgb_path.name[: -len("_rgb.png")]
        ir_path = image_pair_dir / f"{stem}_ir.png"
        if ir_path.exists():
            stems.append((stem, rgb_path, ir_path))
    return stems


def _load_registered(path: Path, size: int) -> np.ndarray:
    img = load_image(path, channels=3)
    h, w = img.shape[:2]
    if h < size or w < size:
        raise FormatError(f"{path}: image {h}x{w} smaller than target size {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top : top + size, left : left + size]


def _assign_splits(stems: list[str], cfg: DatagenConfig) -> dict[str, str]:
    rng = np.random.default_rng((cfg.rng_seed, _SPLIT_KEY))
    order = list(stems)
    rng.shuffle(order)
    n_test = int(round(cfg.test_fraction * len(order)))
    if cfg.test_fraction > 0.0 and n_test == 0:
        n_test = 1
    if cfg.test_fraction < 1.0 and n_test == len(order):
        n_test = len(order) - 1
    test = set(order[:n_test])
    return {s: ("test" if s in test else "train") for s in stems}


def build_dataset(image_pair_dir, out_dir, cfg: DatagenConfig) -> Path:
    """Generate pairs for every registered input and write a manifest.

    Deterministic for a fixed seed: pair randomness is keyed by
    (seed, image index, repeat index), so re-running reproduces the
    manifest byte for byte. Returns the manifest path.
    """
    cfg.validate()
    image_pair_dir = Path(image_pair_dir)
    out_dir = Path(out_dir)
    if not image_pair_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {image_pair_dir}")
    inputs = _discover_inputs(image_pair_dir)
    if not inputs:
        raise FormatError(f"no <stem>_rgb.png / <stem>_ir.png pairs found in {image_pair_dir}")

    os.makedirs(out_dir, exist_ok=True)
    splits = _assign_splits([s for s, _, _ in inputs], cfg)

    rows = []
    for img_idx, (stem, rgb_path, ir_path) in enumerate(inputs):
        rgb = _load_registered(rgb_path, cfg.target_size)
        ir = _load_registered(ir_path, cfg.target_size)
        target_rel = f"{stem}_target.png"
        save_image(out_dir / target_rel, rgb)
        for j in range(cfg.pairs_per_image):
            rng = np.random.default_rng((cfg.rng_seed, _PAIR_KEY, img_idx, j))
            pair_id = f"{stem}_{j:03d}"
            pair = make_pair(rgb, ir, cfg, rng, pair_id=pair_id)
            source_rel = f"{pair_id}_source.png"
            save_image(out_dir / source_rel, pair.source)
            rows.append(
                {
                    "pair_id": pair_id,
                    "target_path": target_rel,
                    "source_path": source_rel,
                    "h": [float(v) for v in pair.gt_homography.p],
                    "corners": [[float(x), float(y)] for x, y in pair.gt_corners.corners],
                    "split": splits[stem],
                }
            )

    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return manifest_path


def load_manifest(manifest_path, split: str | None = None) -> list[AlignmentPair]:
    """Reload emitted pairs; optionally filter to one split."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    pairs = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{manifest_path}:{line_no}: bad JSON: {exc}") from exc
            if split is not None and row["split"] != split:
                continue
            pairs.append(
                AlignmentPair(
                    pair_id=row["pair_id"],
                    target=load_image(base / row["target_path"], channels=3),
                    source=load_image(base / row["source_path"], channels=3),
                    gt_homography=Homography(np.array(row["h"])),
                    gt_corners=CornerSet(np.array(row["corners"]), frame="target"),
                    split=row["split"],
                )
            )
    return pairs

