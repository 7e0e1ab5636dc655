"""Corner-error evaluation and reporting.

Each test pair contributes one average-corner-error number: the mean
distance (Euclidean pixels, or squared pixels) between the four predicted
and ground-truth corner positions. A pair whose prediction cannot be
turned into corners at all (the homography head can emit a transform that
projects a corner through a near-zero denominator) is assigned a large
failure sentinel so failures dominate the distribution tail.

Summaries report mean/std/min/quartiles/max with type-7 (linearly
interpolated) quantiles, plus the count of IQR-rule outliers: values
outside [Q1 - 1.5*IQR, Q3 + 1.5*IQR].
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .datagen import AlignmentPair
from .errors import DegenerateProjection, EmptyInput
from .geometry import CornerSet
from .network import AlignmentNet, NetworkOutput

FAILURE_SENTINEL = 10000.0

METRIC_KINDS = ("euclidean", "squared")


@dataclass(frozen=True)
class AceSummary:
    mean: float
    std: float
    min: float
    q1: float
    median: float
    q3: float
    max: float
    outlier_count: int
    n_pairs: int
    metric_kind: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def corner_distance(pred_corners, gt_corners, metric_kind: str = "euclidean") -> float:
    """Mean per-corner distance between two (4, 2) corner arrays."""
    if metric_kind not in METRIC_KINDS:
        raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")
    pred = np.asarray(pred_corners, dtype=np.float64).reshape(4, 2)
    gt = gt_corners.corners if isinstance(gt_corners, CornerSet) else gt_corners
    gt = np.asarray(gt, dtype=np.float64).reshape(4, 2)
    d2 = np.sum((pred - gt) ** 2, axis=1)
    if metric_kind == "squared":
        return float(np.mean(d2))
    return float(np.mean(np.sqrt(d2)))


def pair_ace(
    pred: NetworkOutput,
    gt_corners,
    metric_kind: str = "euclidean",
    sentinel: float = FAILURE_SENTINEL,
) -> float:
    """Corner error for one prediction; substitutes ``sentinel`` when the
    prediction cannot produce corners (degenerate projection)."""
    try:
        pred_pts = pred.corner_array()
    except DegenerateProjection:
        return float(sentinel)
    return corner_distance(pred_pts, gt_corners, metric_kind)


def summarize(errors, metric_kind: str = "euclidean") -> AceSummary:
    """Order statistics plus the IQR outlier count for a list of errors."""
    errors = np.asarray(list(errors), dtype=np.float64)
    if errors.size == 0:
        raise EmptyInput("cannot summarize an empty error list")
    q1, med, q3 = np.percentile(errors, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo = q1 - 1.5 * iqr
    hi = q3 + 1.5 * iqr
    return AceSummary(
        mean=float(errors.mean()),
        std=float(errors.std()),
        min=float(errors.min()),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        max=float(errors.max()),
        outlier_count=int(np.sum((errors < lo) | (errors > hi))),
        n_pairs=int(errors.size),
        metric_kind=metric_kind,
    )


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    ace: float
    failed: bool


def _record(pair: AlignmentPair, out: NetworkOutput, metric_kind: str, sentinel: float):
    try:
        pred_pts = out.corner_array()
        return PairRecord(
            pair.pair_id, corner_distance(pred_pts, pair.gt_corners, metric_kind), False
        )
    except DegenerateProjection:
        return PairRecord(pair.pair_id, float(sentinel), True)


def evaluate_model(
    model: AlignmentNet,
    pairs: list[AlignmentPair],
    metric_kind: str = "euclidean",
    sentinel: float = FAILURE_SENTINEL,
    batch_size: int = 16,
) -> tuple[AceSummary, list[PairRecord]]:
    """Eval-mode forward over all pairs, one error per pair, then summarize."""
    if not pairs:
        raise EmptyInput("no pairs to evaluate")
    records = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        rgb = np.stack([p.target for p in chunk])
        ir = np.stack([p.source for p in chunk])
        raw = model.forward(rgb, ir, training=False)
        for pair, out in zip(chunk, model.outputs(raw)):
            records.append(_record(pair, out, metric_kind, sentinel))
    summary = summarize([r.ace for r in records], metric_kind)
    return summary, records


def evaluate_ground_truth(
    pairs: list[AlignmentPair],
    metric_kind: str = "euclidean",
    sentinel: float = FAILURE_SENTINEL,
    use_homography: bool = False,
) -> tuple[AceSummary, list[PairRecord]]:
    """Inject the stored ground truth as the prediction (pipeline sanity
    check; every summary field must come out zero on a valid dataset).

    ``use_homography`` routes through the stored transform instead of the
    stored corner positions, which additionally exercises corner warping.
    """
    if not pairs:
        raise EmptyInput("no pairs to evaluate")
    records = []
    for p in pairs:
        if use_homography:
            out = NetworkOutput(
                raw=p.gt_homography.params, head="homography", source_size=p.source.shape[0]
            )
        else:
            out = NetworkOutput(
                raw=p.gt_corners.corners.reshape(8), head="corners",
                source_size=p.source.shape[0],
            )
        records.append(_record(p, out, metric_kind, sentinel))
    summary = summarize([r.ace for r in records], metric_kind)
    return summary, records


def write_pairs_csv(path, records: list[PairRecord]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "ace", "failed"])
        for r in records:
            writer.writerow([r.pair_id, repr(r.ace), str(r.failed).lower()])


def read_pairs_csv(path) -> list[PairRecord]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            PairRecord(row["pair_id"], float(row["ace"]), row["failed"] == "true")
            for row in reader
        ]


def write_summary_json(path, summary: AceSummary) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(summary.to_json() + "\n")


# --- box plot -----------------------------------------------------------

_SVG_W = 160  # per-group horizontal budget, px


def boxplot_svg(path, groups: dict) -> None:
    """Write a box-and-whisker SVG for named error lists.

    Box spans Q1..Q3 with a median line; whiskers sit at the IQR fences
    Q1 - 1.5*IQR and Q3 + 1.5*IQR; points outside the fences are drawn
    individually as diamonds.
    """
    if not groups:
        raise EmptyInput("no groups to plot")
    names = list(groups)
    stats = []
    vmin, vmax = np.inf, -np.inf
    for name in names:
        vals = np.asarray(list(groups[name]), dtype=np.float64)
        if vals.size == 0:
            raise EmptyInput(f"group {name!r} is empty")
        q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        outliers = vals[(vals < lo) | (vals > hi)]
        stats.append((q1, med, q3, lo, hi, outliers))
        vmin = min(vmin, lo, vals.min())
        vmax = max(vmax, hi, vals.max())
    if vmax <= vmin:
        vmax = vmin + 1.0

    width = 80 + _SVG_W * len(names)
    height = 420
    top, bottom = 30, 370

    def ypix(v):
        return bottom - (v - vmin) / (vmax - vmin) * (bottom - top)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<style>text{font-family:sans-serif;font-size:12px}</style>',
        f'<line x1="60" y1="{top}" x2="60" y2="{bottom}" stroke="black"/>',
    ]
    for tick in np.linspace(vmin, vmax, 6):
        y = ypix(tick)
        parts.append(f'<line x1="55" y1="{y:.1f}" x2="60" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="50" y="{y + 4:.1f}" text-anchor="end">{tick:.3g}</text>')
    for i, (name, (q1, med, q3, lo, hi, outliers)) in enumerate(zip(names, stats)):
        cx = 80 + _SVG_W * i + _SVG_W // 2
        half = 32
        parts += [
            # whiskers at the fences
            f'<line x1="{cx}" y1="{ypix(lo):.1f}" x2="{cx}" y2="{ypix(q1):.1f}" stroke="black"/>',
            f'<line x1="{cx}" y1="{ypix(q3):.1f}" x2="{cx}" y2="{ypix(hi):.1f}" stroke="black"/>',
            f'<line x1="{cx - 16}" y1="{ypix(lo):.1f}" x2="{cx + 16}" y2="{ypix(lo):.1f}" stroke="black"/>',
            f'<line x1="{cx - 16}" y1="{ypix(hi):.1f}" x2="{cx + 16}" y2="{ypix(hi):.1f}" stroke="black"/>',
            f'<rect x="{cx - half}" y="{ypix(q3):.1f}" width="{2 * half}" '
            f'height="{max(ypix(q1) - ypix(q3), 0.5):.1f}" fill="#9ecae1" stroke="black"/>',
            f'<line x1="{cx - half}" y1="{ypix(med):.1f}" x2="{cx + half}" y2="{ypix(med):.1f}" '
            'stroke="black" stroke-width="2"/>',
            f'<text x="{cx}" y="{bottom + 20}" text-anchor="middle">{name}</text>',
        ]
        for v in outliers:
            y = ypix(v)
            parts.append(
                f'<path d="M {cx} {y - 5:.1f} L {cx + 5} {y:.1f} L {cx} {y + 5:.1f} '
                f'L {cx - 5} {y:.1f} Z" fill="none" stroke="black"/>'
            )
    parts.append("</svg>")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
