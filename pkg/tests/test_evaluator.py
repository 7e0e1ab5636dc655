import numpy as np
import pytest

from modalign import geometry as G
from modalign.datagen import AlignmentPair
from modalign.errors import EmptyInput
from modalign.evaluator import (
    FAILURE_SENTINEL,
    AceSummary,
    PairRecord,
    boxplot_svg,
    corner_distance,
    evaluate_ground_truth,
    pair_ace,
    read_pairs_csv,
    summarize,
    write_pairs_csv,
)
from modalign.network import NetworkOutput

import oracles


def test_corner_distance_exact_zero_and_345():
    base = G.fixed_corners(128).corners
    assert corner_distance(base, base) == 0.0
    shifted = base + [3.0, 4.0]
    assert corner_distance(shifted, base, "euclidean") == pytest.approx(5.0)
    assert corner_distance(shifted, base, "squared") == pytest.approx(25.0)


def test_corner_distance_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.uniform(0, 191, (4, 2))
        b = rng.uniform(0, 191, (4, 2))
        expect_e = np.mean([np.linalg.norm(a[i] - b[i]) for i in range(4)])
        expect_s = np.mean([np.linalg.norm(a[i] - b[i]) ** 2 for i in range(4)])
        assert corner_distance(a, b, "euclidean") == pytest.approx(expect_e, rel=1e-12)
        assert corner_distance(a, b, "squared") == pytest.approx(expect_s, rel=1e-12)


def test_pair_ace_sentinel_on_degenerate_prediction():
    bad = NetworkOutput(
        raw=np.array([1, 0, 0, 0, 1, 0, -1.0 / 127.0, 0]), head="homography", source_size=128
    )
    gt = G.fixed_corners(128).corners
    assert pair_ace(bad, gt) == FAILURE_SENTINEL
    assert pair_ace(bad, gt, sentinel=123.0) == 123.0


def test_summarize_basic_five_numbers():
    s = summarize([1, 2, 3, 4, 5])
    assert (s.median, s.q1, s.q3) == (3.0, 2.0, 4.0)
    assert s.outlier_count == 0
    assert (s.min, s.max, s.mean) == (1.0, 5.0, 3.0)
    assert s.n_pairs == 5


def test_summarize_iqr_zero_flags_extreme():
    s = summarize([0, 0, 0, 0, 100])
    assert s.max == 100.0
    assert s.outlier_count == 1


def test_summarize_matches_sort_oracle_1000_samples():
    rng = np.random.default_rng(42)
    vals = rng.uniform(0, 50, 1000)
    s = summarize(vals)
    assert abs(s.q1 - oracles.quantile_sorted(vals, 0.25)) < 1e-12
    assert abs(s.median - oracles.quantile_sorted(vals, 0.50)) < 1e-12
    assert abs(s.q3 - oracles.quantile_sorted(vals, 0.75)) < 1e-12
    iqr = s.q3 - s.q1
    expect_out = sum(1 for v in vals if v < s.q1 - 1.5 * iqr or v > s.q3 + 1.5 * iqr)
    assert s.outlier_count == expect_out
    assert abs(s.std - float(np.sqrt(np.mean((vals - vals.mean()) ** 2)))) < 1e-12


def test_summary_scaling_property():
    rng = np.random.default_rng(1)
    vals = rng.uniform(0, 10, 200)
    lam = 3.7
    a = summarize(vals)
    b = summarize(vals * lam)
    for field in ("mean", "min", "q1", "median", "q3", "max"):
        assert getattr(b, field) == pytest.approx(lam * getattr(a, field), rel=1e-12)
    assert a.outlier_count == b.outlier_count


def test_summarize_empty_raises():
    with pytest.raises(EmptyInput):
        summarize([])


def _toy_pairs(n=6, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        corners = G.CornerSet(
            G.fixed_corners(128).corners + 32.0 + rng.uniform(-8, 8, (4, 2)), "target"
        )
        h = G.from_four_points(G.fixed_corners(128), corners)
        pairs.append(
            AlignmentPair(
                pair_id=f"t{i}",
                target=np.zeros((192, 192, 3)),
                source=np.zeros((128, 128, 3)),
                gt_homography=h,
                gt_corners=corners,
            )
        )
    return pairs


def test_evaluate_ground_truth_is_all_zero():
    pairs = _toy_pairs()
    summary, records = evaluate_ground_truth(pairs)
    assert summary.mean == 0.0 and summary.max == 0.0
    assert all(not r.failed for r in records)
    summary2, _ = evaluate_ground_truth(pairs, use_homography=True)
    assert summary2.max < 1e-9


def test_sentinel_only_input_mean():
    s = summarize([FAILURE_SENTINEL] * 4)
    assert s.mean == FAILURE_SENTINEL


def test_sentinel_dominates_real_errors():
    pairs = _toy_pairs()
    _, records = evaluate_ground_truth(pairs)
    errors = [r.ace for r in records] + [FAILURE_SENTINEL]
    assert max(errors) == FAILURE_SENTINEL


def test_pairs_csv_roundtrip(tmp_path):
    records = [PairRecord("a", 1.25, False), PairRecord("b", FAILURE_SENTINEL, True)]
    path = tmp_path / "pairs.csv"
    write_pairs_csv(path, records)
    back = read_pairs_csv(path)
    assert back == records


def test_summary_json_fields():
    s = summarize([1.0, 2.0, 3.0], metric_kind="squared")
    import json

    d = json.loads(s.to_json())
    assert d["metric_kind"] == "squared"
    assert set(d) == {
        "mean", "std", "min", "q1", "median", "q3", "max",
        "outlier_count", "n_pairs", "metric_kind",
    }


def test_boxplot_svg_structure(tmp_path):
    rng = np.random.default_rng(2)
    vals = list(rng.uniform(0, 5, 40)) + [30.0]  # one clear outlier
    path = tmp_path / "plot.svg"
    boxplot_svg(path, {"test": vals})
    svg = path.read_text()
    assert svg.startswith("<svg")
    assert "<rect" in svg  # the Q1..Q3 box
    assert svg.count("<path") == 1  # exactly one outlier diamond
    with pytest.raises(EmptyInput):
        boxplot_svg(tmp_path / "e.svg", {})
