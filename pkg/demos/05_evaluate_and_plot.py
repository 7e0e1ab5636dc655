"""Corner-error statistics and the box-and-whisker SVG report.

Uses synthetic error lists (no training needed) to show the summary
conventions: type-7 quartiles, IQR outlier fences, and the failure
sentinel that marks pairs where no estimate could be produced.

Run:  python demos/05_evaluate_and_plot.py
"""

from pathlib import Path

import numpy as np

from modalign.evaluator import FAILURE_SENTINEL, boxplot_svg, summarize

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(5)

# A well-behaved aligner: tight unimodal errors.
good = rng.gamma(shape=4.0, scale=0.9, size=400)

# A brittle aligner: usually fine, occasionally far off.
brittle = np.concatenate([rng.gamma(4.0, 2.0, 380), rng.uniform(60, 160, 20)])

# A method that sometimes fails outright: failures carry the sentinel so
# they dominate the tail instead of disappearing from the statistics.
failing = np.concatenate([rng.gamma(4.0, 1.4, 390), [FAILURE_SENTINEL] * 10])

for name, errors in (("good", good), ("brittle", brittle), ("failing", failing)):
    s = summarize(errors)
    print(f"{name:8s} mean {s.mean:8.2f}  median {s.median:6.2f}  "
          f"q1 {s.q1:6.2f}  q3 {s.q3:6.2f}  max {s.max:9.2f}  outliers {s.outlier_count}")

# The box plot mirrors those numbers: box = Q1..Q3, whiskers at the
# 1.5*IQR fences, diamonds for outliers beyond them.
path = out_dir / "comparison_boxplot.svg"
boxplot_svg(path, {"good": good, "brittle": np.clip(brittle, 0, 200)})
print("\nwrote", path)
print("(the failing method is left off the plot; its sentinel squashes every axis)")
