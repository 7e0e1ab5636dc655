"""Projective transforms from scratch: build, apply, invert, compose, fit.

Run:  python demos/01_homography_playground.py
"""

import numpy as np

from modalign import geometry as G

# A homography is a 3x3 matrix with its bottom-right entry pinned to 1,
# leaving 8 free parameters. It maps source-frame (x, y) points into the
# target frame.
h = G.translation(10.0, 5.0)
print("translation matrix:\n", h.matrix)
print("(0, 0) maps to", G.apply(h, (0, 0)))

# Perspective terms live in the bottom row: they make the denominator
# depend on position, so straight grids become curvilinear.
persp = G.Homography(np.array([1, 0, 0, 0, 1, 0, 0.001, 0, 1.0]))
print("\nwith p7 = 0.001, (100, 0) maps to", G.apply(persp, (100, 0)))

# Four point correspondences pin down all 8 parameters. Here we fit the
# transform taking the 128x128 source square onto an arbitrary quad.
square = G.fixed_corners(128)
quad = G.CornerSet(np.array([[10.0, 20], [150, 15], [160, 170], [5, 160]]), "target")
fit = G.from_four_points(square, quad)
print("\nfitted matrix:\n", np.round(fit.matrix, 6))
print("max corner reproduction error:",
      np.abs(G.apply_points(fit, square.corners) - quad.corners).max(), "px")

# The algebra closes: inverses and compositions stay homographies with
# the (3,3) entry renormalized to 1.
roundtrip = G.compose(G.inverse(fit), fit)
print("\ninverse(fit) . fit  ~ identity, max |delta| =",
      np.abs(roundtrip.p - G.identity().p).max())

rng = np.random.default_rng(0)
pts = rng.uniform(0, 127, (5, 2))
back = G.apply_points(G.inverse(fit), G.apply_points(fit, pts))
print("round-trip error on 5 random points:", np.abs(back - pts).max(), "px")
