"""Planar projective-transform algebra.

Conventions used throughout the package:

* coordinates are (x, y) with x = column and y = row, origin at the
  top-left pixel center;
* a homography always maps source-frame coordinates to target-frame
  coordinates (the inverse direction is always spelled out via
  :func:`inverse`);
* corner sets are ordered top-left, top-right, bottom-right, bottom-left;
* the parameter vector ``p`` is the row-major flattening of the 3x3
  matrix, with ``p[8]`` pinned to exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, SingularSystem

# Numerical guards; projective algebra is exact apart from these.
DENOM_EPS = 1e-8   # smallest usable homogeneous denominator
DET_EPS = 1e-10    # below this |det| a matrix counts as singular
AREA_EPS = 1.0     # px^2, smallest usable quadrilateral area

CORNER_ORDER = ("top-left", "top-right", "bottom-right", "bottom-left")


def _as_point(c) -> np.ndarray:
    pt = np.asarray(c, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(pt)):
        raise ValueError(f"point has non-finite coordinates: {pt}")
    return pt


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective transform with the (3,3) element fixed to 1.

    ``p`` holds the nine row-major entries. Instances are immutable; all
    constructors renormalize so ``p[8] == 1`` exactly and reject singular
    matrices.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64).reshape(9).copy()
        if not np.all(np.isfinite(p)):
            raise ValueError("homography entries must be finite")
        if p[8] != 1.0:
            raise ValueError("p[8] must be exactly 1; use Homography.from_matrix to renormalize")
        if abs(np.linalg.det(p.reshape(3, 3))) <= DET_EPS:
            raise SingularSystem("homography matrix is singular within DET_EPS")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @classmethod
    def from_matrix(cls, m) -> "Homography":
        """Build from any 3x3 matrix, dividing through by its (3,3) entry."""
        m = np.asarray(m, dtype=np.float64).reshape(3, 3)
        w = m[2, 2]
        if abs(w) < DENOM_EPS:
            raise DegenerateProjection("matrix (3,3) entry too small to renormalize")
        return cls(p=(m / w).reshape(9))

    @property
    def matrix(self) -> np.ndarray:
        return self.p.reshape(3, 3)

    @property
    def params(self) -> np.ndarray:
        """The 8 free parameters (p1..p8)."""
        return self.p[:8]

    def __repr__(self):
        rows = "; ".join(" ".join(f"{v:.6g}" for v in r) for r in self.matrix)
        return f"Homography([{rows}])"


@dataclass(frozen=True)
class CornerSet:
    """Four ordered corner points (TL, TR, BR, BL) in a named frame."""

    corners: np.ndarray
    frame: str

    def __post_init__(self):
        pts = np.asarray(self.corners, dtype=np.float64).reshape(4, 2).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("corner coordinates must be finite")
        if self.frame not in ("source", "target"):
            raise ValueError(f"unknown frame tag: {self.frame!r}")
        if abs(quad_area(pts)) <= AREA_EPS:
            raise ValueError("corner quadrilateral is (near-)degenerate: area <= AREA_EPS")
        if _self_intersects(pts):
            raise ValueError("corner quadrilateral is self-intersecting")
        pts.flags.writeable = False
        object.__setattr__(self, "corners", pts)

    def __iter__(self):
        return iter(self.corners)


def quad_area(pts) -> float:
    """Signed shoelace area of a 4-point polygon in vertex order."""
    pts = np.asarray(pts, dtype=np.float64).reshape(4, 2)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    # proper crossing only; shared endpoints do not count
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _self_intersects(pts: np.ndarray) -> bool:
    # a quad in vertex order is simple iff neither pair of opposite edges crosses
    return _segments_cross(pts[0], pts[1], pts[2], pts[3]) or _segments_cross(
        pts[1], pts[2], pts[3], pts[0]
    )


def fixed_corners(n: int, frame: str = "source") -> CornerSet:
    """Corners of an n x n image: (0,0), (n-1,0), (n-1,n-1), (0,n-1)."""
    m = float(n - 1)
    return CornerSet(np.array([[0.0, 0.0], [m, 0.0], [m, m], [0.0, m]]), frame)


def identity() -> Homography:
    return Homography(np.array([1.0, 0, 0, 0, 1.0, 0, 0, 0, 1.0]))


def translation(tx: float, ty: float) -> Homography:
    return Homography(np.array([1.0, 0, float(tx), 0, 1.0, float(ty), 0, 0, 1.0]))


def apply(h: Homography, c) -> np.ndarray:
    """Map a single (x, y) point through ``h``.

    Computes ((p1*x + p2*y + p3) / d, (p4*x + p5*y + p6) / d) with
    d = p7*x + p8*y + 1. Raises DegenerateProjection when |d| < DENOM_EPS.
    """
    x, y = _as_point(c)
    p = h.p
    d = p[6] * x + p[7] * y + 1.0
    if abs(d) < DENOM_EPS:
        raise DegenerateProjection(f"point ({x}, {y}) projects with near-zero denominator {d}")
    return np.array([(p[0] * x + p[1] * y + p[2]) / d, (p[3] * x + p[4] * y + p[5]) / d])


def apply_points(h: Homography, pts) -> np.ndarray:
    """Vectorized :func:`apply` over an (N, 2) array of points."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    p = h.p
    x, y = pts[:, 0], pts[:, 1]
    d = p[6] * x + p[7] * y + 1.0
    bad = np.abs(d) < DENOM_EPS
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DegenerateProjection(
            f"point ({x[i]}, {y[i]}) projects with near-zero denominator {d[i]}"
        )
    out = np.empty_like(pts)
    out[:, 0] = (p[0] * x + p[1] * y + p[2]) / d
    out[:, 1] = (p[3] * x + p[4] * y + p[5]) / d
    return out


def apply_corners(h: Homography, cs: CornerSet) -> CornerSet:
    """Map all four corners, preserving order; the result is target-frame."""
    return CornerSet(apply_points(h, cs.corners), frame="target")


def compose(a: Homography, b: Homography) -> Homography:
    """The transform equivalent to applying ``b`` first, then ``a``."""
    m = a.matrix @ b.matrix
    if abs(m[2, 2]) < DENOM_EPS:
        raise DegenerateProjection("composed matrix has near-zero (3,3) entry")
    return Homography.from_matrix(m)


def inverse(h: Homography) -> Homography:
    """The inverse transform, renormalized so p[8] = 1."""
    if abs(np.linalg.det(h.matrix)) <= DET_EPS:
        raise SingularSystem("cannot invert: |det| <= DET_EPS")
    return Homography.from_matrix(np.linalg.inv(h.matrix))


def from_four_points(src: CornerSet, dst: CornerSet) -> Homography:
    """Solve for the homography mapping the four src corners onto dst.

    Sets up the standard 8x8 linear system (two rows per correspondence)
    and solves it with partial-pivoted Gaussian elimination.
    """
    s = src.corners
    t = dst.corners
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i in range(4):
        x, y = s[i]
        u, v = t[i]
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]
        rhs[2 * i] = u
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]
        rhs[2 * i + 1] = v
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"four-point system is rank-deficient: {exc}") from exc
    return Homography(np.append(sol, 1.0))
