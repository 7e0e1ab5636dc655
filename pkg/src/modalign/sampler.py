"""Grid generation, grid warping and bilinear resampling.

This is the spatial-transformer machinery: maps are sampled at real-valued
locations with bilinear interpolation, out-of-bounds neighbors contribute
zero, and both the sampled values and their derivatives (with respect to
map values and to sample coordinates) are available so losses can be
backpropagated through the resampling step.

Maps are (H, W, C) arrays indexed [row, column, channel]; sample points are
(x, y) with x = column, y = row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ShapeMismatch
from .geometry import Homography


@dataclass(frozen=True)
class Grid:
    """An n x n array of sample points with a frame tag."""

    coords: np.ndarray  # (n, n, 2), (x, y) per cell
    frame: str

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[0] != c.shape[1] or c.shape[2] != 2:
            raise ShapeMismatch(f"grid coords must be (n, n, 2), got {c.shape}")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.shape[0]


def make_grid(n: int) -> Grid:
    """Rectilinear n x n grid: coords[r][c] = (c, r)."""
    if n < 2:
        raise ValueError("grid needs n >= 2")
    cols, rows = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64))
    return Grid(np.stack([cols, rows], axis=-1), frame="source")


def warp_grid(g: Grid, h: Homography) -> Grid:
    """Map every grid point through ``h``; the result is generally curvilinear."""
    warped = geometry.apply_points(h, g.coords.reshape(-1, 2))
    return Grid(warped.reshape(g.coords.shape), frame="target")


def _check_map(f) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C) map, got shape {f.shape}")
    return f


def _neighbors(h: int, w: int, pts: np.ndarray):
    """Integer neighbors, blend weights and validity masks for each point.

    Returns lists of four (flat index, weight, in-bounds mask) triples in the
    order (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    """
    x = pts[:, 0]
    y = pts[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    out = []
    for dx, dy, wt in (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        flat = np.where(ok, yi * w + xi, 0)
        out.append((flat, wt, ok))
    return out


def sample_points(f, pts) -> np.ndarray:
    """Bilinear samples of map ``f`` at an (N, 2) array of (x, y) points.

    Out-of-bounds neighbors contribute zero, so the function is total.
    Returns (N, C).
    """
    f = _check_map(f)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    h, w, c = f.shape
    flatmap = f.reshape(h * w, c)
    acc = np.zeros((pts.shape[0], c), dtype=np.result_type(f.dtype, np.float64))
    for flat, wt, ok in _neighbors(h, w, pts):
        vals = flatmap[flat] * ok[:, None]
        acc += wt[:, None] * vals
    return acc


def bilinear_sample(f, point) -> np.ndarray:
    """Bilinear sample at a single (x, y) point; returns a (C,) vector."""
    return sample_points(f, np.asarray(point, dtype=np.float64).reshape(1, 2))[0]


def resample(f, g: Grid) -> np.ndarray:
    """Sample ``f`` at every grid location; returns (n, n, C)."""
    f = _check_map(f)
    n = g.n
    out = sample_points(f, g.coords.reshape(-1, 2))
    return out.reshape(n, n, f.shape[2])


def resample_vjp(map_shape, g: Grid, cotangent) -> np.ndarray:
    """Adjoint of :func:`resample` with respect to the map values.

    Given d(loss)/d(resampled output), scatter-adds the bilinear weights
    back into a zero map of ``map_shape``. Exact because resampling is
    linear in the map values.
    """
    h, w, c = map_shape
    cot = np.asarray(cotangent, dtype=np.float64).reshape(-1, c)
    pts = g.coords.reshape(-1, 2)
    dflat = np.zeros((h * w, c), dtype=np.float64)
    for flat, wt, ok in _neighbors(h, w, pts):
        contrib = (wt * ok)[:, None] * cot
        np.add.at(dflat, flat, contrib)
    return dflat.reshape(h, w, c)


def coord_grad(f, pts) -> np.ndarray:
    """Partial derivatives of :func:`sample_points` w.r.t. the coordinates.

    Returns (N, C, 2) holding d(sample)/dx and d(sample)/dy. Bilinear
    interpolation is piecewise linear, so these are exact away from the
    integer lattice.
    """
    f = _check_map(f)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    h, w, c = f.shape
    flatmap = f.reshape(h * w, c)
    x0 = np.floor(pts[:, 0]).astype(np.int64)
    y0 = np.floor(pts[:, 1]).astype(np.int64)
    fx = pts[:, 0] - x0
    fy = pts[:, 1] - y0

    def tex(xi, yi):
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        return flatmap[np.where(ok, yi * w + xi, 0)] * ok[:, None]

    f00 = tex(x0, y0)
    f10 = tex(x0 + 1, y0)
    f01 = tex(x0, y0 + 1)
    f11 = tex(x0 + 1, y0 + 1)
    gx = (f10 - f00) * (1.0 - fy)[:, None] + (f11 - f01) * fy[:, None]
    gy = (f01 - f00) * (1.0 - fx)[:, None] + (f11 - f10) * fx[:, None]
    return np.stack([gx, gy], axis=-1)


def warp_image(img, h: Homography, out_size: tuple[int, int]) -> np.ndarray:
    """Inverse-warp ``img`` through ``h`` onto an out_size = (height, width) canvas.

    Every output pixel q takes the bilinear sample of ``img`` at
    inverse(h)(q), which avoids holes; pixels that back-project outside the
    input fade to zero under the zero-padding policy.
    """
    img = _check_map(img)
    oh, ow = int(out_size[0]), int(out_size[1])
    hinv = geometry.inverse(h)
    cols, rows = np.meshgrid(np.arange(ow, dtype=np.float64), np.arange(oh, dtype=np.float64))
    pts = np.stack([cols.ravel(), rows.ravel()], axis=-1)
    src = geometry.apply_points(hinv, pts)
    vals = sample_points(img, src)
    return vals.reshape(oh, ow, img.shape[2])
