"""Training objectives, all with analytic gradients.

The backbone losses (similarity, mean-absolute, structural-similarity)
compare the source-frame feature map against the target-frame feature map
resampled at ground-truth-warped grid locations, so their gradients flow
through the bilinear sampler back into both maps. The head losses operate
on the raw 8-vector prediction.

Every loss is non-negative and exactly zero when the prediction (or the
map pair) matches the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, sampler
from .errors import ShapeMismatch
from .geometry import CornerSet, Homography, fixed_corners

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossValue:
    """A scalar loss plus optional gradients keyed by input name."""

    value: float
    grads: dict | None = None

    @property
    def has_grad(self) -> bool:
        return self.grads is not None

    def __float__(self):
        return float(self.value)


def _resampled(f_rgb, f_ir, gt_h: Homography):
    f_rgb = np.asarray(f_rgb, dtype=np.float64)
    f_ir = np.asarray(f_ir, dtype=np.float64)
    if f_ir.ndim != 3 or f_ir.shape[0] != f_ir.shape[1]:
        raise ShapeMismatch(f"source feature map must be square (n,n,C), got {f_ir.shape}")
    if f_rgb.ndim != 3 or f_rgb.shape[2] != f_ir.shape[2]:
        raise ShapeMismatch(
            f"feature maps disagree on channels: {f_rgb.shape} vs {f_ir.shape}"
        )
    grid = sampler.warp_grid(sampler.make_grid(f_ir.shape[0]), gt_h)
    return sampler.resample(f_rgb, grid), f_ir, grid, f_rgb.shape


def sim_loss(f_rgb, f_ir, gt_h: Homography, with_grad: bool = False) -> LossValue:
    """Mean squared difference between the warped-and-resampled target map
    and the source map, averaged over all positions and channels."""
    warped, f_ir, grid, rgb_shape = _resampled(f_rgb, f_ir, gt_h)
    diff = warped - f_ir
    value = float(np.mean(diff * diff))
    if not with_grad:
        return LossValue(value)
    d_warped = 2.0 * diff / diff.size
    return LossValue(
        value,
        grads={
            "f_rgb": sampler.resample_vjp(rgb_shape, grid, d_warped),
            "f_ir": -d_warped,
        },
    )


def mae_loss(f_rgb, f_ir, gt_h: Homography, with_grad: bool = False) -> LossValue:
    """Mean absolute difference variant of the similarity loss."""
    warped, f_ir, grid, rgb_shape = _resampled(f_rgb, f_ir, gt_h)
    diff = warped - f_ir
    value = float(np.mean(np.abs(diff)))
    if not with_grad:
        return LossValue(value)
    d_warped = np.sign(diff) / diff.size
    return LossValue(
        value,
        grads={
            "f_rgb": sampler.resample_vjp(rgb_shape, grid, d_warped),
            "f_ir": -d_warped,
        },
    )


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _valid_corr(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """'valid'-mode correlation of a 2-D image with a small window."""
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", view, win)


def _valid_corr_adjoint(cot: np.ndarray, win: np.ndarray, out_shape) -> np.ndarray:
    """Adjoint of :func:`_valid_corr`: scatter window weights back."""
    k = win.shape[0]
    padded = np.pad(cot, ((k - 1, k - 1), (k - 1, k - 1)))
    # adjoint of correlation is convolution; the window is symmetric
    view = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    out = np.einsum("ijkl,kl->ij", view, win[::-1, ::-1])
    assert out.shape == tuple(out_shape)
    return out


def ssim_index(x: np.ndarray, y: np.ndarray, data_range: float | None = None):
    """Mean windowed structural similarity of two (H, W, C) maps.

    Gaussian window (11x11, sigma 1.5, shrunk to fit small maps), biased
    covariance estimates, averaged over all fully valid window positions
    and channels. Returns (mssim, per-channel cache for the backward pass).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 3:
        raise ShapeMismatch(f"ssim needs equal (H,W,C) maps, got {x.shape} vs {y.shape}")
    if data_range is None:
        lo = min(x.min(), y.min())
        hi = max(x.max(), y.max())
        data_range = float(hi - lo)
    data_range = max(float(data_range), 1e-12)
    size = min(SSIM_WINDOW, x.shape[0], x.shape[1])
    if size % 2 == 0:
        size -= 1
    win = _gaussian_window(size, SSIM_SIGMA)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    caches = []
    total = 0.0
    for ch in range(x.shape[2]):
        xc = x[:, :, ch]
        yc = y[:, :, ch]
        mx = _valid_corr(xc, win)
        my = _valid_corr(yc, win)
        sxx = _valid_corr(xc * xc, win) - mx * mx
        syy = _valid_corr(yc * yc, win) - my * my
        sxy = _valid_corr(xc * yc, win) - mx * my
        a1 = 2.0 * mx * my + c1
        a2 = 2.0 * sxy + c2
        b1 = mx * mx + my * my + c1
        b2 = sxx + syy + c2
        s = (a1 * a2) / (b1 * b2)
        total += float(s.mean())
        caches.append((xc, yc, mx, my, a1, a2, b1, b2, s))
    mssim = total / x.shape[2]
    return mssim, (win, caches, x.shape)


def _ssim_backward(cache, scale: float):
    """Gradients of ``scale * mssim`` w.r.t. both input maps."""
    win, caches, shape = cache
    h, w, channels = shape
    dx = np.zeros(shape)
    dy = np.zeros(shape)
    for ch, (xc, yc, mx, my, a1, a2, b1, b2, s) in enumerate(caches):
        n_pos = s.size
        coeff = scale / (n_pos * channels)
        # partials of S at each window position (s1 = a1/b1, s2 = a2/b2)
        s1 = a1 / b1
        s2 = a2 / b2
        d_mx = 2.0 * (my - mx * s1) * s2 / b1
        d_my = 2.0 * (mx - my * s1) * s2 / b1
        d_sxx = -a1 * a2 / (b1 * b2 * b2)
        d_syy = d_sxx
        d_sxy = 2.0 * a1 / (b1 * b2)
        # chain through mu = w*x, E[x^2] = w*x^2, E[xy] = w*(xy)
        gx_const = d_mx - 2.0 * mx * d_sxx - my * d_sxy
        gy_const = d_my - 2.0 * my * d_syy - mx * d_sxy
        dx[:, :, ch] = coeff * (
            _valid_corr_adjoint(gx_const, win, (h, w))
            + 2.0 * xc * _valid_corr_adjoint(d_sxx, win, (h, w))
            + yc * _valid_corr_adjoint(d_sxy, win, (h, w))
        )
        dy[:, :, ch] = coeff * (
            _valid_corr_adjoint(gy_const, win, (h, w))
            + 2.0 * yc * _valid_corr_adjoint(d_syy, win, (h, w))
            + xc * _valid_corr_adjoint(d_sxy, win, (h, w))
        )
    return dx, dy


def ssim_loss(
    f_rgb, f_ir, gt_h: Homography, with_grad: bool = False, data_range: float | None = None
) -> LossValue:
    """1 - SSIM between the resampled target map and the source map.

    ``data_range`` defaults to the observed joint dynamic range of the two
    compared maps; pass it explicitly to make the loss a fixed function of
    its inputs (the gradient always treats it as a constant).
    """
    warped, f_ir, grid, rgb_shape = _resampled(f_rgb, f_ir, gt_h)
    mssim, cache = ssim_index(warped, f_ir, data_range=data_range)
    value = 1.0 - mssim
    if not with_grad:
        return LossValue(value)
    d_warped, d_ir = _ssim_backward(cache, scale=-1.0)
    return LossValue(
        value,
        grads={
            "f_rgb": sampler.resample_vjp(rgb_shape, grid, d_warped),
            "f_ir": d_ir,
        },
    )


def h2_loss(pred, gt: Homography, with_grad: bool = False) -> LossValue:
    """Mean squared difference over the 8 free homography parameters."""
    pred = np.asarray(pred, dtype=np.float64).reshape(8)
    diff = pred - gt.params
    value = float(np.mean(diff * diff))
    if not with_grad:
        return LossValue(value)
    return LossValue(value, grads={"pred": 2.0 * diff / 8.0})


def ace_loss_corners(pred, gt_corners: CornerSet | np.ndarray, with_grad: bool = False) -> LossValue:
    """Mean squared Euclidean distance between predicted and true corners."""
    pred = np.asarray(pred, dtype=np.float64).reshape(4, 2)
    gt = gt_corners.corners if isinstance(gt_corners, CornerSet) else np.asarray(gt_corners)
    diff = pred - gt.reshape(4, 2)
    value = float(np.sum(diff * diff) / 4.0)
    if not with_grad:
        return LossValue(value)
    return LossValue(value, grads={"pred": (diff / 2.0).reshape(8)})


def _warp_fixed_corners_with_params(params: np.ndarray, n: int):
    """Fixed source corners pushed through raw homography parameters.

    Returns the warped (4, 2) corners plus the per-corner Jacobian
    d(corner)/d(params) of shape (4, 2, 8). Raises DegenerateProjection via
    the geometry layer when a denominator collapses.
    """
    h = Homography(np.append(params, 1.0))
    pts = fixed_corners(n).corners
    warped = geometry.apply_points(h, pts)
    jac = np.zeros((4, 2, 8))
    x, y = pts[:, 0], pts[:, 1]
    d = params[6] * x + params[7] * y + 1.0
    u, v = warped[:, 0], warped[:, 1]
    jac[:, 0, 0] = x / d
    jac[:, 0, 1] = y / d
    jac[:, 0, 2] = 1.0 / d
    jac[:, 0, 6] = -u * x / d
    jac[:, 0, 7] = -u * y / d
    jac[:, 1, 3] = x / d
    jac[:, 1, 4] = y / d
    jac[:, 1, 5] = 1.0 / d
    jac[:, 1, 6] = -v * x / d
    jac[:, 1, 7] = -v * y / d
    return warped, jac


def ace_loss_homography(
    pred, gt: Homography, source_size: int = 128, with_grad: bool = False
) -> LossValue:
    """Corner loss for the homography head.

    The fixed source corners are warped by both the predicted and the true
    parameters; the loss is the mean squared Euclidean corner distance.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(8)
    gt_pts = geometry.apply_points(gt, fixed_corners(source_size).corners)
    pred_pts, jac = _warp_fixed_corners_with_params(pred, source_size)
    diff = pred_pts - gt_pts
    value = float(np.sum(diff * diff) / 4.0)
    if not with_grad:
        return LossValue(value)
    grad = np.einsum("ij,ijk->k", diff / 2.0, jac)
    return LossValue(value, grads={"pred": grad})


def total_loss(
    head: str,
    pred,
    gt_h: Homography,
    gt_corners: CornerSet | np.ndarray,
    gamma: float = 1.0,
    source_size: int = 128,
    with_grad: bool = False,
) -> LossValue:
    """The head objective: corner head trains on the corner loss alone,
    homography head on parameter L2 plus gamma times its corner loss."""
    if head == "corners":
        return ace_loss_corners(pred, gt_corners, with_grad=with_grad)
    if head != "homography":
        raise ValueError(f"unknown head {head!r}")
    h2 = h2_loss(pred, gt_h, with_grad=with_grad)
    ace = ace_loss_homography(pred, gt_h, source_size=source_size, with_grad=with_grad)
    value = h2.value + gamma * ace.value
    if not with_grad:
        return LossValue(value)
    return LossValue(value, grads={"pred": h2.grads["pred"] + gamma * ace.grads["pred"]})
