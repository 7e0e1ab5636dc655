"""The two-branch alignment network.

Two identically structured (but separately parameterized) embedding
branches turn the target image and the lower-resolution source image into
64-channel feature maps at their native resolutions. The source map is
zero-padded to the target map's size (anchored at the top-left origin),
channel-concatenated, and fed through a pooled conv stack plus dense head
that emits 8 numbers: either the four (x, y) corner positions of the
source on the target, or the 8 free homography parameters directly.

A ``scale`` factor of 1, 1/2 or 1/4 shrinks every spatial size and channel
count proportionally so the same code supports quick CPU-sized runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ShapeMismatch
from .geometry import CornerSet, Homography, fixed_corners
from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2x2,
    ReLU,
    ResidualBlock,
    ScaleShift,
    Sequential,
)

BASE_TARGET_SIZE = 192
BASE_SOURCE_SIZE = 128
BASE_BRANCH_CHANNELS = 64
BASE_LEVEL_FILTERS = (32, 64, 64, 128, 128, 256)
BASE_DENSE_UNITS = 1024
OUTPUT_DIM = 8

HEADS = ("corners", "homography")


@dataclass(frozen=True)
class ModelConfig:
    head: str = "corners"
    scale: float = 1.0
    dropout: float = 0.2
    dtype: str = "float32"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.scale not in (1.0, 0.5, 0.25):
            raise ValueError(f"scale must be 1, 0.5 or 0.25, got {self.scale}")

    @property
    def target_size(self) -> int:
        return int(BASE_TARGET_SIZE * self.scale)

    @property
    def source_size(self) -> int:
        return int(BASE_SOURCE_SIZE * self.scale)

    @property
    def branch_channels(self) -> int:
        return int(BASE_BRANCH_CHANNELS * self.scale)

    @property
    def level_filters(self) -> tuple[int, ...]:
        return tuple(int(f * self.scale) for f in BASE_LEVEL_FILTERS)

    @property
    def dense_units(self) -> int:
        return int(BASE_DENSE_UNITS * self.scale)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass(frozen=True)
class NetworkOutput:
    """The raw 8-vector plus enough context to interpret it."""

    raw: np.ndarray
    head: str
    source_size: int

    def corner_array(self) -> np.ndarray:
        """Predicted target-frame corners as a raw (4, 2) array.

        For the homography head the fixed source corners are pushed through
        the predicted transform; that can raise DegenerateProjection for a
        sufficiently wild prediction.
        """
        if self.head == "corners":
            return np.asarray(self.raw, dtype=np.float64).reshape(4, 2)
        h = self.homography()
        return geometry.apply_points(h, fixed_corners(self.source_size).corners)

    def corners(self) -> CornerSet:
        return CornerSet(self.corner_array(), frame="target")

    def homography(self) -> Homography:
        if self.head != "homography":
            raise ValueError("corner-head outputs do not carry homography parameters")
        return Homography(np.append(np.asarray(self.raw, dtype=np.float64), 1.0))


def _head_output_coding(config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed output scale/shift for the final regression stage.

    The shift is the rest point: centered source-box corners for the
    corner head, identity parameters for the homography head. The scale
    matches each output's natural magnitude so a uniform-step optimizer
    moves every parameter at a usable rate; for direct homography
    parameters that spread spans ~4 orders of magnitude (translations in
    pixels vs. perspective terms of order 1/size), which otherwise makes
    the corner objective hopelessly ill-conditioned.
    """
    if config.head == "corners":
        off = (config.target_size - config.source_size) / 2.0
        m = config.source_size - 1.0
        shift = (np.array([[0.0, 0], [m, 0], [m, m], [0, m]]) + off).reshape(-1)
        return np.ones(OUTPUT_DIM), shift
    linear = 0.3
    translate = config.target_size / 8.0
    perspective = 0.5 / config.source_size
    scale = np.array(
        [linear, linear, translate, linear, linear, translate, perspective, perspective]
    )
    shift = np.array([1.0, 0, 0, 0, 1.0, 0, 0, 0])
    return scale, shift


class EmbeddingBranch(Sequential):
    """One modality branch: stride-1 SAME convs at constant width.

    Front conv+bn, three residual double-conv groups, then a conv+bn pair
    and a final linear conv. Spatial size is preserved end to end.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__(
            [
                ("conv_in", Conv2D(3, channels, rng, dtype)),
                ("bn_in", BatchNorm(channels, dtype)),
                ("res1", ResidualBlock(channels, rng, dtype)),
                ("res2", ResidualBlock(channels, rng, dtype)),
                ("res3", ResidualBlock(channels, rng, dtype)),
                ("conv_pen", Conv2D(channels, channels, rng, dtype)),
                ("bn_pen", BatchNorm(channels, dtype)),
                ("conv_out", Conv2D(channels, channels, rng, dtype)),
            ]
        )


class RegressionBlock(Sequential):
    """Six conv levels (two conv-bn-relu sublevels each), pooling after the
    first five, then flatten -> dense(relu) -> dense -> dropout -> dense(8).
    """

    def __init__(
        self,
        in_channels: int,
        in_size: int,
        level_filters: tuple[int, ...],
        dense_units: int,
        dropout: float,
        rng: np.random.Generator,
        dtype=np.float32,
        output_scale=None,
        output_shift=None,
    ):
        named = []
        ch = in_channels
        size = in_size
        for lvl, filters in enumerate(level_filters, start=1):
            for sub in ("a", "b"):
                named += [
                    (f"l{lvl}{sub}.conv", Conv2D(ch, filters, rng, dtype)),
                    (f"l{lvl}{sub}.bn", BatchNorm(filters, dtype)),
                    (f"l{lvl}{sub}.relu", ReLU()),
                ]
                ch = filters
            if lvl < len(level_filters):
                named.append((f"pool{lvl}", MaxPool2x2()))
                size = (size + 1) // 2
        named.append(("flatten", Flatten()))
        flat_dim = size * size * ch
        if output_scale is None:
            output_scale = np.ones(OUTPUT_DIM)
        if output_shift is None:
            output_shift = np.zeros(OUTPUT_DIM)
        named += [
            ("fc1", Dense(flat_dim, dense_units, rng, dtype)),
            ("fc1_relu", ReLU()),
            ("fc2", Dense(dense_units, dense_units, rng, dtype)),
            ("drop", Dropout(dropout)),
            ("out", Dense(dense_units, OUTPUT_DIM, rng, dtype)),
            ("out_scale", ScaleShift(output_scale, output_shift)),
        ]
        super().__init__(named)
        self.in_channels = in_channels
        self.in_size = in_size
        self.flat_dim = flat_dim

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[1:] != (self.in_size, self.in_size, self.in_channels):
            raise ShapeMismatch(
                f"regression expects (N,{self.in_size},{self.in_size},{self.in_channels}), "
                f"got {x.shape}"
            )
        return super().forward(x, training=training, rng=rng)


def fuse(f_rgb: np.ndarray, f_ir: np.ndarray) -> np.ndarray:
    """Zero-pad the smaller map to the bigger one's size (top-left anchored)
    and concatenate along channels. Accepts single maps or batches.
    """
    batched = f_rgb.ndim == 4
    if not batched:
        f_rgb = f_rgb[None]
        f_ir = f_ir[None]
    if f_rgb.ndim != 4 or f_ir.ndim != 4 or f_rgb.shape[3] != f_ir.shape[3]:
        raise ShapeMismatch(f"cannot fuse shapes {f_rgb.shape} and {f_ir.shape}")
    n, h, w, c = f_rgb.shape
    _, hi, wi, _ = f_ir.shape
    if hi > h or wi > w or f_ir.shape[0] != n:
        raise ShapeMismatch(f"cannot fuse shapes {f_rgb.shape} and {f_ir.shape}")
    padded = np.zeros((n, h, w, c), dtype=f_rgb.dtype)
    padded[:, :hi, :wi, :] = f_ir
    out = np.concatenate([f_rgb, padded], axis=3)
    return out if batched else out[0]


def unfuse_grad(d_fused: np.ndarray, ir_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Split a fused-map gradient back into branch-map gradients."""
    c = d_fused.shape[-1] // 2
    hi, wi = ir_size
    d_rgb = d_fused[..., :c]
    d_ir = d_fused[..., :hi, :wi, c:]
    return np.ascontiguousarray(d_rgb), np.ascontiguousarray(d_ir)


class AlignmentNet:
    """Both branches plus the regression block, wired end to end."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        dtype = config.np_dtype
        rng = np.random.default_rng(seed)
        ch = config.branch_channels
        self.rgb_branch = EmbeddingBranch(ch, rng, dtype)
        self.ir_branch = EmbeddingBranch(ch, rng, dtype)
        scale, shift = _head_output_coding(config)
        self.regression = RegressionBlock(
            2 * ch,
            config.target_size,
            config.level_filters,
            config.dense_units,
            config.dropout,
            rng,
            dtype,
            output_scale=scale,
            output_shift=shift,
        )
        # small output weights so the shift (identity transform / centered
        # corners) dominates the first predictions
        dict(self.regression.named_layers)["out"].w *= 0.01

    def _check_image(self, img, size, name):
        if img.ndim != 4 or img.shape[1:] != (size, size, 3):
            raise ShapeMismatch(f"{name} input must be (N,{size},{size},3), got {img.shape}")

    def embed(self, rgb, ir, training=False):
        """Run both branches; returns (f_rgb, f_ir)."""
        self._check_image(rgb, self.config.target_size, "rgb")
        self._check_image(ir, self.config.source_size, "ir")
        dtype = self.config.np_dtype
        f_rgb = self.rgb_branch.forward(np.asarray(rgb, dtype=dtype), training=training)
        f_ir = self.ir_branch.forward(np.asarray(ir, dtype=dtype), training=training)
        return f_rgb, f_ir

    def forward(self, rgb, ir, training=False, rng=None) -> np.ndarray:
        """Full pass; returns the raw (N, 8) prediction batch."""
        f_rgb, f_ir = self.embed(rgb, ir, training=training)
        fused = fuse(f_rgb, f_ir)
        return self.regression.forward(fused, training=training, rng=rng)

    def backward(self, d_raw, include_backbone=True):
        """Backpropagate a (N, 8) cotangent through the cached forward."""
        d_fused = self.regression.backward(d_raw)
        if not include_backbone:
            return None
        s = self.config.source_size
        d_rgb, d_ir = unfuse_grad(d_fused, (s, s))
        self.rgb_branch.backward(d_rgb)
        self.ir_branch.backward(d_ir)
        return None

    def outputs(self, raw_batch: np.ndarray) -> list[NetworkOutput]:
        return [
            NetworkOutput(raw=np.asarray(r, dtype=np.float64), head=self.config.head,
                          source_size=self.config.source_size)
            for r in np.atleast_2d(raw_batch)
        ]

    # parameter bookkeeping -------------------------------------------------

    def _sections(self):
        return {"rgb": self.rgb_branch, "ir": self.ir_branch, "reg": self.regression}

    def named_parameters(self) -> dict:
        out = {}
        for prefix, section in self._sections().items():
            for k, v in section.params().items():
                out[f"{prefix}.{k}"] = v
        return out

    def named_grads(self) -> dict:
        out = {}
        for prefix, section in self._sections().items():
            for k, v in section.grads().items():
                out[f"{prefix}.{k}"] = v
        return out

    def named_state(self) -> dict:
        out = {}
        for prefix, section in self._sections().items():
            for k, v in section.state().items():
                out[f"{prefix}.{k}"] = v
        return out

    def state_tensors(self) -> dict:
        """Everything a checkpoint stores: parameters plus BN buffers."""
        return {**self.named_parameters(), **self.named_state()}

    def load_state_tensors(self, tensors: dict, sections=("rgb", "ir", "reg")):
        for prefix in sections:
            section = self._sections()[prefix]
            sub = {
                k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")
            }
            section.set_params(sub)
