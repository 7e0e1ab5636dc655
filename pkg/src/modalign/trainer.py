"""Two-stage training.

Stage 1 (:func:`train_backbone`) fits the two embedding branches with the
similarity loss: each branch embeds its own modality, the target-frame map
is resampled at ground-truth-warped grid points, and the squared gap to
the source-frame map is driven down with Adam.

Stage 2 (:func:`train_head`) restores a stage-1 checkpoint and fits the
regression block with the head loss (corner distance, or parameter L2 plus
a weighted corner term). The backbone stays frozen by default; when frozen
its eval-mode features are precomputed once per pair, which keeps the
epoch loop cheap.

All randomness (weight init, batch shuffling, dropout) is derived from the
config seed, so a run is reproducible step for step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .datagen import AlignmentPair, load_manifest
from .errors import ConfigError, DegenerateProjection, NonFiniteLoss, ShapeMismatch
from .network import AlignmentNet, ModelConfig, fuse

BACKBONE_LOSSES = ("sim", "mae", "ssim")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    gamma: float = 1.0
    head: str = "corners"
    scale: float = 1.0
    rng_seed: int = 0
    backbone_frozen_in_stage2: bool = True
    checkpoint_dir: str = "checkpoints"
    backbone_loss: str = "sim"
    dropout: float = 0.2
    dtype: str = "float32"
    # global L2 gradient-norm cap; the homography head needs it because a
    # near-degenerate predicted denominator makes corner errors explode
    grad_clip: float | None = None

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0 when set")
        if self.backbone_loss not in BACKBONE_LOSSES:
            raise ConfigError(f"backbone_loss must be one of {BACKBONE_LOSSES}")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self) -> ModelConfig:
        return ModelConfig(head=self.head, scale=self.scale, dropout=self.dropout,
                           dtype=self.dtype)


@dataclass
class TrainReport:
    stage: str
    epoch_losses: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    checkpoint_path: str = ""
    skipped_steps: int = 0
    best_epoch: int = -1
    best_loss: float = float("inf")


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def _stack_pairs(pairs: list[AlignmentPair], dtype):
    rgb = np.stack([p.target for p in pairs]).astype(dtype)
    ir = np.stack([p.source for p in pairs]).astype(dtype)
    return rgb, ir


def _check_pair_sizes(pairs, mc: ModelConfig):
    t, s = mc.target_size, mc.source_size
    for p in pairs:
        if p.target.shape[:2] != (t, t) or p.source.shape[:2] != (s, s):
            raise ShapeMismatch(
                f"pair {p.pair_id}: dataset sizes {p.target.shape[:2]}/{p.source.shape[:2]} "
                f"do not match model sizes {t}/{s}; regenerate data or change scale"
            )


def _emit(log_fn, event: dict):
    if log_fn is not None:
        log_fn(event)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def clip_grads(grads: dict, max_norm: float | None) -> None:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    if max_norm is None:
        return
    total = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


_BACKBONE_LOSS_FNS = {
    "sim": losses.sim_loss,
    "mae": losses.mae_loss,
    "ssim": losses.ssim_loss,
}


def train_backbone(manifest_path, cfg: TrainConfig, log_fn=None) -> TrainReport:
    """Stage 1: fit both embedding branches on the train split.

    Checkpoints the best-epoch branch parameters to
    ``<checkpoint_dir>/backbone.ckpt`` and returns the loss curve.
    """
    cfg.validate()
    mc = cfg.model_config()
    pairs = load_manifest(manifest_path, split="train")
    if not pairs:
        raise ConfigError("train split of the manifest is empty")
    _check_pair_sizes(pairs, mc)

    model = AlignmentNet(mc, seed=cfg.rng_seed)
    rgb_all, ir_all = _stack_pairs(pairs, mc.np_dtype)
    hs = [p.gt_homography for p in pairs]
    loss_fn = _BACKBONE_LOSS_FNS[cfg.backbone_loss]

    branch_params = {
        **{f"rgb.{k}": v for k, v in model.rgb_branch.params().items()},
        **{f"ir.{k}": v for k, v in model.ir_branch.params().items()},
    }
    adam = AdamState()
    shuffle_rng = np.random.default_rng((cfg.rng_seed, 100))

    ckpt_path = Path(cfg.checkpoint_dir) / "backbone.ckpt"
    report = TrainReport(stage="backbone")
    t0 = time.perf_counter()

    def save_best(epoch, loss):
        report.best_epoch = epoch
        report.best_loss = loss
        save_checkpoint(
            ckpt_path,
            model.state_tensors(),
            meta={
                "stage": "backbone",
                "head": mc.head,
                "scale": mc.scale,
                "dropout": mc.dropout,
                "dtype": mc.dtype,
                "backbone_loss": cfg.backbone_loss,
                "epoch": epoch,
                "loss": loss if np.isfinite(loss) else None,
            },
        )

    save_best(-1, float("inf"))  # zero-epoch runs still leave a checkpoint

    for epoch in range(cfg.epochs):
        epoch_losses = []
        for step, idx in enumerate(_batches(len(pairs), cfg.batch_size, shuffle_rng)):
            f_rgb = model.rgb_branch.forward(rgb_all[idx], training=True)
            f_ir = model.ir_branch.forward(ir_all[idx], training=True)
            batch_loss = 0.0
            d_rgb = np.zeros_like(f_rgb, dtype=np.float64)
            d_ir = np.zeros_like(f_ir, dtype=np.float64)
            for j, pair_idx in enumerate(idx):
                lv = loss_fn(f_rgb[j], f_ir[j], hs[pair_idx], with_grad=True)
                batch_loss += lv.value
                d_rgb[j] = lv.grads["f_rgb"]
                d_ir[j] = lv.grads["f_ir"]
            batch_loss /= len(idx)
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(f"stage backbone epoch {epoch} step {step}")
            scale = 1.0 / len(idx)
            model.rgb_branch.backward((d_rgb * scale).astype(f_rgb.dtype))
            model.ir_branch.backward((d_ir * scale).astype(f_ir.dtype))
            grads = {
                **{f"rgb.{k}": v for k, v in model.rgb_branch.grads().items()},
                **{f"ir.{k}": v for k, v in model.ir_branch.grads().items()},
            }
            clip_grads(grads, cfg.grad_clip)
            adam_step(branch_params, grads, adam, cfg.learning_rate)
            epoch_losses.append(batch_loss)
        mean_loss = float(np.mean(epoch_losses))
        report.epoch_losses.append(mean_loss)
        _emit(log_fn, {"event": "epoch", "stage": "backbone", "epoch": epoch,
                       "loss": mean_loss})
        if mean_loss < report.best_loss:
            save_best(epoch, mean_loss)

    report.wall_clock_s = time.perf_counter() - t0
    report.checkpoint_path = str(ckpt_path)
    return report


def train_head(manifest_path, cfg: TrainConfig, backbone_checkpoint, log_fn=None) -> TrainReport:
    """Stage 2: fit the regression block on top of a stage-1 checkpoint.

    With ``backbone_frozen_in_stage2`` (the default) only regression
    parameters move; otherwise branch parameters are fine-tuned jointly.
    If the checkpoint already contains trained regression tensors (from an
    earlier stage-2 run) they are restored too, so training can resume.
    Emits ``<checkpoint_dir>/model_<head>.ckpt``.
    """
    cfg.validate()
    mc = cfg.model_config()
    tensors, meta = load_checkpoint(backbone_checkpoint)
    if meta.get("scale") not in (None, mc.scale):
        raise ConfigError(
            f"checkpoint scale {meta.get('scale')} does not match configured scale {mc.scale}"
        )
    pairs = load_manifest(manifest_path, split="train")
    if not pairs:
        raise ConfigError("train split of the manifest is empty")
    _check_pair_sizes(pairs, mc)

    model = AlignmentNet(mc, seed=cfg.rng_seed)
    model.load_state_tensors(tensors)  # restores reg.* as well when present

    rgb_all, ir_all = _stack_pairs(pairs, mc.np_dtype)
    hs = [p.gt_homography for p in pairs]
    corners = [p.gt_corners for p in pairs]
    frozen = cfg.backbone_frozen_in_stage2

    fused_all = None
    if frozen:
        # eval-mode branch outputs never change, so compute them once
        fused_chunks = []
        chunk = max(1, cfg.batch_size)
        for start in range(0, len(pairs), chunk):
            f_rgb, f_ir = model.embed(
                rgb_all[start : start + chunk], ir_all[start : start + chunk], training=False
            )
            fused_chunks.append(fuse(f_rgb, f_ir))
        fused_all = np.concatenate(fused_chunks, axis=0)

    if frozen:
        train_params = {f"reg.{k}": v for k, v in model.regression.params().items()}
    else:
        train_params = model.named_parameters()
    adam = AdamState()
    shuffle_rng = np.random.default_rng((cfg.rng_seed, 200))
    dropout_rng = np.random.default_rng((cfg.rng_seed, 300))

    ckpt_path = Path(cfg.checkpoint_dir) / f"model_{mc.head}.ckpt"
    report = TrainReport(stage="head")
    t0 = time.perf_counter()

    def save_best(epoch, loss):
        report.best_epoch = epoch
        report.best_loss = loss
        save_checkpoint(
            ckpt_path,
            model.state_tensors(),
            meta={
                "stage": "head",
                "head": mc.head,
                "scale": mc.scale,
                "dropout": mc.dropout,
                "dtype": mc.dtype,
                "gamma": cfg.gamma,
                "epoch": epoch,
                "loss": loss if np.isfinite(loss) else None,
            },
        )

    save_best(-1, float("inf"))

    for epoch in range(cfg.epochs):
        epoch_losses = []
        epoch_h2 = []
        for step, idx in enumerate(_batches(len(pairs), cfg.batch_size, shuffle_rng)):
            if frozen:
                raw = model.regression.forward(fused_all[idx], training=True, rng=dropout_rng)
            else:
                raw = model.forward(rgb_all[idx], ir_all[idx], training=True, rng=dropout_rng)
            batch_loss = 0.0
            d_raw = np.zeros_like(raw, dtype=np.float64)
            try:
                for j, pair_idx in enumerate(idx):
                    lv = losses.total_loss(
                        mc.head,
                        raw[j],
                        hs[pair_idx],
                        corners[pair_idx],
                        gamma=cfg.gamma,
                        source_size=mc.source_size,
                        with_grad=True,
                    )
                    batch_loss += lv.value
                    d_raw[j] = lv.grads["pred"]
                    if mc.head == "homography":
                        epoch_h2.append(losses.h2_loss(raw[j], hs[pair_idx]).value)
            except DegenerateProjection:
                report.skipped_steps += 1
                _emit(log_fn, {"event": "skipped_step", "stage": "head", "epoch": epoch,
                               "step": step, "reason": "degenerate_projection"})
                continue
            batch_loss /= len(idx)
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(f"stage head epoch {epoch} step {step}")
            d_raw = (d_raw / len(idx)).astype(raw.dtype)
            if frozen:
                model.regression.backward(d_raw)
                grads = {f"reg.{k}": v for k, v in model.regression.grads().items()}
            else:
                model.backward(d_raw, include_backbone=True)
                grads = model.named_grads()
            clip_grads(grads, cfg.grad_clip)
            adam_step(train_params, grads, adam, cfg.learning_rate)
            epoch_losses.append(batch_loss)
        if not epoch_losses:
            continue
        mean_loss = float(np.mean(epoch_losses))
        report.epoch_losses.append(mean_loss)
        event = {"event": "epoch", "stage": "head", "epoch": epoch, "loss": mean_loss}
        if epoch_h2:
            event["h2"] = float(np.mean(epoch_h2))
        _emit(log_fn, event)
        if mean_loss < report.best_loss:
            save_best(epoch, mean_loss)

    report.wall_clock_s = time.perf_counter() - t0
    report.checkpoint_path = str(ckpt_path)
    return report
