"""8-bit PNG loading and saving with [0, 1] float arrays in memory."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError


def load_image(path, channels: int | None = None) -> np.ndarray:
    """Load a PNG (or any Pillow-readable image) as (H, W, C) floats in [0, 1].

    Grayscale files come back with a single channel; pass channels=3 to
    replicate grayscale into three planes or to drop an alpha channel.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB") if channels == 3 else im
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"cannot decode image file {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if channels == 3 and arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if channels is not None and arr.shape[2] != channels:
        raise FormatError(f"{path}: expected {channels} channels, got {arr.shape[2]}")
    return arr


def save_image(path, img: np.ndarray) -> None:
    """Save an (H, W, C) float array in [0, 1] as an 8-bit PNG."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got {img.shape}")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(data).save(path, format="PNG")
