import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from modalign.images import save_image


def smooth_field(size, seed, sigma=6.0, channels=3):
    """Band-limited random image in [0.1, 0.9]: blurred white noise."""
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.random((size, size, channels)), sigma=(sigma, sigma, 0))
    lo = img.min(axis=(0, 1), keepdims=True)
    hi = img.max(axis=(0, 1), keepdims=True)
    return 0.1 + 0.8 * (img - lo) / np.maximum(hi - lo, 1e-9)


def pseudo_ir(rgb):
    """A deterministic second modality: inverted luminance with a gamma."""
    lum = 0.5 * rgb[..., 0] + 0.3 * rgb[..., 1] + 0.2 * rgb[..., 2]
    ir = (1.0 - lum) ** 1.5
    return np.repeat(ir[..., None], 3, axis=2)


def write_registered_pairs(directory, n_images, size, seed):
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(n_images):
        rgb = smooth_field(size, seed=seed * 1000 + i, sigma=max(2.0, size / 32))
        save_image(directory / f"scene{i:02d}_rgb.png", rgb)
        save_image(directory / f"scene{i:02d}_ir.png", pseudo_ir(rgb))
    return directory


@pytest.fixture
def registered_pair_dir(tmp_path):
    """Factory writing n registered (rgb, ir) PNG pairs of a given size."""

    def build(n_images=2, size=192, seed=0):
        return write_registered_pairs(
            tmp_path / f"registered_{n_images}_{size}_{seed}", n_images, size, seed
        )

    return build


def build_quarter_dataset(root, n_images=4, pairs_per_image=8, seed=0, test_fraction=0.0):
    """A 48/32 dataset for fast end-to-end runs; returns the manifest path."""
    from modalign.datagen import DatagenConfig, build_dataset

    src = write_registered_pairs(root / "registered", n_images, 48, seed)
    cfg = DatagenConfig(
        target_size=48,
        source_size=32,
        jitter_radius=8.0,
        pairs_per_image=pairs_per_image,
        rng_seed=seed,
        test_fraction=test_fraction,
    )
    return build_dataset(src, root / "dataset", cfg)
