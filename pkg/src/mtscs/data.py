"""Image IO, dataset scanning, crops, and synthetic texture generation.

Images live in [0, 1] as float arrays of shape H x W x C once loaded; 8-bit
quantization happens only on PNG write.  The ``.npy`` pair exists so decoded
reconstructions can round-trip without quantization.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def load_image(path) -> np.ndarray:
    """Decode an image file to float64 H x W x 3 in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_image(path, arr: np.ndarray) -> None:
    """Quantize [0, 1] floats to 8-bit and write by file extension."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"expected H x W x 1 or H x W x 3, got {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    cl = np.clip(arr, 0.0, 1.0)
    Image.fromarray((cl * 255.0 + 0.5).astype(np.uint8)).save(path)


def save_array(path, arr: np.ndarray) -> None:
    np.save(path, np.asarray(arr))


def load_array(path) -> np.ndarray:
    return np.load(path)


def scan_image_dir(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(directory) -> tuple[list[str], list[np.ndarray]]:
    """Load every readable image in a directory (sorted by name).

    Unreadable files are skipped with a warning; an empty result is an error.
    """
    names, images = [], []
    for p in scan_image_dir(directory):
        try:
            images.append(load_image(p))
            names.append(p.stem)
        except Exception as exc:  # noqa: BLE001 - any decode failure skips
            warnings.warn(f"skipping unreadable image {p}: {exc}", stacklevel=2)
    if not images:
        raise FileNotFoundError(f"no readable images in {directory}")
    return names, images


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random ``size x size`` crop; the identity when sizes match."""
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ShapeError(f"image {h}x{w} is smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size]


def synthetic_textures(
    count: int, size: int = 32, channels: int = 3, seed: int = 0
) -> list[np.ndarray]:
    """Deterministic textured images: oriented waves plus a soft blob,
    channel-correlated, normalized into [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    images = []
    for _ in range(count):
        base = np.zeros((size, size))
        for _ in range(int(rng.integers(2, 5))):
            freq = rng.uniform(0.5, 4.0)
            theta = rng.uniform(0.0, 2.0 * np.pi)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.4, 1.0)
            base += amp * np.sin(
                2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase
            )
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        width = rng.uniform(0.08, 0.3)
        base += rng.uniform(0.5, 1.5) * np.exp(
            -((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * width**2)
        )
        img = np.empty((size, size, channels))
        for c in range(channels):
            img[:, :, c] = base + 0.15 * np.sin(
                2.0 * np.pi * rng.uniform(0.5, 2.0) * (xx + yy) + rng.uniform(0, 2 * np.pi)
            )
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
        images.append(0.05 + 0.9 * img)
    return images
