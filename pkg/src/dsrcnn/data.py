"""Image and mask ingestion, saliency PNG output."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp"}
MASK_THRESHOLD = 128


def list_images(directory) -> dict[str, Path]:
    """Image files in ``directory`` keyed by stem, in sorted order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return {p.stem: p for p in files}


def read_image(path, channels: int = 3) -> np.ndarray:
    """Read an 8-bit image as a ``(1, channels, h, w)`` array in [0, 1].

    Grayscale is replicated to 3 channels; color is converted to luminance for 1.
    """
    with Image.open(path) as im:
        if channels == 1:
            arr = np.asarray(im.convert("L"), dtype=np.float64)[None]
        elif channels == 3:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1)
        else:
            raise ValueError(f"unsupported channel count {channels}")
    return (arr / 255.0)[None]


def read_mask(path) -> np.ndarray:
    """Read a ground-truth mask, thresholded at 128 into {0, 1}."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= MASK_THRESHOLD).astype(np.float64)


def read_saliency(path) -> np.ndarray:
    """Read an 8-bit saliency map as reals in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def quantize_map(saliency: np.ndarray) -> np.ndarray:
    """Round-half-up to 8 bits."""
    s = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * s + 0.5).astype(np.uint8)


def write_saliency(path, saliency: np.ndarray) -> None:
    Image.fromarray(quantize_map(saliency)).save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(path, format="PNG")


def write_image(path, image: np.ndarray) -> None:
    """Write a ``(1, c, h, w)`` or ``(c, h, w)`` array in [0, 1] as an 8-bit PNG."""
    arr = np.asarray(image)
    if arr.ndim == 4:
        arr = arr[0]
    pixels = quantize_map(arr)
    if pixels.shape[0] == 1:
        Image.fromarray(pixels[0]).save(path, format="PNG")
    else:
        Image.fromarray(pixels.transpose(1, 2, 0)).save(path, format="PNG")


@dataclass
class Dataset:
    names: list[str]
    images: list[np.ndarray]
    masks: list[np.ndarray]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.images, self.masks))

    def __len__(self) -> int:
        return len(self.names)


def load_dataset(root, channels: int = 3, min_side: Optional[int] = None) -> Dataset:
    """Load ``root/images`` and ``root/masks``, pairing files by stem.

    Unmatched, unreadable, mismatched or undersized files are skipped and
    listed in ``Dataset.skipped``.
    """
    root = Path(root)
    images = list_images(root / "images")
    masks = list_images(root / "masks")
    ds = Dataset([], [], [])
    for name in sorted(set(images) | set(masks)):
        if name not in masks:
            ds.skipped.append((name, "no matching mask"))
            continue
        if name not in images:
            ds.skipped.append((name, "no matching image"))
            continue
        try:
            image = read_image(images[name], channels)
            mask = read_mask(masks[name])
        except (OSError, ValueError) as exc:
            ds.skipped.append((name, f"unreadable: {exc}"))
            continue
        if image.shape[2:] != mask.shape:
            ds.skipped.append((name, f"image {image.shape[2:]} and mask {mask.shape} differ in size"))
            continue
        if min_side is not None and min(mask.shape) < min_side:
            ds.skipped.append((name, f"smaller than {min_side}x{min_side}"))
            continue
        ds.names.append(name)
        ds.images.append(image)
        ds.masks.append(mask)
    return ds


def write_synthetic_dataset(root, n: int, size: int = 32, seed: int = 0) -> list[str]:
    """Write ``n`` synthetic image/mask pairs under ``root/images`` and ``root/masks``."""
    from .synthetic import make_corpus

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    names = []
    for i, (image, mask) in enumerate(make_corpus(n, size, size, seed=seed)):
        name = f"synth_{i:04d}"
        write_image(root / "images" / f"{name}.png", image)
        write_mask(root / "masks" / f"{name}.png", mask)
        names.append(name)
    return names
