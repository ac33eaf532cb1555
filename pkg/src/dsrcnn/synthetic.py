"""Seeded synthetic saliency data: one random geometric shape per image."""

from __future__ import annotations

import numpy as np

SHAPES = ("rectangle", "ellipse", "triangle")


def shape_mask(rng: np.random.Generator, h: int, w: int, kind: str | None = None) -> np.ndarray:
    kind = kind or SHAPES[rng.integers(len(SHAPES))]
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    ry, rx = rng.uniform(0.15, 0.3) * h, rng.uniform(0.15, 0.3) * w
    if kind == "rectangle":
        mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    elif kind == "ellipse":
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
    elif kind == "triangle":
        # apex up, base at cy + ry
        top, bottom = cy - ry, cy + ry
        half = rx * (yy - top) / (bottom - top)
        mask = (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= half)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return mask.astype(np.float64)


def make_pair(rng: np.random.Generator, h: int = 32, w: int = 32, channels: int = 3,
              noise: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """An image ``(1, c, h, w)`` in [0, 1] and its binary mask ``(h, w)``.

    The shape gets a bright random color, the background a darker one, both
    with Gaussian noise, so the object stands out by contrast.
    """
    mask = shape_mask(rng, h, w)
    fg = rng.uniform(0.55, 1.0, channels)
    bg = rng.uniform(0.0, 0.45, channels)
    image = np.where(mask[None] > 0, fg[:, None, None], bg[:, None, None])
    image = np.clip(image + noise * rng.standard_normal(image.shape), 0.0, 1.0)
    return image[None], mask


def make_corpus(n: int, h: int = 32, w: int = 32, channels: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [make_pair(rng, h, w, channels) for _ in range(n)]
