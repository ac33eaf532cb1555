"""Saliency evaluation: PR curves, F-measure, Otsu adaptive F, MAE and weighted F."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import correlate

N_THRESHOLDS = 256
DEFAULT_BETA_SQ = 0.3
WF_BETA_SQ = 1.0
WF_GAUSS_SIZE = 7
WF_GAUSS_SIGMA = 5.0
WF_DECAY = math.log(0.5) / 5


def _check_pair(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shapes {a.shape} and {b.shape} differ")


def as_mask(gt) -> np.ndarray:
    return np.asarray(gt) > 0.5


def binarize_at(saliency, threshold: float) -> np.ndarray:
    """Boolean mask of pixels with value >= threshold."""
    return np.asarray(saliency) >= threshold


def precision_recall(pred, gt) -> tuple[float, float]:
    """Precision and recall of a binary prediction.

    With no predicted positives, precision is 1 if the ground truth is also
    empty and 0 otherwise.  With an empty ground truth, recall is 1.
    """
    pred, gt = as_mask(pred), as_mask(gt)
    _check_pair(pred, gt, "precision_recall")
    tp = int(np.count_nonzero(pred & gt))
    n_pred = int(np.count_nonzero(pred))
    n_gt = int(np.count_nonzero(gt))
    if n_pred == 0:
        precision = 1.0 if n_gt == 0 else 0.0
    else:
        precision = tp / n_pred
    recall = 1.0 if n_gt == 0 else tp / n_gt
    return precision, recall


def f_measure(precision: float, recall: float, beta_sq: float = DEFAULT_BETA_SQ) -> float:
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / denom


def mae(saliency, gt) -> float:
    s = np.asarray(saliency, dtype=np.float64)
    g = as_mask(gt).astype(np.float64)
    _check_pair(s, g, "mae")
    return float(np.abs(s - g).mean())


def quantize(saliency) -> np.ndarray:
    """Map [0, 1] values onto 256 equal-width bins (1.0 lands in the top bin)."""
    s = np.asarray(saliency, dtype=np.float64)
    return np.minimum((s * N_THRESHOLDS).astype(np.int64), N_THRESHOLDS - 1)


def between_class_variance(hist: np.ndarray) -> np.ndarray:
    """w0 * w1 * (mu0 - mu1)^2 for the split before each bin k = 0..255.

    Class 0 holds bins < k, class 1 bins >= k.  Splits with an empty class
    score 0.
    """
    hist = np.asarray(hist, dtype=np.float64)
    levels = np.arange(len(hist))
    total = hist.sum()
    c0 = np.concatenate([[0.0], np.cumsum(hist)[:-1]])
    s0 = np.concatenate([[0.0], np.cumsum(hist * levels)[:-1]])
    c1 = total - c0
    s1 = (hist * levels).sum() - s0
    var = np.zeros(len(hist))
    ok = (c0 > 0) & (c1 > 0)
    var[ok] = (c0[ok] / total) * (c1[ok] / total) * (s0[ok] / c0[ok] - s1[ok] / c1[ok]) ** 2
    return var


def otsu_threshold(saliency) -> float:
    """Bin boundary k / 256 maximizing between-class variance (lowest k on ties).

    A map that falls into a single bin returns that bin's lower boundary.
    """
    q = quantize(saliency)
    hist = np.bincount(q.ravel(), minlength=N_THRESHOLDS).astype(np.float64)
    occupied = np.flatnonzero(hist)
    if len(occupied) == 1:
        return occupied[0] / N_THRESHOLDS
    var = between_class_variance(hist)
    return int(np.argmax(var)) / N_THRESHOLDS


def pr_thresholds(n: int = N_THRESHOLDS) -> np.ndarray:
    """``n`` evenly spaced thresholds k / n, k = 1..n.

    Zero is left out: at t = 0 every pixel is predicted salient, which says
    nothing about the map and keeps a perfect map from scoring F = 1.
    """
    if n < 2:
        raise ValueError("need at least two thresholds")
    return np.arange(1, n + 1) / n


def pr_curve(saliency, gt, n_thresholds: int = N_THRESHOLDS) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at each threshold of ``pr_thresholds``."""
    s = np.asarray(saliency, dtype=np.float64)
    g = as_mask(gt)
    _check_pair(s, g, "pr_curve")
    thresholds = pr_thresholds(n_thresholds)
    precision = np.empty(len(thresholds))
    recall = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        precision[i], recall[i] = precision_recall(s >= t, g)
    return precision, recall


# ---------------------------------------------------------------------------
# distance transform


def _lower_envelope(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-D squared distance transform of sampled function ``f`` (inf = no site).

    Returns the transformed values and, for each query, the winning site.
    Among equidistant sites the smallest index wins.
    """
    n = len(f)
    d = np.full(n, np.inf)
    arg = np.full(n, -1, dtype=np.int64)
    sites = [q for q in range(n) if np.isfinite(f[q])]
    if not sites:
        return d, arg
    v = [sites[0]]
    z = [-np.inf, np.inf]
    for q in sites[1:]:
        while True:
            r = v[-1]
            s = ((f[q] + q * q) - (f[r] + r * r)) / (2 * q - 2 * r)
            if s > z[-2]:
                break
            v.pop()
            z.pop()
        v.append(q)
        z[-1] = s
        z.append(np.inf)
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
        arg[q] = v[k]
    return d, arg


def distance_transform(mask) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean distance to the nearest foreground pixel, and its flat index.

    Two passes of squared distance transforms (columns, then rows).  Ties are
    broken toward the smallest column, then the smallest row.
    """
    fg = as_mask(mask)
    if fg.ndim != 2:
        raise ValueError(f"distance_transform expects a 2-D mask, got shape {fg.shape}")
    if not fg.any():
        raise ValueError("distance_transform: mask has no foreground pixel")
    h, w = fg.shape
    col_d = np.full((h, w), np.inf)
    col_row = np.full((h, w), -1, dtype=np.int64)
    for j in range(w):
        f = np.where(fg[:, j], 0.0, np.inf)
        col_d[:, j], col_row[:, j] = _lower_envelope(f)
    sq = np.empty((h, w))
    index = np.empty((h, w), dtype=np.int64)
    for i in range(h):
        sq[i], cols = _lower_envelope(col_d[i])
        index[i] = col_row[i, cols] * w + cols
    return np.sqrt(sq), index


# ---------------------------------------------------------------------------
# weighted F-measure


def gaussian_kernel(size: int = WF_GAUSS_SIZE, sigma: float = WF_GAUSS_SIGMA) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


def weighted_f(saliency, gt, beta_sq: float = WF_BETA_SQ) -> float:
    """Weighted F-measure with spatially dependent and distance-weighted errors.

    Raises ``ValueError`` when the ground truth has no foreground.
    """
    s = np.asarray(saliency, dtype=np.float64)
    g = as_mask(gt)
    _check_pair(s, g, "weighted_f")
    if not g.any():
        raise ValueError("weighted_f undefined for an empty ground truth")
    err = np.abs(s - g)
    dist, idx = distance_transform(g)
    bg = ~g
    spread = err.copy()
    spread[bg] = err.ravel()[idx[bg]]
    smoothed = correlate(spread, gaussian_kernel(), mode="constant", cval=0.0)
    min_err = err.copy()
    use = g & (smoothed < err)
    min_err[use] = smoothed[use]
    importance = np.ones_like(err)
    importance[bg] = 2 - np.exp(WF_DECAY * dist[bg])
    ew = min_err * importance
    tpw = g.sum() - ew[g].sum()
    fpw = ew[bg].sum()
    recall = 1 - ew[g].mean()
    precision = tpw / (tpw + fpw) if tpw + fpw > 0 else 0.0
    denom = beta_sq * precision + recall
    if denom <= 0:
        return 0.0
    return float((1 + beta_sq) * precision * recall / denom)


# ---------------------------------------------------------------------------
# dataset evaluation


@dataclass
class ImageMetrics:
    name: str
    mean_f: float
    adaptive_precision: float
    adaptive_recall: float
    adaptive_f: float
    adaptive_threshold: float
    mae: float
    weighted_f: Optional[float]  # None when the ground truth is empty
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)


@dataclass
class MetricsReport:
    images: list[ImageMetrics]
    rejected: list[tuple[str, str]]
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    mean_f: float
    adaptive_precision: float
    adaptive_recall: float
    adaptive_f: float
    mae: float
    weighted_f: Optional[float]
    beta_sq: float

    @property
    def wf_skipped(self) -> list[str]:
        return [im.name for im in self.images if im.weighted_f is None]


def evaluate_image(saliency, gt, name: str = "", beta_sq: float = DEFAULT_BETA_SQ,
                   n_thresholds: int = N_THRESHOLDS) -> ImageMetrics:
    s = np.asarray(saliency, dtype=np.float64)
    g = as_mask(gt)
    _check_pair(s, g, f"evaluate {name!r}")
    precision, recall = pr_curve(s, g, n_thresholds)
    fs = [f_measure(p, r, beta_sq) for p, r in zip(precision, recall)]
    t = otsu_threshold(s)
    ap, ar = precision_recall(binarize_at(s, t), g)
    return ImageMetrics(
        name=name,
        mean_f=math.fsum(fs) / len(fs),
        adaptive_precision=ap,
        adaptive_recall=ar,
        adaptive_f=f_measure(ap, ar, beta_sq),
        adaptive_threshold=t,
        mae=mae(s, g),
        weighted_f=weighted_f(s, g) if g.any() else None,
        precision=precision,
        recall=recall,
    )


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def evaluate_dataset(pairs: Sequence, beta_sq: float = DEFAULT_BETA_SQ,
                     n_thresholds: int = N_THRESHOLDS) -> MetricsReport:
    """Evaluate ``(saliency, gt)`` or ``(name, saliency, gt)`` pairs.

    A pair whose shapes disagree is rejected and listed in the report.
    """
    if not pairs:
        raise ValueError("evaluate_dataset needs at least one pair")
    images: list[ImageMetrics] = []
    rejected: list[tuple[str, str]] = []
    for i, pair in enumerate(pairs):
        name, s, g = pair if len(pair) == 3 else (f"{i:04d}", *pair)
        if np.shape(s) != np.shape(g):
            rejected.append((name, f"shape {np.shape(s)} vs ground truth {np.shape(g)}"))
            continue
        images.append(evaluate_image(s, g, name, beta_sq, n_thresholds))
    if not images:
        raise ValueError("no evaluable pairs: " + "; ".join(f"{n}: {why}" for n, why in rejected))
    precision = np.array([math.fsum(col) for col in np.array([im.precision for im in images]).T]) / len(images)
    recall = np.array([math.fsum(col) for col in np.array([im.recall for im in images]).T]) / len(images)
    wfs = [im.weighted_f for im in images if im.weighted_f is not None]
    return MetricsReport(
        images=images,
        rejected=rejected,
        thresholds=pr_thresholds(n_thresholds),
        precision=precision,
        recall=recall,
        mean_f=_mean([im.mean_f for im in images]),
        adaptive_precision=_mean([im.adaptive_precision for im in images]),
        adaptive_recall=_mean([im.adaptive_recall for im in images]),
        adaptive_f=_mean([im.adaptive_f for im in images]),
        mae=_mean([im.mae for im in images]),
        weighted_f=_mean(wfs) if wfs else None,
        beta_sq=beta_sq,
    )
