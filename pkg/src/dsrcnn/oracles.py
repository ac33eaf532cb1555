"""Slow reference implementations used to cross-check the fast paths.

Everything here is written with explicit loops over pixels and shares no code
with the vectorized implementations it is compared against.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loop(x, kernel, bias, stride=1, pad=0):
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + w] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = bias[oc]
                    for ic in range(c):
                        for a in range(kh):
                            for d in range(kw):
                                acc += kernel[oc, ic, a, d] * xp[b, ic, i * stride + a, j * stride + d]
                    out[b, oc, i, j] = acc
    return out


def transposed_conv2d_zero_stuffing(x, kernel, bias, stride, output_size):
    """Insert ``stride - 1`` zeros between samples, pad by ``k - 1``, convolve with
    the flipped, channel-swapped kernel, then center-crop."""
    n, c, h, w = x.shape
    _, o, kh, kw = kernel.shape
    sh, sw = h + (h - 1) * (stride - 1), w + (w - 1) * (stride - 1)
    stuffed = np.zeros((n, c, sh + 2 * (kh - 1), sw + 2 * (kw - 1)))
    for i in range(h):
        for j in range(w):
            stuffed[:, :, kh - 1 + i * stride, kw - 1 + j * stride] = x[:, :, i, j]
    flipped = kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    full = conv2d_loop(stuffed, flipped, np.zeros(o))
    out_h, out_w = output_size
    top, left = (full.shape[2] - out_h) // 2, (full.shape[3] - out_w) // 2
    return full[:, :, top : top + out_h, left : left + out_w] + np.asarray(bias).reshape(1, -1, 1, 1)


def max_pool_loop(x):
    n, c, h, w = x.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    out = np.zeros((n, c, oh, ow))
    for b in range(n):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    vals = [x[b, ch, a, d] for a in range(2 * i, min(2 * i + 2, h)) for d in range(2 * j, min(2 * j + 2, w))]
                    out[b, ch, i, j] = max(vals)
    return out


def balanced_bce_loop(pred, gt, clamp=1e-9):
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    n_pos = sum(1 for v in gt if v > 0.5)
    alpha = (len(gt) - n_pos) / len(gt)
    pos_term = 0.0
    neg_term = 0.0
    for p, y in zip(pred, gt):
        p = min(max(p, clamp), 1 - clamp)
        if y > 0.5:
            pos_term += math.log(p)
        else:
            neg_term += math.log(1 - p)
    return -alpha * pos_term - (1 - alpha) * neg_term


def confusion_loop(pred, gt):
    tp = fp = fn = 0
    for p, g in zip(np.asarray(pred).ravel(), np.asarray(gt).ravel()):
        p, g = bool(p), bool(g > 0.5)
        tp += p and g
        fp += p and not g
        fn += g and not p
    return tp, fp, fn


def precision_recall_loop(pred, gt):
    tp, fp, fn = confusion_loop(pred, gt)
    if tp + fp == 0:
        precision = 1.0 if tp + fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


def mae_loop(saliency, gt):
    s = np.asarray(saliency).ravel()
    g = np.asarray(gt).ravel()
    total = 0.0
    for a, b in zip(s, g):
        total += abs(float(a) - float(b > 0.5))
    return total / len(s)


def edt_all_pairs(mask):
    """Distance to, and flat index of, the nearest foreground pixel.

    Ties go to the smallest column, then the smallest row.
    """
    mask = np.asarray(mask) > 0.5
    h, w = mask.shape
    fg = [(r, c) for r in range(h) for c in range(w) if mask[r, c]]
    dist = np.zeros((h, w))
    index = np.zeros((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            best = None
            for r, c in fg:
                key = ((r - i) ** 2 + (c - j) ** 2, c, r)
                if best is None or key < best:
                    best = key
            d2, c, r = best
            dist[i, j] = math.sqrt(d2)
            index[i, j] = r * w + c
    return dist, index


def otsu_scan(saliency, bins=256):
    """Between-class variance for every split k of a ``bins``-level histogram."""
    s = np.asarray(saliency).ravel()
    levels = [min(int(v * bins), bins - 1) for v in s]
    scores = []
    for k in range(bins):
        lo = [q for q in levels if q < k]
        hi = [q for q in levels if q >= k]
        if not lo or not hi:
            scores.append(0.0)
            continue
        w0, w1 = len(lo) / len(levels), len(hi) / len(levels)
        mu0, mu1 = sum(lo) / len(lo), sum(hi) / len(hi)
        scores.append(w0 * w1 * (mu0 - mu1) ** 2)
    return scores


def weighted_f_naive(saliency, gt, beta_sq=1.0, size=7, sigma=5.0):
    s = np.asarray(saliency, dtype=np.float64)
    g = np.asarray(gt) > 0.5
    h, w = g.shape
    err = np.abs(s - g)
    dist, index = edt_all_pairs(g)
    spread = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if g[i, j]:
                spread[i, j] = err[i, j]
            else:
                r, c = divmod(int(index[i, j]), w)
                spread[i, j] = err[r, c]
    r = size // 2
    weights = [[math.exp(-(a * a + b * b) / (2 * sigma * sigma)) for b in range(-r, r + 1)] for a in range(-r, r + 1)]
    norm = sum(sum(row) for row in weights)
    smoothed = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    ii, jj = i + a, j + b
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += weights[a + r][b + r] / norm * spread[ii, jj]
            smoothed[i, j] = acc
    tpw = 0.0
    fpw = 0.0
    fg_err = 0.0
    n_fg = 0
    for i in range(h):
        for j in range(w):
            if g[i, j]:
                e = min(err[i, j], smoothed[i, j])
                fg_err += e
                n_fg += 1
            else:
                e = err[i, j] * (2 - math.exp(math.log(0.5) / 5 * dist[i, j]))
                fpw += e
    tpw = n_fg - fg_err
    recall = 1 - fg_err / n_fg
    precision = tpw / (tpw + fpw) if tpw + fpw > 0 else 0.0
    if beta_sq * precision + recall <= 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / (beta_sq * precision + recall)
