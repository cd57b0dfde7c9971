"""Independent brute-force references used by the tests.

Everything here is written straight from the mathematical definitions with
plain loops, deliberately sharing no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv(x, w, b, stride=1, pad=0):
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for ni in range(n):
        for oi in range(oc):
            for yi in range(oh):
                for xi in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += (
                                    xp[ni, ci, yi * stride + dy, xi * stride + dx]
                                    * w[oi, ci, dy, dx]
                                )
                    out[ni, oi, yi, xi] = acc + b[oi]
    return out


def naive_maxpool(x, window, stride):
    n, c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for yi in range(oh):
                for xi in range(ow):
                    out[ni, ci, yi, xi] = x[
                        ni, ci, yi * stride : yi * stride + window, xi * stride : xi * stride + window
                    ].max()
    return out


def naive_avgpool(x, window, stride):
    n, c, h, w = x.shape
    if window == 0:
        return x.mean(axis=(2, 3), keepdims=True)
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for yi in range(oh):
                for xi in range(ow):
                    out[ni, ci, yi, xi] = x[
                        ni, ci, yi * stride : yi * stride + window, xi * stride : xi * stride + window
                    ].mean()
    return out


def naive_bilinear_resize(img, out_h, out_w):
    """Half-pixel-center bilinear resize of an (h, w) or (h, w, c) array."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, c = img.shape
    out = np.zeros((out_h, out_w, c))
    for oy in range(out_h):
        for ox in range(out_w):
            sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0 = min(int(math.floor(sy)), h - 2) if h > 1 else 0
            x0 = min(int(math.floor(sx)), w - 2) if w > 1 else 0
            y1 = min(y0 + 1, h - 1)
            x1 = min(x0 + 1, w - 1)
            ty, tx = sy - y0, sx - x0
            out[oy, ox] = (
                img[y0, x0] * (1 - ty) * (1 - tx)
                + img[y0, x1] * (1 - ty) * tx
                + img[y1, x0] * ty * (1 - tx)
                + img[y1, x1] * ty * tx
            )
    return out[:, :, 0] if squeeze else out


def naive_distance_map(mask):
    """Per lesion pixel: euclidean distance to the nearest border pixel.

    Border = lesion pixel with a background 4-neighbour, treating the frame
    outside the image as background. Border and background pixels map to 0.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    border = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                if yy < 0 or yy >= h or xx < 0 or xx >= w or not mask[yy, xx]:
                    border.append((y, x))
                    break
    out = np.zeros((h, w))
    if not border:
        return out
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = min((y - by) ** 2 + (x - bx) ** 2 for by, bx in border)
            out[y, x] = math.sqrt(best)
    return out


def naive_confusion(pred, gt):
    tp = tn = fp = fn = 0
    for p, g in zip(np.asarray(pred, dtype=bool).ravel(), np.asarray(gt, dtype=bool).ravel()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def naive_auc_pairs(scores, labels):
    """Mann-Whitney pairwise statistic, ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))
