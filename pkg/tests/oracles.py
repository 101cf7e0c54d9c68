"""Independent brute-force oracles used by the tests.

These are deliberately written as plain double loops over pixels / anchors,
separate from the library's vectorized paths, so a test failure points at
exactly one side.
"""
import math

import numpy as np


def bilinear_oracle(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Double-loop bilinear resampler, half-pixel-centered coordinates."""
    h, w = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            x = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(math.floor(y)), int(math.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            top = src[y0, x0] + (src[y0, x1] - src[y0, x0]) * fx
            bot = src[y1, x0] + (src[y1, x1] - src[y1, x0]) * fx
            out[i, j] = top + (bot - top) * fy
    return out


def laplacian_variance_oracle(img: np.ndarray) -> float:
    """Direct convolution + population variance over interior pixels."""
    h, w = img.shape
    responses = []
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            r = (
                img[i - 1, j] + img[i + 1, j] + img[i, j - 1] + img[i, j + 1]
                - 4.0 * img[i, j]
            )
            responses.append(r)
    responses = np.array(responses)
    return float(np.mean((responses - responses.mean()) ** 2))


def entropy_oracle(img: np.ndarray) -> float:
    """Histogram entropy via an explicit counting dict."""
    counts = {}
    total = 0
    for v in img.ravel():
        b = int(math.floor(v * 255.999))
        counts[b] = counts.get(b, 0) + 1
        total += 1
    h = 0.0
    for c in counts.values():
        p = c / total
        h -= p * math.log2(p)
    return h


def rbf_weights_oracle(s: float, anchors, sigma: float) -> np.ndarray:
    """Scalar-by-scalar evaluation of the Gaussian soft-assignment."""
    us = [math.exp(-((s - p) ** 2) / (2.0 * sigma * sigma)) for p in anchors]
    z = sum(us)
    return np.array([u / z for u in us])


def box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 mean filter with edge replication."""
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    acc += img[min(max(i + di, 0), h - 1), min(max(j + dj, 0), w - 1)]
            out[i, j] = acc / 9.0
    return out


def filter_oracle(records, t):
    """Brute-force threshold filter over (id, scores-dict) records."""
    kept = []
    for rec in records:
        q = rec.quality
        if (
            q.aes >= t.aes_min
            and q.wat <= t.wat_max
            and q.cla >= t.cla_min
            and q.ent >= t.ent_min
            and t.luma_min <= q.luma <= t.luma_max
        ):
            kept.append(rec.id)
    return kept
