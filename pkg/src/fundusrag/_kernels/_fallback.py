"""Pure-Python (numpy) kernels; semantics identical to the compiled core.

Accumulation orders are chosen to match the compiled loops exactly so the
two backends agree bit-for-bit on float64 results.
"""

from __future__ import annotations

import numpy as np


def _pad_edge(img: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, int, int]:
    mh, mw = mask.shape
    cy, cx = (mh - 1) // 2, (mw - 1) // 2
    padded = np.pad(img, ((cy, mh - 1 - cy), (cx, mw - 1 - cx)), mode="edge")
    return padded, cy, cx


def erode_u8(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    h, w = img.shape
    padded, _, _ = _pad_edge(img, mask)
    out: np.ndarray | None = None
    for dy, dx in zip(*np.nonzero(mask)):
        view = padded[dy : dy + h, dx : dx + w]
        out = view.copy() if out is None else np.minimum(out, view, out=out)
    assert out is not None
    return out


def dilate_u8(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    h, w = img.shape
    padded, _, _ = _pad_edge(img, mask)
    out: np.ndarray | None = None
    for dy, dx in zip(*np.nonzero(mask)):
        view = padded[dy : dy + h, dx : dx + w]
        out = view.copy() if out is None else np.maximum(out, view, out=out)
    assert out is not None
    return out


def resample_rows(src: np.ndarray, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted gather along axis 0: out[o, x] = sum_t w[o, t] * src[idx[o, t], x]."""
    out_h, taps = idx.shape
    out = np.zeros((out_h, src.shape[1]), dtype=np.float64)
    for t in range(taps):
        out += weights[:, t : t + 1] * src[idx[:, t], :]
    return out


def rotate_bilinear(src: np.ndarray, cos_t: float, sin_t: float) -> np.ndarray:
    """Rotate about the image center; out-of-bounds source taps read as 0."""
    h, w = src.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx
    dy = ys - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside, vals, 0.0)

    out = ((1.0 - fy) * (1.0 - fx)) * tap(y0, x0)
    out += ((1.0 - fy) * fx) * tap(y0, x0 + 1)
    out += (fy * (1.0 - fx)) * tap(y0 + 1, x0)
    out += (fy * fx) * tap(y0 + 1, x0 + 1)
    return out


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    """Longest-common-subsequence length via the bit-parallel row recurrence.

    Rows are carried in one Python big integer per step, giving O(n*m/w)
    word operations instead of the O(n*m) table walk.
    """
    n = len(a)
    if n == 0 or len(b) == 0:
        return 0
    match: dict[int, int] = {}
    for i, sym in enumerate(a.tolist()):
        match[sym] = match.get(sym, 0) | (1 << i)
    row = 0
    for sym in b.tolist():
        x = row | match.get(sym, 0)
        row = x & ~(x - ((row << 1) | 1))
    return bin(row & ((1 << n) - 1)).count("1")
